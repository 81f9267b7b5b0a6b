#include "dlmgp/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "dlmgp/errors.hpp"
#include "dlmgp/random.hpp"

namespace dlmgp {

std::string to_string(Task task) {
  switch (task) {
    case Task::kRegression: return "regression";
    case Task::kBinary: return "binary";
    case Task::kCount: return "count";
  }
  return "unknown";
}

Task task_from_string(const std::string& name) {
  for (auto task : {Task::kRegression, Task::kBinary, Task::kCount}) {
    if (to_string(task) == name) return task;
  }
  throw InputError("unknown task '" + name + "'");
}

DataFormat data_format_from_string(const std::string& name) {
  if (name == "csv") return DataFormat::kCsv;
  if (name == "libsvm") return DataFormat::kLibsvm;
  throw InputError("unknown data format '" + name + "'");
}

std::string to_string(DataFormat format) {
  return format == DataFormat::kCsv ? "csv" : "libsvm";
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(first, last - first + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') {
    out = out.substr(1, out.size() - 2);
  }
  return out;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
      current.push_back(c);
    } else if (c == ',' && !quoted) {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(trim(current));
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  const char* end = begin + s.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

bool is_missing(const std::string& s) {
  return s.empty() || s == "?" || s == "NA" || s == "nan" || s == "NaN";
}

double convert_label(double raw, Task task, std::size_t line) {
  const std::string where = " on line " + std::to_string(line);
  if (!std::isfinite(raw)) throw InputError("non-finite label" + where);
  switch (task) {
    case Task::kRegression:
      return raw;
    case Task::kBinary:
      if (raw == 1.0) return 1.0;
      if (raw == 0.0 || raw == -1.0) return 0.0;
      throw InputError("binary label must be 0/1 or -1/1" + where);
    case Task::kCount:
      if (raw < 0.0 || raw != std::floor(raw)) {
        throw InputError("count label must be a non-negative integer" + where);
      }
      return raw;
  }
  return raw;
}

}  // namespace

void Dataset::validate() const {
  if (features.rows() != labels.size()) {
    throw InputError("dataset '" + name + "' has mismatched rows and labels");
  }
  if (!features.allFinite() || !labels.allFinite()) {
    throw InputError("dataset '" + name + "' contains non-finite values");
  }
  for (Index i = 0; i < labels.size(); ++i) {
    convert_label(labels(i), task, static_cast<std::size_t>(i) + 1);
    if (task == Task::kBinary && labels(i) == -1.0) {
      throw InputError("binary labels must be stored as 0/1");
    }
  }
}

Dataset parse_csv(std::istream& in, Task task, const std::string& label_column,
                  const std::string& name) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_fields(line);
      break;
    }
  }
  if (header.empty()) throw InputError("CSV input has no header");

  std::size_t label_idx = header.size() - 1;
  if (!label_column.empty()) {
    auto it = std::find(header.begin(), header.end(), label_column);
    if (it == header.end()) {
      throw InputError("CSV header has no column '" + label_column + "'");
    }
    label_idx = static_cast<std::size_t>(it - header.begin());
  } else {
    for (const char* guess : {"y", "label"}) {
      auto it = std::find(header.begin(), header.end(), guess);
      if (it != header.end()) {
        label_idx = static_cast<std::size_t>(it - header.begin());
        break;
      }
    }
  }

  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw InputError("CSV line " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(header.size()));
    }
    for (const auto& f : fields) {
      if (is_missing(f)) {
        throw InputError("missing value on CSV line " + std::to_string(line_no));
      }
    }
    rows.push_back(std::move(fields));
    row_lines.push_back(line_no);
  }
  if (rows.empty()) throw InputError("CSV input has no data rows");

  // Column plans: numeric columns copy through, categorical columns expand to
  // (categories - 1) indicators.
  struct Column {
    std::size_t source;
    bool numeric = true;
    std::vector<std::string> categories;
  };
  std::vector<Column> columns;
  Index width = 0;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == label_idx) continue;
    Column col{c, true, {}};
    double dummy = 0.0;
    for (const auto& r : rows) {
      if (!parse_double(r[c], dummy)) {
        col.numeric = false;
        break;
      }
    }
    if (!col.numeric) {
      for (const auto& r : rows) {
        if (std::find(col.categories.begin(), col.categories.end(), r[c]) ==
            col.categories.end()) {
          col.categories.push_back(r[c]);
        }
      }
      width += static_cast<Index>(col.categories.size()) - 1;
    } else {
      width += 1;
    }
    columns.push_back(std::move(col));
  }

  Dataset out;
  out.name = name;
  out.task = task;
  out.features = RowMatrix::Zero(static_cast<Index>(rows.size()), width);
  out.labels.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    double raw = 0.0;
    if (!parse_double(r[label_idx], raw)) {
      throw InputError("non-numeric label on CSV line " +
                       std::to_string(row_lines[i]));
    }
    out.labels(static_cast<Index>(i)) = convert_label(raw, task, row_lines[i]);
    Index offset = 0;
    for (const auto& col : columns) {
      if (col.numeric) {
        double v = 0.0;
        parse_double(r[col.source], v);
        if (!std::isfinite(v)) {
          throw InputError("non-finite value on CSV line " +
                           std::to_string(row_lines[i]));
        }
        out.features(static_cast<Index>(i), offset++) = v;
      } else {
        const auto pos = static_cast<Index>(
            std::find(col.categories.begin(), col.categories.end(),
                      r[col.source]) -
            col.categories.begin());
        if (pos > 0) out.features(static_cast<Index>(i), offset + pos - 1) = 1.0;
        offset += static_cast<Index>(col.categories.size()) - 1;
      }
    }
  }
  out.provenance = "csv, label column '" + header[label_idx] + "'";
  return out;
}

Dataset parse_libsvm(std::istream& in, Task task, const std::string& name) {
  struct Row {
    double label;
    std::vector<std::pair<Index, double>> entries;
  };
  std::vector<Row> rows;
  Index width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream tokens(line);
    std::string token;
    if (!(tokens >> token)) continue;
    Row row{};
    double raw = 0.0;
    if (!parse_double(token, raw)) {
      throw InputError("malformed label on libsvm line " +
                       std::to_string(line_no));
    }
    row.label = convert_label(raw, task, line_no);
    while (tokens >> token) {
      const auto colon = token.find(':');
      double idx = 0.0;
      double value = 0.0;
      if (colon == std::string::npos ||
          !parse_double(token.substr(0, colon), idx) ||
          !parse_double(token.substr(colon + 1), value) || idx < 1.0 ||
          idx != std::floor(idx) || !std::isfinite(value)) {
        throw InputError("malformed entry '" + token + "' on libsvm line " +
                         std::to_string(line_no));
      }
      const auto col = static_cast<Index>(idx);
      row.entries.emplace_back(col - 1, value);
      width = std::max(width, col);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("libsvm input has no rows");
  Dataset out;
  out.name = name;
  out.task = task;
  out.features = RowMatrix::Zero(static_cast<Index>(rows.size()), width);
  out.labels.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.labels(static_cast<Index>(i)) = rows[i].label;
    for (const auto& [col, value] : rows[i].entries) {
      out.features(static_cast<Index>(i), col) = value;
    }
  }
  out.provenance = "libsvm";
  return out;
}

Dataset load_dataset(const std::string& path, DataFormat format, Task task,
                     const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset '" + path + "'");
  const std::string base = path.substr(path.find_last_of('/') + 1);
  Dataset out = format == DataFormat::kCsv
                    ? parse_csv(in, task, label_column, base)
                    : parse_libsvm(in, task, base);
  out.provenance += ", file " + path;
  out.validate();
  return out;
}

NormalizationStats compute_stats(const TrainingData& train,
                                 bool normalize_labels) {
  NormalizationStats stats;
  const Index n = train.size();
  if (n == 0) throw InputError("cannot normalize an empty training split");
  stats.feature_mean = train.x.colwise().mean().transpose();
  stats.feature_scale.resize(train.x.cols());
  for (Index k = 0; k < train.x.cols(); ++k) {
    const double var =
        (train.x.col(k).array() - stats.feature_mean(k)).square().mean();
    stats.feature_scale(k) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  stats.labels_normalized = normalize_labels;
  if (normalize_labels) {
    stats.label_mean = train.y.mean();
    const double var = (train.y.array() - stats.label_mean).square().mean();
    stats.label_scale = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return stats;
}

void apply_stats(const NormalizationStats& stats, TrainingData& data) {
  for (Index k = 0; k < data.x.cols(); ++k) {
    data.x.col(k) =
        (data.x.col(k).array() - stats.feature_mean(k)) / stats.feature_scale(k);
  }
  if (stats.labels_normalized) {
    data.y = (data.y.array() - stats.label_mean) / stats.label_scale;
  }
}

DataSplit split_and_normalize(const Dataset& data, std::uint64_t seed) {
  const Index n = data.size();
  Index n_val = 0;
  Index n_test = 0;
  if (data.task == Task::kRegression) {
    n_val = static_cast<Index>(std::floor(0.08 * static_cast<double>(n)));
    n_test = n - static_cast<Index>(std::floor(0.67 * static_cast<double>(n))) -
             n_val;
  } else {
    n_val = static_cast<Index>(std::floor(0.10 * static_cast<double>(n)));
    n_test = std::min<Index>(
        1000, static_cast<Index>(std::floor(0.25 * static_cast<double>(n))));
  }
  const Index n_train = n - n_val - n_test;
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    throw InputError("dataset '" + data.name + "' is too small to split");
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Xoshiro256 rng = make_stream(seed, 0, 0x5B117);
  std::shuffle(order.begin(), order.end(), rng);

  TrainingData all{data.features, data.labels};
  auto take = [&](Index begin, Index count) {
    std::vector<Index> rows(order.begin() + begin, order.begin() + begin + count);
    return all.subset(rows);
  };
  DataSplit split;
  split.train = take(0, n_train);
  split.validation = take(n_train, n_val);
  split.test = take(n_train + n_val, n_test);
  split.stats = compute_stats(split.train, data.task == Task::kRegression);
  apply_stats(split.stats, split.train);
  apply_stats(split.stats, split.validation);
  apply_stats(split.stats, split.test);
  if (data.task == Task::kBinary) split.train_positive_rate = split.train.y.mean();
  return split;
}

namespace {

Dataset sine_inputs(Index n, Xoshiro256& rng, const std::string& name) {
  Dataset out;
  out.name = name;
  out.features.resize(n, 1);
  out.labels.resize(n);
  for (Index i = 0; i < n; ++i) out.features(i, 0) = -2.0 + 4.0 * rng.uniform();
  return out;
}

}  // namespace

Dataset make_sine_regression(Index n, double noise_sd, std::uint64_t seed) {
  Xoshiro256 rng = make_stream(seed, 1, 0x51E);
  Dataset out = sine_inputs(n, rng, "sine");
  out.task = Task::kRegression;
  for (Index i = 0; i < n; ++i) {
    out.labels(i) = std::sin(3.0 * out.features(i, 0)) + noise_sd * rng.normal();
  }
  out.provenance = "synthetic sine regression, seed " + std::to_string(seed);
  return out;
}

Dataset make_sine_probit(Index n, double noise_sd, std::uint64_t seed) {
  Xoshiro256 rng = make_stream(seed, 2, 0x51E);
  Dataset out = sine_inputs(n, rng, "sine-probit");
  out.task = Task::kBinary;
  for (Index i = 0; i < n; ++i) {
    const double latent =
        std::sin(3.0 * out.features(i, 0)) + noise_sd * rng.normal();
    out.labels(i) = latent > 0.0 ? 1.0 : 0.0;
  }
  out.provenance = "synthetic sine with thresholded labels, seed " +
                   std::to_string(seed);
  return out;
}

Dataset make_two_moons(Index n, double noise_sd, std::uint64_t seed) {
  Xoshiro256 rng = make_stream(seed, 3, 0x300);
  Dataset out;
  out.name = "two-moons";
  out.task = Task::kBinary;
  out.features.resize(n, 2);
  out.labels.resize(n);
  const double pi = std::acos(-1.0);
  for (Index i = 0; i < n; ++i) {
    const bool upper = (i % 2) == 0;
    const double t = pi * rng.uniform();
    double px = upper ? std::cos(t) : 1.0 - std::cos(t);
    double py = upper ? std::sin(t) : 0.5 - std::sin(t);
    out.features(i, 0) = px + noise_sd * rng.normal();
    out.features(i, 1) = py + noise_sd * rng.normal();
    out.labels(i) = upper ? 0.0 : 1.0;
  }
  out.provenance = "synthetic two moons, seed " + std::to_string(seed);
  return out;
}

Dataset make_log_rate_poisson(Index n, std::uint64_t seed) {
  Xoshiro256 rng = make_stream(seed, 4, 0x9015);
  Dataset out = sine_inputs(n, rng, "poisson");
  out.task = Task::kCount;
  for (Index i = 0; i < n; ++i) {
    const double rate = std::exp(1.0 + std::sin(2.0 * out.features(i, 0)));
    std::poisson_distribution<int> draw(rate);
    out.labels(i) = draw(rng);
  }
  out.provenance = "synthetic log-rate poisson, seed " + std::to_string(seed);
  return out;
}

Dataset make_synthetic(const std::string& kind, Index n, double noise_sd,
                       std::uint64_t seed) {
  if (n < 10) throw InputError("synthetic data sets need at least 10 rows");
  if (kind == "sine") return make_sine_regression(n, noise_sd, seed);
  if (kind == "sine-probit") return make_sine_probit(n, noise_sd, seed);
  if (kind == "two-moons") return make_two_moons(n, noise_sd, seed);
  if (kind == "poisson") return make_log_rate_poisson(n, seed);
  throw InputError("unknown synthetic data set '" + kind + "'");
}

}  // namespace dlmgp
