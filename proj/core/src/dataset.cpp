#include "cpa/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cpa/error.hpp"

namespace cpa {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  std::string out(s.substr(b, e - b));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      cells.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    cells.push_back(trim(std::string_view(line).substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

std::string where(const std::filesystem::path& path, std::size_t line, const std::string& column) {
  std::ostringstream os;
  os << path.string() << ": row " << line << ", column '" << column << "'";
  return os.str();
}

double parse_cell(const std::string& cell, const std::filesystem::path& path, std::size_t line,
                  const std::string& column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last) {
    throw DataError(where(path, line, column) + ": non-numeric cell '" + cell + "'");
  }
  if (!std::isfinite(v)) throw DataError(where(path, line, column) + ": NaN/Inf cell '" + cell + "'");
  return v;
}

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

RawTable read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open file");
  RawTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (t.header.empty()) {
      if (lineno == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
      t.header = split_line(line);
      continue;
    }
    auto cells = split_line(line);
    if (cells.size() != t.header.size()) {
      std::ostringstream os;
      os << path.string() << ": row " << lineno << " has " << cells.size() << " cells, header has "
         << t.header.size();
      throw DataError(os.str());
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(lineno);
  }
  if (t.header.empty()) throw DataError(path.string() + ": missing header row");
  return t;
}

}  // namespace

std::string to_string(NoiseFamily f) {
  return f == NoiseFamily::StandardNormal ? "standard-normal" : "student-t2";
}

NoiseFamily noise_family_from_string(const std::string& s) {
  if (s == "standard-normal" || s == "normal") return NoiseFamily::StandardNormal;
  if (s == "student-t2" || s == "t2") return NoiseFamily::StudentT2;
  throw DataError("unknown noise family '" + s + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Dataset::Dataset(Matrix x, std::vector<double> y_values) : X(std::move(x)), y(std::move(y_values)) {
  ids.resize(y.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  feature_names.reserve(X.cols());
  for (std::size_t j = 0; j < X.cols(); ++j) feature_names.push_back("x" + std::to_string(j + 1));
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.X = X.select_rows(rows);
  out.y.reserve(rows.size());
  out.ids.reserve(rows.size());
  for (auto r : rows) {
    out.y.push_back(y[r]);
    out.ids.push_back(ids.empty() ? r : ids[r]);
  }
  if (oracle) {
    OracleColumns o;
    o.noise = oracle->noise;
    for (auto r : rows) {
      o.mu.push_back(oracle->mu[r]);
      o.sigma.push_back(oracle->sigma[r]);
    }
    out.oracle = std::move(o);
  }
  out.feature_names = feature_names;
  out.target_name = target_name;
  return out;
}

void Dataset::validate() const {
  if (X.rows() != y.size()) throw DataError("dataset: X has " + std::to_string(X.rows()) + " rows but y has " +
                                            std::to_string(y.size()));
  if (!ids.empty() && ids.size() != y.size()) throw DataError("dataset: id column length mismatch");
  for (double v : X.data())
    if (!std::isfinite(v)) throw DataError("dataset: non-finite covariate");
  for (double v : y)
    if (!std::isfinite(v)) throw DataError("dataset: non-finite response");
  if (oracle) {
    if (oracle->mu.size() != y.size() || oracle->sigma.size() != y.size())
      throw DataError("dataset: oracle columns must have one entry per row");
    for (double s : oracle->sigma)
      if (!(s > 0.0)) throw DataError("dataset: oracle sigma must be positive");
  }
}

Dataset load_csv(const std::filesystem::path& path, const std::string& target) {
  if (!std::filesystem::exists(path)) throw DataError(path.string() + ": file does not exist");
  RawTable t = read_table(path);
  auto it = std::find(t.header.begin(), t.header.end(), target);
  if (it == t.header.end()) throw DataError(path.string() + ": target column '" + target + "' not found");
  const std::size_t tcol = static_cast<std::size_t>(it - t.header.begin());

  Dataset d;
  d.target_name = target;
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (j != tcol) d.feature_names.push_back(t.header[j]);
  const std::size_t p = d.feature_names.size();
  Matrix X(t.rows.size(), p);
  d.y.resize(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      double v = parse_cell(t.rows[i][j], path, t.line_numbers[i], t.header[j]);
      if (j == tcol)
        d.y[i] = v;
      else
        X(i, c++) = v;
    }
  }
  d.X = std::move(X);
  d.ids.resize(d.y.size());
  std::iota(d.ids.begin(), d.ids.end(), std::size_t{0});
  d.validate();
  return d;
}

Matrix load_features_csv(const std::filesystem::path& path, const std::string& target,
                         std::vector<std::string>* names) {
  if (!std::filesystem::exists(path)) throw DataError(path.string() + ": file does not exist");
  RawTable t = read_table(path);
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (t.header[j] != target) keep.push_back(j);
  if (names) {
    names->clear();
    for (auto j : keep) names->push_back(t.header[j]);
  }
  Matrix X(t.rows.size(), keep.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t c = 0; c < keep.size(); ++c)
      X(i, c) = parse_cell(t.rows[i][keep[c]], path, t.line_numbers[i], t.header[keep[c]]);
  return X;
}

void write_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  for (std::size_t j = 0; j < d.features(); ++j) {
    out << (j < d.feature_names.size() ? d.feature_names[j] : "x" + std::to_string(j + 1)) << ',';
  }
  out << d.target_name << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.features(); ++j) out << format_double(d.X(i, j)) << ',';
    out << format_double(d.y[i]) << '\n';
  }
}

void write_oracle_sidecar(const Dataset& d, const std::filesystem::path& path) {
  if (!d.oracle) throw DataError("dataset has no oracle columns");
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << "mu,sigma,noise_family\n";
  for (std::size_t i = 0; i < d.size(); ++i)
    out << format_double(d.oracle->mu[i]) << ',' << format_double(d.oracle->sigma[i]) << ','
        << to_string(d.oracle->noise) << '\n';
}

void load_oracle_sidecar(Dataset& d, const std::filesystem::path& path) {
  RawTable t = read_table(path);
  if (t.header != std::vector<std::string>{"mu", "sigma", "noise_family"})
    throw DataError(path.string() + ": expected header mu,sigma,noise_family");
  if (t.rows.size() != d.size()) throw DataError(path.string() + ": oracle row count does not match dataset");
  OracleColumns o;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    o.mu.push_back(parse_cell(t.rows[i][0], path, t.line_numbers[i], "mu"));
    o.sigma.push_back(parse_cell(t.rows[i][1], path, t.line_numbers[i], "sigma"));
    NoiseFamily f = noise_family_from_string(t.rows[i][2]);
    if (i == 0)
      o.noise = f;
    else if (f != o.noise)
      throw DataError(path.string() + ": mixed noise families");
  }
  d.oracle = std::move(o);
  d.validate();
}

SplitPlan split(std::size_t n, double ratio, RngStream rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  if (n < 2) throw DataError("split needs at least two rows");
  const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) throw ConfigError("split ratio leaves one side empty");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SplitPlan plan;
  plan.ratio = ratio;
  plan.seed = rng.seed();
  rng.shuffle(perm);
  plan.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  plan.eval.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.eval.begin(), plan.eval.end());
  return plan;
}

std::vector<std::vector<std::size_t>> kfold(std::size_t n, int k, RngStream rng) {
  if (k < 2) throw ConfigError("kfold needs K >= 2");
  if (static_cast<std::size_t>(k) > n) throw ConfigError("kfold: K exceeds the number of rows");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) folds[i % folds.size()].push_back(perm[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const double> labels, int k, RngStream rng) {
  if (k < 2) throw ConfigError("kfold needs K >= 2");
  if (static_cast<std::size_t>(k) > labels.size()) throw ConfigError("kfold: K exceeds the number of rows");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] > 0.5 ? pos : neg).push_back(i);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::size_t slot = 0;
  for (auto i : pos) folds[slot++ % folds.size()].push_back(i);
  for (auto i : neg) folds[slot++ % folds.size()].push_back(i);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::vector<std::size_t> complement(std::size_t n, std::span<const std::size_t> fold) {
  std::vector<char> in(n, 0);
  for (auto i : fold) in[i] = 1;
  std::vector<std::size_t> out;
  out.reserve(n - fold.size());
  for (std::size_t i = 0; i < n; ++i)
    if (!in[i]) out.push_back(i);
  return out;
}

}  // namespace cpa
