#include "cpa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "cpa/dataset.hpp"
#include "cpa/error.hpp"
#include "cpa/json_number.hpp"

namespace cpa {

namespace {
std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}
}  // namespace

// ---------------------------------------------------------------- CVI

CviReport cvi_report(std::span<const double> etas, double alpha, double gamma) {
  if (etas.empty()) throw DataError("cvi_report: no reliability values");
  if (!(gamma >= 0 && gamma <= 1)) throw ConfigError("cvi_report: gamma must lie in [0, 1]");
  const double t = 1.0 - alpha;
  const double lo = (1.0 - gamma) * t, hi = (1.0 + gamma) * t;
  CviReport r;
  r.alpha = alpha;
  r.gamma = gamma;
  r.n_eval = etas.size();
  double under_sum = 0, over_sum = 0;
  std::size_t under = 0, over = 0;
  for (double e : etas) {
    const double d = e - t;
    r.cvi += std::abs(d);
    r.cvi_u += std::max(0.0, -d);
    r.cvi_o += std::max(0.0, d);
    if (e < lo) {
      ++under;
      under_sum += std::max(0.0, -d);
    }
    if (e > hi) {
      ++over;
      over_sum += std::max(0.0, d);
    }
  }
  const double n = static_cast<double>(etas.size());
  r.cvi /= n;
  r.cvi_u /= n;
  r.cvi_o /= n;
  r.pi_minus = static_cast<double>(under) / n;
  r.pi_plus = static_cast<double>(over) / n;
  r.cmu = under ? under_sum / static_cast<double>(under) : 0.0;
  r.cmo = over ? over_sum / static_cast<double>(over) : 0.0;
  return r;
}

nlohmann::json CviReport::to_json() const {
  return {{"cvi", cvi},           {"cvi_u", cvi_u}, {"cvi_o", cvi_o}, {"pi_minus", pi_minus},
          {"pi_plus", pi_plus},   {"cmu", cmu},     {"cmo", cmo},     {"alpha", alpha},
          {"gamma", gamma},       {"n_eval", n_eval}};
}

// ---------------------------------------------------------------- CVP

CvpCurve cvp_curve(std::span<const double> etas, double alpha) {
  if (etas.empty()) throw DataError("cvp_curve: no reliability values");
  CvpCurve c;
  c.target = 1.0 - alpha;
  c.q.assign(etas.begin(), etas.end());
  std::sort(c.q.begin(), c.q.end());
  const std::size_t n = c.q.size();
  c.p.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.p[i] = static_cast<double>(i + 1) / static_cast<double>(n);
  return c;
}

double CvpCurve::area_below() const {
  double s = 0;
  for (double v : q) s += std::max(0.0, -(v - target));
  return s / static_cast<double>(q.size());
}

double CvpCurve::area_above() const {
  double s = 0;
  for (double v : q) s += std::max(0.0, v - target);
  return s / static_cast<double>(q.size());
}

double CvpCurve::crossing() const {
  for (std::size_t i = 0; i < q.size(); ++i)
    if (q[i] >= target) return p[i];
  return 1.0;
}

void CvpCurve::write_csv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << "p,q,target\n";
  for (std::size_t i = 0; i < q.size(); ++i)
    out << format_double(p[i]) << ',' << format_double(q[i]) << ',' << format_double(target) << '\n';
}

double cvp_w1(std::span<const double> etas_a, std::span<const double> etas_b) {
  if (etas_a.empty() || etas_b.empty()) throw ConfigError("cvp_w1: empty curve");
  std::vector<double> a(etas_a.begin(), etas_a.end()), b(etas_b.begin(), etas_b.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // Integrate |Q_a - Q_b| exactly over the merged breakpoints i/na and j/nb.
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double p = 0, s = 0;
  while (i < a.size() && j < b.size()) {
    const double pa = static_cast<double>(i + 1) / na, pb = static_cast<double>(j + 1) / nb;
    const double next = std::min(pa, pb);
    s += (next - p) * std::abs(a[i] - b[j]);
    p = next;
    if (pa <= next) ++i;
    if (pb <= next) ++j;
  }
  return s;
}

// ---------------------------------------------------------------- marginal

std::vector<double> coverage_labels(std::span<const Interval> intervals, std::span<const double> y) {
  if (intervals.size() != y.size()) throw ConfigError("coverage_labels: length mismatch");
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = intervals[i].contains(y[i]) ? 1.0 : 0.0;
  return out;
}

MarginalStats marginal_stats(std::span<const Interval> intervals, std::span<const double> y) {
  if (y.empty()) throw DataError("marginal_stats: empty test set");
  const auto labels = coverage_labels(intervals, y);
  MarginalStats m;
  for (std::size_t i = 0; i < y.size(); ++i) {
    m.coverage += labels[i];
    const double w = intervals[i].width();
    if (std::isinf(w)) m.infinite_length = true;
    m.avg_length += w;
  }
  const double n = static_cast<double>(y.size());
  m.coverage /= n;
  m.avg_length = m.infinite_length ? std::numeric_limits<double>::infinity() : m.avg_length / n;
  return m;
}

MarginalStats marginal_stats(const IntervalPredictor& pred, const Dataset& test) {
  const auto iv = pred.predict(test.X);
  return marginal_stats(iv, test.y);
}

nlohmann::json MarginalStats::to_json() const {
  return {{"coverage", coverage}, {"avg_length", json_number(avg_length)}, {"infinite_length", infinite_length}};
}

// ---------------------------------------------------------------- diagram

DiagramBins reliability_diagram(std::span<const double> etas, std::span<const double> labels, int bins) {
  if (bins < 1) throw ConfigError("reliability_diagram: need at least one bin");
  if (etas.size() != labels.size()) throw ConfigError("reliability_diagram: length mismatch");
  const std::size_t n = etas.size(), B = static_cast<std::size_t>(bins);
  if (n < B) throw DataError("reliability_diagram: fewer predictions than bins");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return etas[a] < etas[b]; });
  DiagramBins d;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t lo = b * n / B, hi = (b + 1) * n / B;
    DiagramBin bin;
    bin.count = hi - lo;
    double conf = 0, acc = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      conf += etas[idx[i]];
      acc += labels[idx[i]];
    }
    bin.mean_confidence = conf / static_cast<double>(bin.count);
    bin.accuracy = acc / static_cast<double>(bin.count);
    d.ece += static_cast<double>(bin.count) / static_cast<double>(n) * std::abs(bin.accuracy - bin.mean_confidence);
    d.bins.push_back(bin);
  }
  return d;
}

void DiagramBins::write_csv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << "bin,count,mean_confidence,accuracy\n";
  for (std::size_t b = 0; b < bins.size(); ++b)
    out << b << ',' << bins[b].count << ',' << format_double(bins[b].mean_confidence) << ','
        << format_double(bins[b].accuracy) << '\n';
}

// ---------------------------------------------------------------- WSC

namespace {

struct SlabHit {
  double coverage = 2.0;
  double a = 0, b = 0;
  std::size_t mass = 0;
};

std::vector<double> unit_direction(std::size_t p, RngStream r) {
  std::vector<double> v(p);
  double norm = 0;
  do {
    norm = 0;
    for (auto& x : v) {
      x = r.normal();
      norm += x * x;
    }
  } while (norm == 0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

// Worst slab along one direction over the listed rows. Windows never split
// runs of equal projections, since a slab containing one of them contains all.
SlabHit worst_slab(const Matrix& X, std::span<const double> covered, std::span<const std::size_t> rows,
                   std::span<const double> v, std::size_t min_mass) {
  const std::size_t n = rows.size();
  std::vector<std::pair<double, double>> proj(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = X.row(rows[i]);
    double s = 0;
    for (std::size_t j = 0; j < v.size(); ++j) s += v[j] * x[j];
    proj[i] = {s, covered[rows[i]]};
  }
  std::stable_sort(proj.begin(), proj.end(), [](auto& a, auto& b) { return a.first < b.first; });
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + proj[i].second;
  std::vector<std::size_t> starts, ends;  // group boundaries
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || proj[i].first != proj[i - 1].first) starts.push_back(i);
    if (i + 1 == n || proj[i].first != proj[i + 1].first) ends.push_back(i + 1);
  }
  SlabHit best;
  for (std::size_t s : starts) {
    auto e = std::lower_bound(ends.begin(), ends.end(), s + min_mass);
    for (; e != ends.end(); ++e) {
      const std::size_t count = *e - s;
      const double cov = (prefix[*e] - prefix[s]) / static_cast<double>(count);
      if (cov < best.coverage) best = {cov, proj[s].first, proj[*e - 1].first, count};
    }
  }
  return best;
}

}  // namespace

WscResult wsc(const Matrix& X, std::span<const double> covered, double delta, int n_directions, RngStream rng,
              WscVariant variant) {
  const std::size_t n = X.rows();
  if (covered.size() != n) throw ConfigError("wsc: coverage labels do not match rows");
  if (!(delta > 0 && delta <= 1)) throw ConfigError("wsc: delta must lie in (0, 1]");
  if (n_directions < 1) throw ConfigError("wsc: need at least one direction");
  if (n < 2) throw DataError("wsc: need at least two points");

  std::vector<std::size_t> search(n), eval;
  std::iota(search.begin(), search.end(), 0);
  if (variant == WscVariant::Split) {
    const SplitPlan plan = split(n, 0.5, rng.derive("split"));
    search = plan.train;
    eval = plan.eval;
  }
  const double need = delta * static_cast<double>(search.size());
  if (need < 1.0) throw ConfigError("wsc: delta * n < 1, no slab can be formed");
  const auto min_mass = static_cast<std::size_t>(std::ceil(need - 1e-9));

  WscResult r;
  r.variant = variant;
  SlabHit best;
  for (int d = 0; d < n_directions; ++d) {
    auto v = unit_direction(X.cols(), rng.derive("direction", static_cast<std::uint64_t>(d)));
    const SlabHit h = worst_slab(X, covered, search, v, min_mass);
    if (h.coverage < best.coverage) {
      best = h;
      r.direction = std::move(v);
    }
  }
  r.a = best.a;
  r.b = best.b;
  r.value = best.coverage;
  r.mass = best.mass;
  if (variant == WscVariant::Split) {
    std::size_t inside = 0;
    double hits = 0, all = 0;
    for (auto i : eval) {
      const auto x = X.row(i);
      double s = 0;
      for (std::size_t j = 0; j < x.size(); ++j) s += r.direction[j] * x[j];
      all += covered[i];
      if (s >= r.a && s <= r.b) {
        ++inside;
        hits += covered[i];
      }
    }
    r.mass = inside;
    if (inside == 0) {
      r.flagged = true;
      r.value = all / static_cast<double>(eval.size());
    } else {
      r.value = hits / static_cast<double>(inside);
    }
  }
  return r;
}

nlohmann::json WscResult::to_json() const {
  return {{"wsc", value},
          {"direction", direction},
          {"a", a},
          {"b", b},
          {"variant", variant == WscVariant::InSample ? "in_sample" : "split"},
          {"mass", mass},
          {"flagged", flagged}};
}

// ---------------------------------------------------------------- ranking

std::vector<std::size_t> ranking_from_scores(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  return idx;
}

namespace {
std::vector<std::size_t> positions(std::span<const std::size_t> ranking, std::size_t n) {
  if (ranking.size() != n) throw ConfigError("ranking length does not match the number of items");
  std::vector<std::size_t> pos(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    if (ranking[r] >= n || pos[ranking[r]] != n) throw ConfigError("ranking is not a permutation");
    pos[ranking[r]] = r;
  }
  return pos;
}
}  // namespace

double weighted_kendall_tau(std::span<const double> d_true, std::span<const std::size_t> rank_est,
                            bool* degenerate) {
  const std::size_t n = d_true.size();
  if (n < 2) throw ConfigError("weighted_kendall_tau: need at least two items");
  const auto pos = positions(rank_est, n);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = std::abs(d_true[i] - d_true[j]);
      if (w == 0) continue;
      const bool true_i_first = d_true[i] < d_true[j];
      const bool est_i_first = pos[i] < pos[j];
      num += w * (true_i_first == est_i_first ? 1.0 : -1.0);
      den += w;
    }
  if (degenerate) *degenerate = den == 0;
  return den == 0 ? 0.0 : num / den;
}

double ndcg_at_k(std::span<const double> d_true, std::span<const std::size_t> rank_est, std::size_t k) {
  const std::size_t n = d_true.size();
  positions(rank_est, n);
  if (k == 0) throw ConfigError("ndcg_at_k: k must be >= 1");
  k = std::min(k, n);
  const double dmax = *std::max_element(d_true.begin(), d_true.end());
  std::vector<double> rel(n);
  for (std::size_t i = 0; i < n; ++i) rel[i] = dmax - d_true[i];
  double dcg = 0, idcg = 0;
  std::vector<double> ideal = rel;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  for (std::size_t p = 0; p < k; ++p) {
    const double disc = std::log2(static_cast<double>(p) + 2.0);
    dcg += rel[rank_est[p]] / disc;
    idcg += ideal[p] / disc;
  }
  return idcg == 0 ? 1.0 : dcg / idcg;
}

double hit_at_k(std::span<const std::size_t> rank_true, std::span<const std::size_t> rank_est, std::size_t k) {
  if (rank_true.size() != rank_est.size()) throw ConfigError("hit_at_k: rankings differ in length");
  if (k == 0) throw ConfigError("hit_at_k: k must be >= 1");
  k = std::min(k, rank_true.size());
  std::size_t hits = 0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) hits += rank_true[a] == rank_est[b] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

}  // namespace cpa
