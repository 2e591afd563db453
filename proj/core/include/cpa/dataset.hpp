#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpa/matrix.hpp"
#include "cpa/rng.hpp"

namespace cpa {

enum class NoiseFamily { StandardNormal, StudentT2 };

std::string to_string(NoiseFamily f);
NoiseFamily noise_family_from_string(const std::string& s);

/// Per-row ground truth for synthetic data: Y = mu + sigma * eps, eps ~ noise.
struct OracleColumns {
  std::vector<double> mu;
  std::vector<double> sigma;
  NoiseFamily noise = NoiseFamily::StandardNormal;

  bool operator==(const OracleColumns&) const = default;
};

struct Dataset {
  Matrix X;
  std::vector<double> y;
  std::optional<OracleColumns> oracle;
  /// Stable row ids, carried through subsetting.
  std::vector<std::size_t> ids;
  std::vector<std::string> feature_names;
  std::string target_name = "y";

  Dataset() = default;
  Dataset(Matrix x, std::vector<double> y_values);

  std::size_t size() const { return y.size(); }
  std::size_t features() const { return X.cols(); }

  Dataset subset(std::span<const std::size_t> rows) const;
  /// Throws DataError when an invariant is broken.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

/// Comma-separated, '.' decimal, mandatory header. Every non-target column
/// becomes a feature in header order.
Dataset load_csv(const std::filesystem::path& path, const std::string& target);
/// Reads an unlabeled feature file (no target column required). When
/// `target` names an existing column it is dropped.
Matrix load_features_csv(const std::filesystem::path& path, const std::string& target,
                         std::vector<std::string>* names = nullptr);
void write_csv(const Dataset& d, const std::filesystem::path& path);
/// Oracle sidecar with columns mu,sigma,noise_family.
void write_oracle_sidecar(const Dataset& d, const std::filesystem::path& path);
void load_oracle_sidecar(Dataset& d, const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

struct SplitPlan {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
  double ratio = 0.5;
  std::uint64_t seed = 0;
};

/// Uniformly random partition with |train| = floor(ratio * n).
SplitPlan split(std::size_t n, double ratio, RngStream rng);
inline SplitPlan split(const Dataset& d, double ratio, RngStream rng) { return split(d.size(), ratio, rng); }

/// K disjoint folds covering 0..n-1; sizes differ by at most one.
std::vector<std::vector<std::size_t>> kfold(std::size_t n, int k, RngStream rng);
inline std::vector<std::vector<std::size_t>> kfold(const Dataset& d, int k, RngStream rng) {
  return kfold(d.size(), k, rng);
}
/// Folds balanced within each class of a binary label vector.
std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const double> labels, int k, RngStream rng);

/// Indices of 0..n-1 not in `fold` (fold assumed sorted or not).
std::vector<std::size_t> complement(std::size_t n, std::span<const std::size_t> fold);

}  // namespace cpa
