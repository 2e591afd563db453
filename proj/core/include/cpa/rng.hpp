#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cpa {

/// Reproducible random stream identified by (seed, stream_id).
///
/// The generator is xoshiro256** whose 256-bit state is filled by four
/// successive SplitMix64 outputs started from `seed ^ mix(stream_id)`.
/// Floating-point draws use the top 53 bits; normals use Box-Muller with the
/// cosine branch only, so a draw consumes exactly two uniforms. None of the
/// <random> distributions are used, which keeps sequences identical across
/// standard libraries.
///
/// Child streams are derived with `derive(label)`; the parent state is not
/// touched, so derivation order never changes any sequence.
class RngStream {
 public:
  RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  RngStream derive(std::uint64_t label) const;
  RngStream derive(std::string_view label) const;
  RngStream derive(std::string_view label, std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on (0, 1).
  double uniform_open();
  /// Uniform integer on [0, n), unbiased (rejection).
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  /// Student-t with 2 degrees of freedom via its closed-form inverse CDF.
  double student_t2();
  bool bernoulli(double p);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64(std::uint64_t x);
/// FNV-1a 64-bit hash, used to turn string labels into stream ids.
std::uint64_t hash_label(std::string_view label);
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);

}  // namespace cpa
