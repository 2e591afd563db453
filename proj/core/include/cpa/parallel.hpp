#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <vector>

namespace cpa {

/// Worker cap used by parallel_for when no explicit count is given.
/// Defaults to 1; the CLI sets it from --jobs.
int default_jobs();
void set_default_jobs(int jobs);

/// Runs body(i) for i in [0, n) on up to `jobs` threads (0 means
/// default_jobs()). Calls made from inside a worker run serially. When bodies
/// throw, the exception of the lowest failing index is rethrown after all
/// workers finish, so the outcome never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, int jobs = 0);

/// parallel_for collecting one result per index, in index order.
template <class T, class F>
std::vector<T> parallel_map(std::size_t n, F&& f, int jobs = 0) {
  std::vector<T> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = f(i); }, jobs);
  return out;
}

}  // namespace cpa
