#include <gtest/gtest.h>

#include <atomic>
#include <stdexcept>
#include <string>

#include "cpa/parallel.hpp"

using namespace cpa;

TEST(Parallel, MapKeepsIndexOrder) {
  for (int jobs : {1, 2, 4}) {
    auto v = parallel_map<std::size_t>(100, [](std::size_t i) { return i * i; }, jobs);
    for (std::size_t i = 0; i < 100; ++i) ASSERT_EQ(v[i], i * i);
  }
}

TEST(Parallel, EveryIndexRunsOnce) {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; }, 3);
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  parallel_for(0, [](std::size_t) { FAIL(); }, 3);
}

TEST(Parallel, LowestFailingIndexWins) {
  for (int jobs : {1, 2, 4}) {
    try {
      parallel_for(
          50,
          [](std::size_t i) {
            if (i == 7 || i == 31 || i == 44) throw std::runtime_error(std::to_string(i));
          },
          jobs);
      FAIL() << "no exception";
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "7");
    }
  }
}

TEST(Parallel, NestedCallsCompleteAndAreOrdered) {
  auto outer = parallel_map<std::vector<int>>(
      6,
      [](std::size_t i) {
        return parallel_map<int>(5, [i](std::size_t j) { return static_cast<int>(10 * i + j); }, 4);
      },
      3);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(outer[i][j], static_cast<int>(10 * i + j));
}

TEST(Parallel, DefaultJobs) {
  const int before = default_jobs();
  set_default_jobs(3);
  EXPECT_EQ(default_jobs(), 3);
  set_default_jobs(before);
}
