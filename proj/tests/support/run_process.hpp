#pragma once

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace testing_support {

// Runs a shell command line and returns its exit status (-1 if it did not exit normally).
inline int run(const std::string& cmd) {
  const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
  if (raw == -1 || !WIFEXITED(raw)) return -1;
  return WEXITSTATUS(raw);
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("cpa-test-" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

// Regular files under `dir`, relative paths, sorted.
inline std::vector<std::filesystem::path> files_in(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(std::filesystem::relative(e.path(), dir));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace testing_support

namespace testing_support {

// Empty string when both trees hold the same files with the same bytes, otherwise the first difference.
inline std::string tree_difference(const std::filesystem::path& a, const std::filesystem::path& b) {
  const auto fa = files_in(a), fb = files_in(b);
  if (fa != fb) return "file lists differ";
  if (fa.empty()) return "no files written";
  for (const auto& f : fa)
    if (slurp(a / f) != slurp(b / f)) return f.string() + " differs";
  return "";
}

// Runs `bin args` from two fresh working directories with different --jobs
// values, both writing to the relative directory "out", and compares the outputs.
inline std::string jobs_difference(const std::string& bin, const std::string& args, const std::string& name,
                                   int jobs_a = 1, int jobs_b = 3) {
  const auto root = scratch_dir("jobs-" + name);
  std::filesystem::create_directories(root / "a");
  std::filesystem::create_directories(root / "b");
  for (auto [sub, jobs] : {std::pair{"a", jobs_a}, std::pair{"b", jobs_b}}) {
    const int rc = run("cd '" + (root / sub).string() + "' && '" + bin + "' " + args + " --out out --jobs " +
                       std::to_string(jobs));
    if (rc != 0) return "exit status " + std::to_string(rc) + " with --jobs " + std::to_string(jobs);
  }
  return tree_difference(root / "a" / "out", root / "b" / "out");
}

}  // namespace testing_support
