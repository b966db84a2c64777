#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "meningrade/commands.hpp"
#include "meningrade/synth.hpp"

namespace testing_support {

namespace fs = std::filesystem;

// Fresh directory under the build tree's temp area.
inline fs::path temp_dir(const std::string& name) {
  const auto base = fs::temp_directory_path() / "meningrade-tests";
  const auto dir = base / (name + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline std::string slurp(const fs::path& p) { return meningrade::read_text_file(p); }

// Byte comparison of two directory trees.
inline bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return false;
  for (const auto& f : fa)
    if (slurp(a / f) != slurp(b / f)) return false;
  return true;
}

// Small case for review tests: 4 mitoses in one HPF, prominent nucleoli and a
// sheeting region (two features), nothing else.
inline meningrade::SynthParams review_case_params() {
  meningrade::SynthParams p;
  p.seed = 11;
  p.case_id = "review-case";
  p.node_size = 2560;
  p.mitoses = 4;
  p.nucleoli = 2;
  p.sheeting = 1;
  return p;
}

struct ProcessedCase {
  fs::path synth_dir;
  fs::path out_dir;
  meningrade::SynthResult synth;
};

inline ProcessedCase make_processed_case(const std::string& name, const meningrade::SynthParams& p,
                                         int workers = 1) {
  ProcessedCase c;
  const auto root = temp_dir(name);
  c.synth_dir = root / "synth";
  c.out_dir = root / "out";
  c.synth = meningrade::generate_case(p, c.synth_dir);
  meningrade::run_process(c.synth.manifest, c.synth.bindings, meningrade::Config{}, c.out_dir, workers);
  return c;
}

}  // namespace testing_support
