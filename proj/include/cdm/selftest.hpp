#pragma once

// Fixed-seed property suites run by `cdm selftest`.

#include <cstdint>
#include <string>
#include <vector>

namespace cdm {

struct SuiteResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct SelftestOptions {
  std::uint64_t seed = 20240607;
  /// Mutation hook: run the algebra suites on a Cayley table with one
  /// flipped sign. Every honest suite must then fail.
  bool corrupt_cayley = false;
};

std::vector<SuiteResult> run_selftest(const SelftestOptions& options = {});

}  // namespace cdm
