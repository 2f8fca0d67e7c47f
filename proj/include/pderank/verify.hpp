#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace pderank {

struct VerifyOptions {
  std::int64_t trials = 100;
  std::uint64_t seed = 7;
  std::int64_t dirichlet_samples = 10000;
  // Added to one analytic gradient coordinate before comparison; a nonzero
  // value must make the gradient properties fail.
  double corrupt_gradient = 0.0;
};

struct VerifyRow {
  std::string name;
  bool passed = false;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  std::int64_t cases = 0;
};

struct VerifyReport {
  std::vector<VerifyRow> rows;
  bool all_passed() const;
};

// Randomised oracle property suite. Deterministic for fixed options.
VerifyReport run_verification(const VerifyOptions& options);

void print_report(const VerifyReport& report, std::ostream& out);

}  // namespace pderank
