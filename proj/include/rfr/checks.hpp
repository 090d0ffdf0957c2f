#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfr/oracle.hpp"

// Self-check suite shared by the command-line selftest and the acceptance
// tests. Each check returns a verdict plus the individual measurements it was
// derived from.
namespace rfr::checks {

struct CheckResult {
  CheckResult() = default;
  explicit CheckResult(std::string label) : name(std::move(label)) {}

  std::string name;
  bool pass = true;
  std::vector<std::string> details;

  void expect(bool ok, const std::string& what);
  void add(const oracle::OracleReport& report);
  /// "PASS <name>" or "FAIL <name>" followed by indented details.
  std::string summary(bool verbose) const;
};

/// Production conv2d, partial convolution, adaptive merge and attention
/// against their oracles on `cases` seeded random micro-cases each
/// (relative tolerance 1e-5).
CheckResult oracle_equivalence(std::size_t cases, std::uint64_t seed);

/// Mask-update/dilation equality, monotone hole shrinkage across recurrences,
/// and the 12x12 / 24x24 central-hole fill counts.
CheckResult mask_dynamics(std::uint64_t seed);

/// Double-precision central-difference checks (eps 1e-4, relative error < 1e-4).
CheckResult gradient_checks(std::uint64_t seed);

/// Score normalization, recurrence-0 identity and gate saturation limits.
CheckResult attention_contracts(std::uint64_t seed);

/// Adaptive merge against its oracle on integer inputs, and pairwise
/// differences between the three merge modes.
CheckResult merge_ablation(std::uint64_t seed);

/// Micro-network training run; `steps` defaults to the acceptance length.
CheckResult toy_training(std::uint64_t seed, std::size_t steps = 300);

/// Default 256x256 shape trace, exact parameter count and iter_num invariance.
CheckResult architecture_fidelity(std::uint64_t seed);

/// Bit-identical weights and outputs across identical runs; weight and PNM
/// round trips. Files are written under `scratch_dir`.
CheckResult determinism(std::uint64_t seed, const std::string& scratch_dir);

/// Peak activation bytes strictly decrease from depth 1 to 2 to 3.
CheckResult depth_knob(std::uint64_t seed);

/// Hand-summed parameter count of the default network, row by row.
std::size_t hand_derived_param_count();

}  // namespace rfr::checks
