// Acceptance run: one PASS/FAIL line per criterion, measurements indented
// below it. Exit status is 0 only when every criterion passes.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rfr/checks.hpp"

namespace {

using rfr::checks::CheckResult;

struct Criterion {
  int number;
  std::string title;
  std::function<CheckResult()> run;
  std::optional<double> limit_seconds;
};

}  // namespace

int main(int argc, char** argv) {
  namespace checks = rfr::checks;
  const std::uint64_t seed = 0;
  const std::string scratch = argc > 1 ? argv[1] : "acceptance-scratch";

  const std::vector<Criterion> criteria{
      {1, "oracle equivalence", [&] { return checks::oracle_equivalence(100, seed); }, 120.0},
      {2, "mask dynamics", [&] { return checks::mask_dynamics(seed); }, 60.0},
      {3, "gradient checks", [&] { return checks::gradient_checks(seed); }, 300.0},
      {4, "attention contracts", [&] { return checks::attention_contracts(seed); }, std::nullopt},
      {5, "adaptive merge vs ablations", [&] { return checks::merge_ablation(seed); }, std::nullopt},
      {6, "toy training", [&] { return checks::toy_training(seed, 300); }, 900.0},
      {7, "architecture fidelity", [&] { return checks::architecture_fidelity(seed); }, std::nullopt},
      {8, "determinism and round trips", [&] { return checks::determinism(seed, scratch); }, std::nullopt},
      {9, "depth knob", [&] { return checks::depth_knob(seed); }, std::nullopt},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r = c.run();
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char timing[96];
    if (c.limit_seconds) {
      std::snprintf(timing, sizeof timing, "runtime %.1fs, limit %.0fs", seconds, *c.limit_seconds);
      r.expect(seconds < *c.limit_seconds, timing);
    } else {
      std::snprintf(timing, sizeof timing, "runtime %.1fs", seconds);
    }
    std::cout << (r.pass ? "PASS" : "FAIL") << " [" << c.number << "] " << c.title << " (" << timing
              << ")\n";
    for (const auto& d : r.details) std::cout << "    " << d << "\n";
    std::cout << std::flush;
    failed += r.pass ? 0 : 1;
  }
  std::cout << (failed == 0 ? "all 9 criteria passed\n"
                            : std::to_string(failed) + " of 9 criteria failed\n");
  return failed == 0 ? 0 : 1;
}
