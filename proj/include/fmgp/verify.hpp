#pragma once

#include "fmgp/training.hpp"

#include <string>
#include <vector>

namespace fmgp::verify {

/// Finite-difference audit of the analytic gradients of every loss and KL
/// against central differences with h = 1e-5 * (1 + |p_i|), per parameter
/// block, over randomized small instances.
struct GradCheckReport {
  struct Row {
    std::string loss;
    std::string block;
    double rel_err = 0.0;
  };
  std::vector<Row> rows;
  double worst_rel_err = 0.0;
  std::string worst_loss;
  std::string worst_block;
  double tolerance = 1e-4;

  bool pass() const { return worst_rel_err < tolerance; }
};

struct GradCheckOptions {
  int repeats = 20;
  double tolerance = 1e-4;
  /// Test fixture: flips the sign of the analytic KL gradient so the report
  /// must fail naming a KL loss.
  bool inject_kl_fault = false;
};

GradCheckReport gradcheck(std::uint64_t seed, const GradCheckOptions& opts = {});

/// Deterministic text rendering, one line per (loss, block) worst error.
std::string format_report(const GradCheckReport& report);

}  // namespace fmgp::verify
