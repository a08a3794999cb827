#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlmbir/network.hpp"

namespace dlmbir {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  /// Variant of the end-to-end network row; depth and width are overridden to 3.
  NetworkVariant variant = NetworkVariant::two_d(3, 3);
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative errors use max(|analytic|, |numeric|, floor) as the denominator.
  double floor = 1e-4;
  /// Test hook: perturbs the analytic conv2d weight gradient so the check must fail.
  bool corrupt_backward = false;
};

struct GradcheckRow {
  std::string layer;     // conv2d, conv3d, relu, batchnorm, loss, network
  std::string argument;  // tensor holding the worst coordinate
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double max_rel_error = 0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double tolerance = 1e-4;

  bool passed() const;
  const GradcheckRow& worst() const;
};

/// Finite-difference validation of every layer type plus a depth-3 network, in 64-bit.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace dlmbir
