#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "framegen/params.hpp"

namespace framegen {

/// max over coordinates of |analytic - fd| / max(|analytic|, |fd|, 1e-8), with
/// fd the central difference (f(x+h) - f(x-h)) / 2h. `x` must be a leaf that
/// `f` reads; its values are restored afterwards.
double grad_check(const std::function<Tensor()>& f, Tensor x, double h = 1e-5);

struct ParamCheck {
  std::string name;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

struct GradCheckOptions {
  double h = 1e-5;
  // Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

// Checks every requires_grad tensor in `store` against the scalar loss `f`.
GradCheckReport grad_check_params(const std::function<Tensor()>& f, ParameterStore& store,
                                  const GradCheckOptions& options = {});

// Negative control for the checker: perturbs layer_norm's backward pass.
void set_backward_fault_for_testing(bool enabled);

}  // namespace framegen
