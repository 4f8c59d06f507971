#include "framegen/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "framegen/rng.hpp"

namespace framegen {

namespace {

double relative_error(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-8});
}

double central_difference(const std::function<Tensor()>& f, Tensor& x, std::size_t i, double h) {
  auto values = x.mutable_data();
  const double orig = values[i];
  NoGradGuard no_grad;
  values[i] = orig + h;
  const double up = f().item();
  values[i] = orig - h;
  const double down = f().item();
  values[i] = orig;
  return (up - down) / (2.0 * h);
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, Tensor x, double h) {
  if (!x.is_leaf()) throw ContractError("grad_check needs a leaf tensor");
  const bool had = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  backward(f());
  std::vector<double> analytic(x.size(), 0.0);
  if (x.has_grad()) std::ranges::copy(x.grad(), analytic.begin());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], central_difference(f, x, i, h)));
  }
  x.zero_grad();
  x.set_requires_grad(had);
  return worst;
}

GradCheckReport grad_check_params(const std::function<Tensor()>& f, ParameterStore& store,
                                  const GradCheckOptions& options) {
  store.zero_grad();
  backward(f());
  GradCheckReport report;
  Rng rng(options.seed);
  for (auto& [name, t] : store) {
    if (!t.requires_grad()) continue;
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param > 0 && coords.size() > options.max_coords_per_param) {
      // Partial Fisher-Yates draw of distinct coordinates.
      for (std::size_t i = 0; i < options.max_coords_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(options.max_coords_per_param);
      std::ranges::sort(coords);
    }
    ParamCheck pc{name, coords.size(), 0.0, 0, 0.0, 0.0};
    for (auto i : coords) {
      const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
      const double fd = central_difference(f, t, i, options.h);
      const double err = relative_error(analytic, fd);
      if (err > pc.max_rel_error || i == coords.front()) {
        pc.max_rel_error = err;
        pc.worst_index = i;
        pc.worst_analytic = analytic;
        pc.worst_numeric = fd;
      }
    }
    if (report.worst_param.empty() || pc.max_rel_error > report.max_rel_error) {
      report.max_rel_error = pc.max_rel_error;
      report.worst_param = name;
      report.worst_index = pc.worst_index;
    }
    report.params.push_back(std::move(pc));
  }
  store.zero_grad();
  return report;
}

}  // namespace framegen
