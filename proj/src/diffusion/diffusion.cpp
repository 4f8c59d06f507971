#include "framegen/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "framegen/model/codec.hpp"
#include "framegen/ops.hpp"

namespace framegen {

DiffusionSchedule DiffusionSchedule::linear(std::size_t t_max, double beta_start, double beta_end) {
  if (t_max < 2) throw ConfigError("schedule needs t_max >= 2");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.t_max = t_max;
  double bar = 1.0;
  for (std::size_t t = 0; t < t_max; ++t) {
    const double beta =
        beta_start + (beta_end - beta_start) * static_cast<double>(t) / static_cast<double>(t_max - 1);
    s.betas.push_back(beta);
    s.alphas.push_back(1.0 - beta);
    bar *= 1.0 - beta;
    s.alpha_bars.push_back(bar);
  }
  return s;
}

void DiffusionSchedule::check_timestep(std::size_t t) const {
  if (t >= t_max) throw ContractError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(t_max) + ")");
}

Tensor q_sample(const Tensor& x_target, std::size_t t, const Tensor& eps, const DiffusionSchedule& schedule) {
  schedule.check_timestep(t);
  if (x_target.shape() != eps.shape()) {
    throw DimensionError("q_sample: latent " + shape_str(x_target.shape()) + " vs noise " + shape_str(eps.shape()));
  }
  const double a = std::sqrt(schedule.alpha_bars[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bars[t]);
  std::vector<double> out(x_target.size());
  const auto x = x_target.data(), e = eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * e[i];
  return Tensor::from(x_target.shape(), std::move(out));
}

Tensor diffusion_loss(const Tensor& eps_hat, const Tensor& eps) { return mse(eps_hat, eps); }

NoisedBatch make_noised_batch(std::span<const TrainingExample> data, std::size_t batch_size,
                              const DiffusionSchedule& schedule, double cfg_drop_prob,
                              const std::vector<std::size_t>& null_prompt, Rng& rng) {
  if (data.empty()) throw ContractError("cannot draw a batch from an empty dataset");
  NoisedBatch batch;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto& ex = data[rng.below(data.size())];
    NoisedSample s;
    s.t = rng.below(schedule.t_max);
    s.cfg_drop = rng.uniform() < cfg_drop_prob;
    std::vector<double> eps(ex.target_latent.size());
    rng.fill_normal(eps);
    s.clean = ex.target_latent;
    s.eps = Tensor::from(ex.target_latent.shape(), std::move(eps));
    s.z_t = q_sample(s.clean, s.t, s.eps, schedule);
    s.cond = ex.cond_latent;
    s.text_ids = s.cfg_drop ? null_prompt : ex.text_ids;
    batch.push_back(std::move(s));
  }
  return batch;
}

void AdamW::step(ParameterStore& params) {
  ++steps_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(steps_));
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    auto [it, fresh] = moments_.try_emplace(name);
    if (fresh) {
      it->second.m.assign(p.size(), 0.0);
      it->second.v.assign(p.size(), 0.0);
      order_.push_back(name);
    }
    auto& mo = it->second;
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      mo.m[i] = c.beta1 * mo.m[i] + (1.0 - c.beta1) * gi;
      mo.v[i] = c.beta2 * mo.v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = mo.m[i] / bc1;
      const double vhat = mo.v[i] / bc2;
      w[i] *= 1.0 - c.lr * c.weight_decay;
      w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void AdamW::export_state(ParameterStore& out) const {
  out.add("optim.step", Tensor::from({1}, {static_cast<double>(steps_)}));
  for (const auto& name : order_) {
    const auto& mo = moments_.at(name);
    out.add("optim.m." + name, Tensor::from({mo.m.size()}, mo.m));
    out.add("optim.v." + name, Tensor::from({mo.v.size()}, mo.v));
  }
}

void AdamW::import_state(const ParameterStore& in) {
  moments_.clear();
  order_.clear();
  steps_ = in.contains("optim.step") ? static_cast<std::size_t>(in.get("optim.step").item()) : 0;
  for (const auto& [name, t] : in) {
    if (!name.starts_with("optim.m.")) continue;
    const auto param = name.substr(8);
    const auto& v = in.get("optim.v." + param);
    Moments mo{{t.data().begin(), t.data().end()}, {v.data().begin(), v.data().end()}};
    moments_.emplace(param, std::move(mo));
    order_.push_back(param);
  }
}

StepResult train_step(const Model& model, ParameterStore& params, AdamW& optimizer, const NoisedBatch& batch,
                      MaskStrategy mask, double grad_clip) {
  if (batch.empty()) throw ContractError("train_step on an empty batch");
  params.zero_grad();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  // Per-sample backward keeps one graph alive at a time; gradients sum in
  // batch order.
  for (const auto& s : batch) {
    const auto eps_hat = model.predict_noise({s.cond, s.z_t, s.text_ids, s.t}, mask);
    const auto loss = diffusion_loss(eps_hat, s.eps);
    if (!std::isfinite(loss.item())) {
      params.zero_grad();
      throw NumericError("non-finite loss at timestep " + std::to_string(s.t));
    }
    total += loss.item();
    backward(scale(loss, inv));
  }
  StepResult result;
  result.loss = total * inv;
  double sq = 0.0;
  for (const auto& [_, p] : params) {
    if (p.requires_grad() && p.has_grad()) {
      for (double g : p.grad()) sq += g * g;
    }
  }
  result.grad_norm = std::sqrt(sq);
  if (!std::isfinite(result.grad_norm)) {
    params.zero_grad();
    throw NumericError("non-finite gradient norm");
  }
  if (grad_clip > 0.0 && result.grad_norm > grad_clip) {
    const double f = grad_clip / result.grad_norm;
    for (auto& [_, p] : params) {
      if (p.requires_grad() && p.has_grad()) {
        for (auto& g : p.mutable_grad()) g *= f;
      }
    }
  }
  optimizer.step(params);
  params.zero_grad();
  return result;
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double omega) {
  if (eps_cond.shape() != eps_uncond.shape()) throw DimensionError("cfg_combine: shape mismatch");
  std::vector<double> out(eps_cond.size());
  const auto c = eps_cond.data(), u = eps_uncond.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = u[i] + omega * (c[i] - u[i]);
  return Tensor::from(eps_cond.shape(), std::move(out));
}

Tensor cfg_predict(const Model& model, const CfgInputs& in, double omega, MaskStrategy mask) {
  NoGradGuard no_grad;
  const auto eps_c = model.predict_noise({in.cond_latent, in.z_t, in.text_ids, in.t}, mask);
  const auto eps_u = model.predict_noise({in.cond_latent, in.z_t, in.null_ids, in.t}, mask);
  return cfg_combine(eps_c, eps_u, omega);
}

std::vector<std::size_t> ddim_timesteps(std::size_t t_max, std::size_t steps) {
  if (steps == 0 || steps > t_max) {
    throw ConfigError("sampler steps must be in [1, " + std::to_string(t_max) + "], got " + std::to_string(steps));
  }
  const auto stride = t_max / steps;
  std::vector<std::size_t> ts(steps);
  for (std::size_t i = 0; i < steps; ++i) ts[i] = i * stride;
  return ts;
}

SampleResult sample(const Model& model, const DiffusionSchedule& schedule, const Tensor& cond_image,
                    const std::vector<std::size_t>& text_ids, const std::vector<std::size_t>& null_ids,
                    const SampleOptions& options) {
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const auto cond_latent = image_to_latent(cond_image, cfg.latent_factor);
  const auto ts = ddim_timesteps(schedule.t_max, options.steps);

  Rng rng(options.seed);
  std::vector<double> z(cond_latent.size());
  rng.fill_normal(z);
  SampleResult result;

  for (std::size_t i = ts.size(); i-- > 0;) {
    const auto t = ts[i];
    const double ab = schedule.alpha_bars[t];
    const double ab_prev = i > 0 ? schedule.alpha_bars[ts[i - 1]] : 1.0;
    const auto zt = Tensor::from(cond_latent.shape(), z);
    Tensor eps = model.predict_noise({cond_latent, zt, text_ids, t}, options.mask);
    ++result.cond_evaluations;
    if (options.omega != 1.0) {
      const auto eps_u = model.predict_noise({cond_latent, zt, null_ids, t}, options.mask);
      ++result.uncond_evaluations;
      eps = cfg_combine(eps, eps_u, options.omega);
    }
    const auto e = eps.data();
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    const double sa_prev = std::sqrt(ab_prev), sb_prev = std::sqrt(1.0 - ab_prev);
    for (std::size_t j = 0; j < z.size(); ++j) {
      double x0 = (z[j] - sb * e[j]) / sa;
      if (options.clip_x0) x0 = std::clamp(x0, -1.0, 1.0);
      z[j] = sa_prev * x0 + sb_prev * e[j];
    }
  }
  result.latent = Tensor::from(cond_latent.shape(), std::move(z));
  result.image = latent_to_image(result.latent, cfg.latent_factor);
  return result;
}

}  // namespace framegen
