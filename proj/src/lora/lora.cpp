#include "framegen/lora.hpp"

#include <cmath>

#include "framegen/ops.hpp"
#include "framegen/rng.hpp"
#include "framegen/util.hpp"

namespace framegen {

namespace {
constexpr std::string_view kPrefix = "lora.";

bool matches_any(std::span<const std::string> patterns, std::string_view name) {
  for (const auto& p : patterns) {
    if (glob_match(p, name)) return true;
  }
  return false;
}
}  // namespace

std::string lora_a_name(std::string_view base_name) { return std::string(kPrefix) + std::string(base_name) + ".A"; }
std::string lora_b_name(std::string_view base_name) { return std::string(kPrefix) + std::string(base_name) + ".B"; }

const LoraAdapter* AdapterSet::find(std::string_view base_name) const {
  auto it = index_.find(std::string(base_name));
  return it == index_.end() ? nullptr : &adapters_[it->second];
}

std::vector<std::string> AdapterSet::base_names() const {
  std::vector<std::string> out;
  for (const auto& a : adapters_) out.push_back(a.base_name);
  return out;
}

void AdapterSet::add(LoraAdapter adapter) {
  if (index_.contains(adapter.base_name)) {
    throw ContractError("weight '" + adapter.base_name + "' already carries an adapter");
  }
  index_.emplace(adapter.base_name, adapters_.size());
  adapters_.push_back(std::move(adapter));
}

AdapterSet AdapterSet::attach(ParameterStore& params, double alpha) {
  AdapterSet set;
  for (auto& [name, t] : params) {
    if (!name.starts_with(kPrefix) || !name.ends_with(".A")) continue;
    const auto base = name.substr(kPrefix.size(), name.size() - kPrefix.size() - 2);
    if (!params.contains(lora_b_name(base)) || !params.contains(base)) {
      throw ContractError("adapter factor '" + name + "' without matching B factor or base weight");
    }
    set.add({base, t, params.get(lora_b_name(base)), t.dim(0), alpha});
  }
  return set;
}

AdapterSet inject(ParameterStore& params, const LoraOptions& options) {
  if (options.rank == 0) throw ConfigError("LoRA rank must be positive");
  for (const auto& [name, _] : params) {
    if (name.starts_with(kPrefix)) throw ContractError("parameters already carry LoRA adapters ('" + name + "')");
  }
  std::vector<std::string> targets;
  for (const auto& [name, t] : params) {
    if (t.rank() == 2 && matches_any(options.targets, name)) targets.push_back(name);
  }
  if (targets.empty()) throw ConfigError("LoRA target patterns match no weight");

  for (auto& [name, t] : params) t.set_requires_grad(matches_any(options.train_directly, name));

  AdapterSet set;
  const Rng root(options.seed);
  for (const auto& base : targets) {
    const auto& w = params.get(base);
    const auto out = w.dim(0), in = w.dim(1);
    std::vector<double> a(options.rank * in);
    Rng rng = root.fork(fnv1a64(base));
    rng.fill_normal(a, 1.0 / std::sqrt(static_cast<double>(in)));
    Tensor A = params.add(lora_a_name(base), Tensor::from({options.rank, in}, std::move(a), true));
    Tensor B = params.add(lora_b_name(base), Tensor::zeros({out, options.rank}, true));
    set.add({base, A, B, options.rank, options.alpha});
  }
  return set;
}

Tensor adapted_matmul(const Tensor& x, const Tensor& base_w, const LoraAdapter* adapter) {
  Tensor y = matmul_nt(x, base_w);
  if (!adapter) return y;
  if (adapter->A.dim(1) != base_w.dim(1) || adapter->B.dim(0) != base_w.dim(0)) {
    throw DimensionError("adapter for '" + adapter->base_name + "' does not fit weight " +
                         shape_str(base_w.shape()));
  }
  const auto delta = matmul_nt(matmul_nt(x, adapter->A), adapter->B);
  return add(y, scale(delta, adapter->scaling()));
}

Tensor merge(const LoraAdapter& adapter, const Tensor& base_w) {
  NoGradGuard no_grad;
  const auto delta = matmul(adapter.B, adapter.A);
  if (delta.shape() != base_w.shape()) {
    throw DimensionError("adapter product " + shape_str(delta.shape()) + " vs weight " + shape_str(base_w.shape()));
  }
  return add(base_w, scale(delta, adapter.scaling())).detach();
}

}  // namespace framegen
