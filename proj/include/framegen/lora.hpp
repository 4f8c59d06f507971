#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "framegen/params.hpp"

namespace framegen {

/// Rank-r update delta(W) = (alpha / r) B A for a base weight W [out x in].
struct LoraAdapter {
  std::string base_name;
  Tensor A;  // [r x in], Gaussian with stddev 1/sqrt(in)
  Tensor B;  // [out x r], zero at creation
  std::size_t rank = 0;
  double alpha = 0.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

// Checkpoint names under which an adapter's factors live.
std::string lora_a_name(std::string_view base_name);
std::string lora_b_name(std::string_view base_name);

class AdapterSet {
 public:
  const LoraAdapter* find(std::string_view base_name) const;
  std::size_t size() const { return adapters_.size(); }
  bool empty() const { return adapters_.empty(); }
  std::vector<std::string> base_names() const;
  const std::vector<LoraAdapter>& adapters() const { return adapters_; }

  void add(LoraAdapter adapter);

  // Rebuilds the set from "lora.<base>.A/B" entries already in `params`
  // (e.g. after loading a checkpoint).
  static AdapterSet attach(ParameterStore& params, double alpha);

 private:
  std::vector<LoraAdapter> adapters_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct LoraOptions {
  std::size_t rank = 4;
  double alpha = 4.0;
  std::vector<std::string> targets;        // glob patterns over base weight names
  std::vector<std::string> train_directly;  // non-adapted params that stay trainable
  std::uint64_t seed = 0;
};

// Adapts every weight matched by `targets`, stores the factors in `params`
// under lora_a_name/lora_b_name, and freezes everything that is neither an
// adapter factor nor matched by `train_directly`. Throws ConfigError when the
// patterns match nothing and ContractError when adapters already exist.
AdapterSet inject(ParameterStore& params, const LoraOptions& options);

// x W^T + (alpha/r) (x A^T) B^T, with x [n x in]; equals (W x + s B A x) per row.
Tensor adapted_matmul(const Tensor& x, const Tensor& base_w, const LoraAdapter* adapter);

// W + (alpha/r) B A as a fresh leaf.
Tensor merge(const LoraAdapter& adapter, const Tensor& base_w);

}  // namespace framegen
