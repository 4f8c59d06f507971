#pragma once

#include <string_view>

#include "framegen/lora.hpp"
#include "framegen/params.hpp"

namespace framegen {

// Resolves "<prefix>.W" (and "<prefix>.b" when present) to x W^T + b, routing
// through the weight's LoRA adapter when one is attached.
class Linears {
 public:
  explicit Linears(const ParameterStore& params, const AdapterSet* adapters = nullptr)
      : params_(&params), adapters_(adapters) {}

  Tensor operator()(const Tensor& x, std::string_view prefix) const;
  const ParameterStore& params() const { return *params_; }
  const AdapterSet* adapters() const { return adapters_; }

 private:
  const ParameterStore* params_;
  const AdapterSet* adapters_;
};

}  // namespace framegen
