#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "framegen/model/adaln.hpp"
#include "framegen/model/attention.hpp"
#include "framegen/model/config.hpp"
#include "framegen/model/mask.hpp"
#include "framegen/model/rope.hpp"
#include "framegen/model/tokens.hpp"

namespace framegen {

struct ModelInput {
  Tensor cond_latent;                 // [h x w x d_lat], never noised
  Tensor target_latent;               // [h x w x d_lat], z_t
  std::vector<std::size_t> text_ids;  // exactly text_len ids
  std::size_t t = 0;
};

/// Two-frame diffusion transformer over [text; cond; target] token sequences.
///
/// The model does not own its parameters; it reads them from the store on
/// every forward pass, so optimizer updates and checkpoint loads are visible
/// without rebuilding it.
class Model {
 public:
  Model(ModelConfig config, const ParameterStore& params, std::vector<bool> keyword_flags,
        const AdapterSet* adapters = nullptr, MaskOptions mask_options = {});

  // Zero-initialized final modulation layers, attention/MLP output
  // projections and head make every block (and the whole model) an identity
  // at init. Cond and target AdaLN branches draw from one shared stream.
  static ParameterStore init_params(const ModelConfig& config, std::uint64_t seed);
  static std::vector<std::string> default_lora_targets();
  // Modules without a pretrained counterpart at this scale; they train
  // directly rather than through adapters.
  static std::vector<std::string> directly_trainable();

  const ModelConfig& config() const { return config_; }
  const Linears& linears() const { return linears_; }
  const MaskMatrix& mask(MaskStrategy s) const { return masks_[static_cast<std::size_t>(s)]; }
  const RopeTables& rope() const { return rope_; }

  TokenSequence embed(const ModelInput& input) const;
  Tensor dit_block(const Tensor& tokens, const Layout& layout, std::size_t block, std::size_t t,
                   const MaskMatrix& mask, AttentionProbe* probe = nullptr) const;
  // Noise prediction shaped like the target latent.
  Tensor predict_noise(const ModelInput& input, MaskStrategy strategy, AttentionProbe* probe = nullptr) const;

 private:
  ModelConfig config_;
  const ParameterStore* params_;
  std::vector<bool> keyword_flags_;
  Linears linears_;
  std::array<MaskMatrix, 4> masks_;
  RopeTables rope_;
  Layout layout_;
};

}  // namespace framegen
