#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "framegen/model/attention.hpp"
#include "framegen/model/tokens.hpp"
#include "framegen/tensor.hpp"

namespace framegen {

struct SsimOptions {
  std::size_t window = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

// Mean SSIM over all valid (fully inside) windows, averaged over channels.
// Images are [H x W x c] and must be at least window x window.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& options = {});
double image_mse(const Tensor& a, const Tensor& b);

// Normalized 1D Gaussian taps; the 2D window is their outer product.
std::vector<double> gaussian_taps(std::size_t window, double sigma);

using SegmentMass = std::array<std::array<double, 3>, 3>;

// Entry (q, k): post-softmax mass that queries of segment q place on keys of
// segment k, averaged over heads and over the queries of q. One matrix per layer.
std::vector<SegmentMass> segment_attention_mass(const AttentionProbe& probe, const Layout& layout);

struct EvalRow {
  std::size_t index = 0;
  double ssim = 0.0;
  double mse = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_ssim = 0.0;
  double mean_mse = 0.0;
  std::vector<SegmentMass> attention_mass;  // per layer, may be empty
  std::uint64_t sample_seed = 0;
  std::string config_hash;

  // Recomputes the aggregates from the rows.
  void finalize();
  std::string to_csv() const;
  std::string summary() const;
};

double median(std::vector<double> values);

}  // namespace framegen
