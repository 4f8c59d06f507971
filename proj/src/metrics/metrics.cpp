#include "framegen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "framegen/errors.hpp"

namespace framegen {

std::vector<double> gaussian_taps(std::size_t window, double sigma) {
  if (window == 0 || window % 2 == 0) throw ConfigError("SSIM window must be odd");
  std::vector<double> g(window);
  const double c = (static_cast<double>(window) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

namespace {

// Valid-mode separable filter of one channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::vector<double>& g) {
  const auto k = g.size();
  const auto oh = h - k + 1, ow = w - k + 1;
  std::vector<double> tmp(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * plane[y * w + x + i];
      tmp[y * ow + x] = s;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& o) {
  if (a.shape() != b.shape()) throw DimensionError("ssim: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.rank() != 3) throw DimensionError("ssim expects [H x W x c] images");
  const auto h = a.dim(0), w = a.dim(1), c = a.dim(2);
  if (h < o.window || w < o.window) throw DimensionError("image smaller than the SSIM window");
  const auto g = gaussian_taps(o.window, o.sigma);
  const double c1 = (o.k1 * o.range) * (o.k1 * o.range);
  const double c2 = (o.k2 * o.range) * (o.k2 * o.range);
  const auto da = a.data(), db = b.data();
  double total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> x(h * w), y(h * w), xx(h * w), yy(h * w), xy(h * w);
    for (std::size_t k = 0; k < h * w; ++k) {
      x[k] = da[k * c + ch];
      y[k] = db[k * c + ch];
      xx[k] = x[k] * x[k];
      yy[k] = y[k] * y[k];
      xy[k] = x[k] * y[k];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g), sxy = filter_valid(xy, h, w, g);
    double acc = 0.0;
    for (std::size_t k = 0; k < mx.size(); ++k) {
      const double vx = sxx[k] - mx[k] * mx[k];
      const double vy = syy[k] - my[k] * my[k];
      const double cov = sxy[k] - mx[k] * my[k];
      acc += ((2 * mx[k] * my[k] + c1) * (2 * cov + c2)) /
             ((mx[k] * mx[k] + my[k] * my[k] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(c);
}

double image_mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("mse: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0.0;
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) s += (da[i] - db[i]) * (da[i] - db[i]);
  return da.empty() ? 0.0 : s / static_cast<double>(da.size());
}

std::vector<SegmentMass> segment_attention_mass(const AttentionProbe& probe, const Layout& layout) {
  if (probe.heads == 0 || probe.weights.size() % probe.heads != 0) {
    throw ContractError("attention probe does not hold whole layers");
  }
  const auto L = layout.total();
  std::vector<SegmentMass> out;
  for (std::size_t layer = 0; layer * probe.heads < probe.weights.size(); ++layer) {
    SegmentMass m{};
    for (std::size_t hd = 0; hd < probe.heads; ++hd) {
      const auto& w = probe.weights[layer * probe.heads + hd];
      if (w.size() != L * L) throw DimensionError("probe matrix does not match the layout");
      for (auto sq : kSegments) {
        for (std::size_t q = layout.begin(sq); q < layout.end(sq); ++q) {
          for (auto sk : kSegments) {
            double mass = 0.0;
            for (std::size_t k = layout.begin(sk); k < layout.end(sk); ++k) mass += w[q * L + k];
            m[static_cast<std::size_t>(sq)][static_cast<std::size_t>(sk)] += mass;
          }
        }
      }
    }
    for (auto sq : kSegments) {
      const double n = static_cast<double>(layout.length(sq) * probe.heads);
      for (auto& v : m[static_cast<std::size_t>(sq)]) v = n > 0 ? v / n : 0.0;
    }
    out.push_back(m);
  }
  return out;
}

void EvalReport::finalize() {
  double s = 0.0, e = 0.0;
  for (const auto& r : rows) {
    s += r.ssim;
    e += r.mse;
  }
  const double n = static_cast<double>(rows.size());
  mean_ssim = rows.empty() ? 0.0 : s / n;
  mean_mse = rows.empty() ? 0.0 : e / n;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "# ssim window=7 sigma=1.5 k1=0.01 k2=0.03 range=1\n";
  os << "sample,ssim,mse\n";
  for (const auto& r : rows) os << r.index << "," << r.ssim << "," << r.mse << "\n";
  os << "mean," << mean_ssim << "," << mean_mse << "\n";
  return os.str();
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "samples: " << rows.size() << "\n"
     << "mean ssim: " << mean_ssim << "\n"
     << "mean mse: " << mean_mse << "\n"
     << "sample seed: " << sample_seed << "\n"
     << "config hash: " << config_hash << "\n";
  for (std::size_t layer = 0; layer < attention_mass.size(); ++layer) {
    os << "attention mass, layer " << layer << " (rows: query segment text/cond/target)\n";
    for (const auto& row : attention_mass[layer]) {
      os << "  " << std::setw(8) << row[0] << " " << std::setw(8) << row[1] << " " << std::setw(8) << row[2] << "\n";
    }
  }
  return os.str();
}

double median(std::vector<double> values) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace framegen
