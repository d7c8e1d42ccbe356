#pragma once

// Gradient-based anomaly localization: |d phi_K / d x| per input feature,
// reassembled into image coordinates and smoothed with a Gaussian.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "devnet/autodiff.hpp"
#include "devnet/bag.hpp"
#include "devnet/errors.hpp"
#include "devnet/evaluator.hpp"
#include "devnet/mil.hpp"
#include "devnet/network.hpp"

namespace devnet {

struct SaliencyMap {
  std::string image_id;
  Tensor values;  // height x width, all >= 0

  std::size_t height() const { return values.rows(); }
  std::size_t width() const { return values.cols(); }
};

// Absolute partials of phi_K with respect to every (standardized) patch
// feature; (n x D), zero rows for patches outside the top-K selection.
inline Tensor input_gradients(const Bag& bag, const NetworkParams& params, double k_fraction) {
  if (!bag.geometry) {
    throw ContractError("bag '" + bag.id +
                        "' has no patch geometry; saliency needs image-sourced bags (use `score` for tabular data)");
  }
  Tape tape;
  const ParamVars pv = bind_params(tape, params, false);
  const Var x = tape.leaf(bag.instances, true);
  const Var phi = taped_phi_k(tape, forward_scores(tape, pv, x), k_fraction);
  Tensor g = tape.backward(phi)[x];
  for (double& v : g.storage()) v = std::fabs(v);
  return g;
}

// Each pixel = sum over covering patches of the matching gradient entry,
// divided by the number of covering patches.
inline SaliencyMap assemble_map(const Tensor& gradients, const PatchGeometry& geo) {
  if (gradients.rank() != 2 || gradients.rows() != geo.count() || gradients.cols() != geo.patch * geo.patch) {
    throw DimensionError("gradient matrix " + gradients.shape_string() + " does not match a " +
                         std::to_string(geo.grid_rows()) + "x" + std::to_string(geo.grid_cols()) +
                         " grid of " + std::to_string(geo.patch) + "px patches");
  }
  Tensor sum({geo.height, geo.width});
  std::vector<unsigned> coverage(geo.height * geo.width, 0);
  std::size_t idx = 0;
  for (std::size_t gr = 0; gr < geo.grid_rows(); ++gr) {
    for (std::size_t gc = 0; gc < geo.grid_cols(); ++gc, ++idx) {
      for (std::size_t dy = 0; dy < geo.patch; ++dy) {
        for (std::size_t dx = 0; dx < geo.patch; ++dx) {
          const std::size_t p = (gr * geo.stride + dy) * geo.width + gc * geo.stride + dx;
          sum[p] += gradients.at(idx, dy * geo.patch + dx);
          ++coverage[p];
        }
      }
    }
  }
  for (std::size_t p = 0; p < sum.size(); ++p) {
    if (coverage[p]) sum[p] /= static_cast<double>(coverage[p]);
  }
  return {"", std::move(sum)};
}

// Blur width scaled from sigma = 4 at a 128px side, never below 1.
inline double default_blur_sigma(std::size_t image_side) {
  return std::max(1.0, 4.0 * static_cast<double>(image_side) / 128.0);
}

// Truncated Gaussian, radius round(2 sigma). Out-of-image taps are dropped
// and the remaining weights renormalized. The in-bounds window is a
// rectangle, so the 2-D renormalized kernel factors into two 1-D passes.
inline SaliencyMap gaussian_blur(const SaliencyMap& map, double sigma) {
  if (!(sigma > 0.0)) throw ContractError("blur sigma must be positive");
  const auto radius = static_cast<std::ptrdiff_t>(std::lround(2.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
    kernel[static_cast<std::size_t>(d + radius)] = std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma));
  }
  const auto h = static_cast<std::ptrdiff_t>(map.height());
  const auto w = static_cast<std::ptrdiff_t>(map.width());

  auto pass = [&](const Tensor& in, bool along_rows) {
    Tensor out(in.shape());
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0, norm = 0.0;
        for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
          const std::ptrdiff_t yy = along_rows ? y : y + d;
          const std::ptrdiff_t xx = along_rows ? x + d : x;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const double k = kernel[static_cast<std::size_t>(d + radius)];
          acc += k * in[static_cast<std::size_t>(yy * w + xx)];
          norm += k;
        }
        out[static_cast<std::size_t>(y * w + x)] = acc / norm;
      }
    }
    return out;
  };
  return {map.image_id, pass(pass(map.values, true), false)};
}

inline double pixel_auc(const SaliencyMap& map, const PixelMask& mask) {
  if (mask.height != map.height() || mask.width != map.width()) {
    throw DimensionError("mask and saliency map differ in size");
  }
  std::vector<int> labels(mask.pixels.begin(), mask.pixels.end());
  for (int& v : labels) v = v != 0;
  return auc_roc(map.values.data(), labels);
}

// Full pipeline: blur(assemble(|grad|)).
inline SaliencyMap explain(const Bag& bag, const NetworkParams& params, double k_fraction,
                           double sigma = 0.0) {
  const Tensor g = input_gradients(bag, params, k_fraction);
  SaliencyMap raw = assemble_map(g, *bag.geometry);
  raw.image_id = bag.id;
  const double s = sigma > 0.0 ? sigma : default_blur_sigma(std::max(bag.geometry->height, bag.geometry->width));
  return gaussian_blur(raw, s);
}

// Mean saliency inside and outside the ground-truth mask.
struct MaskContrast {
  double inside = 0.0;
  double outside = 0.0;
};

inline MaskContrast mask_contrast(const SaliencyMap& map, const PixelMask& mask) {
  double in = 0.0, out = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t p = 0; p < mask.pixels.size(); ++p) {
    if (mask.pixels[p]) {
      in += map.values[p];
      ++n_in;
    } else {
      out += map.values[p];
      ++n_out;
    }
  }
  return {n_in ? in / static_cast<double>(n_in) : 0.0, n_out ? out / static_cast<double>(n_out) : 0.0};
}

}  // namespace devnet
