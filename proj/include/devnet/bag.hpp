#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "devnet/errors.hpp"
#include "devnet/tensor.hpp"

namespace devnet {

// Sliding-window layout of patches over an image, row-major.
struct PatchGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t patch = 0;
  std::size_t stride = 1;

  std::size_t grid_rows() const { return height < patch ? 0 : (height - patch) / stride + 1; }
  std::size_t grid_cols() const { return width < patch ? 0 : (width - patch) / stride + 1; }
  std::size_t count() const { return grid_rows() * grid_cols(); }

  friend bool operator==(const PatchGeometry&, const PatchGeometry&) = default;
};

// Binary per-pixel ground truth, row-major.
struct PixelMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::size_t positives() const {
    std::size_t n = 0;
    for (auto p : pixels) n += p != 0;
    return n;
  }

  friend bool operator==(const PixelMask&, const PixelMask&) = default;
};

inline constexpr int kNormalClass = -1;

// One sample: an (n x D) matrix of instance feature vectors plus its label.
struct Bag {
  std::string id;
  int label = 0;                // 1 = anomaly
  int class_id = kNormalClass;  // anomaly class, or -1 for normal data
  Tensor instances;
  std::optional<PatchGeometry> geometry;
  std::optional<PixelMask> mask;

  std::size_t size() const { return instances.empty() ? 0 : instances.rows(); }
  std::size_t dim() const { return instances.empty() ? 0 : instances.cols(); }

  friend bool operator==(const Bag&, const Bag&) = default;
};

inline void validate_bags(const std::vector<Bag>& bags, std::size_t dim) {
  for (const Bag& b : bags) {
    if (b.size() == 0) throw ContractError("bag '" + b.id + "' has no instances");
    if (b.dim() != dim) {
      throw DimensionError("bag '" + b.id + "' has D = " + std::to_string(b.dim()) + ", expected " +
                           std::to_string(dim));
    }
    if (b.label != 0 && b.label != 1) throw ContractError("bag '" + b.id + "' has a label outside {0,1}");
  }
}

}  // namespace devnet
