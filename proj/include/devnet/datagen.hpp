#pragma once

// Synthetic data generators, patch extraction and the few-shot split
// protocols (random labeled anomalies, open-set, contamination).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "devnet/bag.hpp"
#include "devnet/errors.hpp"
#include "devnet/tensor.hpp"

namespace devnet {

namespace detail {

inline std::string make_id(const char* prefix, std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
  return std::string(prefix) + digits;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tabular data

struct GaussianComponent {
  std::vector<double> mean;
  double scale = 1.0;  // isotropic standard deviation
};

struct AnomalyClassSpec {
  std::size_t count = 0;
  std::vector<double> mean;
  double scale = 1.0;
};

struct TabularGenConfig {
  std::size_t n_normal = 2000;
  std::size_t dim = 8;
  std::vector<GaussianComponent> normal_components;
  std::vector<AnomalyClassSpec> anomaly_classes;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_normal == 0) throw ConfigError("n_normal must be positive");
    if (dim < 2) throw ConfigError("tabular dimension must be >= 2");
    if (normal_components.empty()) throw ConfigError("need at least one normal mixture component");
    for (const auto& c : normal_components) {
      if (c.mean.size() != dim) throw ConfigError("normal component mean has wrong dimension");
      if (!(c.scale > 0.0)) throw ConfigError("normal component scale must be positive");
    }
    for (std::size_t i = 0; i < anomaly_classes.size(); ++i) {
      const auto& a = anomaly_classes[i];
      if (a.mean.size() != dim) throw ConfigError("anomaly class mean has wrong dimension");
      if (!(a.scale > 0.0)) throw ConfigError("anomaly class scale must be positive");
      for (std::size_t j = 0; j < i; ++j) {
        if (anomaly_classes[j].mean == a.mean) throw ConfigError("anomaly class means must be distinct");
      }
    }
  }
};

// Two normal clusters and three anomaly classes in D = 8, N = 2000. The
// anomaly classes sit in different directions away from the normal mass.
inline TabularGenConfig standard_tabular_config(std::uint64_t seed) {
  TabularGenConfig cfg;
  cfg.n_normal = 2000;
  cfg.dim = 8;
  cfg.seed = seed;
  auto axis = [&](std::initializer_list<std::pair<std::size_t, double>> entries) {
    std::vector<double> v(cfg.dim, 0.0);
    for (auto [i, x] : entries) v[i] = x;
    return v;
  };
  cfg.normal_components = {{axis({{0, 2.0}}), 1.0}, {axis({{0, -2.0}}), 1.0}};
  // Each class has its own axis plus a shared outward component on the last
  // two axes, so the class directions are distinct but not orthogonal.
  const double own = 3.5, shared = 2.5, spread = 0.5;
  cfg.anomaly_classes = {
      {200, axis({{1, own}, {6, shared}, {7, shared}}), spread},
      {200, axis({{2, own}, {6, shared}, {7, shared}}), spread},
      {200, axis({{3, own}, {6, shared}, {7, shared}}), spread},
  };
  return cfg;
}

// One single-instance bag per point.
inline std::vector<Bag> gen_tabular(const TabularGenConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, cfg.normal_components.size() - 1);

  auto draw = [&](const std::vector<double>& mean, double scale) {
    std::vector<double> x(cfg.dim);
    for (std::size_t d = 0; d < cfg.dim; ++d) x[d] = mean[d] + scale * unit(rng);
    return Tensor({1, cfg.dim}, std::move(x));
  };

  std::vector<Bag> out;
  out.reserve(cfg.n_normal);
  for (std::size_t i = 0; i < cfg.n_normal; ++i) {
    const auto& c = cfg.normal_components[pick(rng)];
    out.push_back(Bag{detail::make_id("n", i), 0, kNormalClass, draw(c.mean, c.scale), {}, {}});
  }
  std::size_t aid = 0;
  for (std::size_t k = 0; k < cfg.anomaly_classes.size(); ++k) {
    const auto& a = cfg.anomaly_classes[k];
    for (std::size_t i = 0; i < a.count; ++i) {
      out.push_back(Bag{detail::make_id("a", aid++), 1, static_cast<int>(k), draw(a.mean, a.scale), {}, {}});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Texture images with planted defects

enum class DefectShape { blob, scratch, band };

inline const char* to_string(DefectShape s) {
  switch (s) {
    case DefectShape::blob: return "blob";
    case DefectShape::scratch: return "scratch";
    case DefectShape::band: return "band";
  }
  return "?";
}

struct DefectType {
  DefectShape shape = DefectShape::blob;
  double intensity_shift = 0.6;
  std::size_t min_area = 9;  // defect size range, in pixels
  std::size_t max_area = 40;
  std::size_t count = 40;
};

struct TextureGenConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t n_normal = 300;
  double grating_amplitude = 0.2;
  double grating_period = 6.0;  // pixels
  double orientation_jitter = 0.2;  // radians
  double noise_std = 0.05;
  std::vector<DefectType> defects = {
      {DefectShape::blob, 0.6, 9, 40, 40},
      {DefectShape::scratch, -0.6, 8, 24, 40},
      {DefectShape::band, 0.5, 32, 64, 40},
  };
  std::size_t patch = 8;
  std::size_t stride = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (height == 0 || width == 0) throw ConfigError("image size must be positive");
    if (patch == 0 || patch > height || patch > width) throw ConfigError("patch size must fit inside the image");
    if (stride == 0) throw ConfigError("stride must be >= 1");
    if (!(noise_std >= 0.0)) throw ConfigError("noise std must be >= 0");
    if (!(grating_period > 0.0)) throw ConfigError("grating period must be positive");
    for (const auto& d : defects) {
      if (d.min_area == 0 || d.min_area > d.max_area) throw ConfigError("defect size range is empty");
      if (d.min_area > height * width) {
        throw ConfigError(std::string("defect '") + to_string(d.shape) + "' is larger than the image");
      }
    }
  }
};

struct TextureImage {
  std::string id;
  int label = 0;
  int class_id = kNormalClass;
  Tensor pixels;  // height x width
  PixelMask mask;
};

namespace detail {

inline PixelMask draw_defect_mask(const DefectType& d, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double hh = static_cast<double>(h), ww = static_cast<double>(w);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    PixelMask m{h, w, std::vector<std::uint8_t>(h * w, 0)};
    const double area = static_cast<double>(d.min_area) +
                        unit(rng) * static_cast<double>(d.max_area - d.min_area);
    switch (d.shape) {
      case DefectShape::blob: {
        const double r = std::sqrt(area / std::numbers::pi);
        const double cy = r + unit(rng) * std::max(0.0, hh - 2 * r);
        const double cx = r + unit(rng) * std::max(0.0, ww - 2 * r);
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
            if (dy * dy + dx * dx <= r * r) m.pixels[y * w + x] = 1;
          }
        }
        break;
      }
      case DefectShape::scratch: {
        // One or two pixel wide line segment at a random angle.
        const double thickness = unit(rng) < 0.5 ? 1.0 : 2.0;
        const double length = area / thickness;
        const double angle = unit(rng) * std::numbers::pi;
        const double uy = std::sin(angle), ux = std::cos(angle);
        const double cy = unit(rng) * hh, cx = unit(rng) * ww;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double py = static_cast<double>(y) + 0.5 - cy, px = static_cast<double>(x) + 0.5 - cx;
            const double along = px * ux + py * uy;
            const double across = -px * uy + py * ux;
            if (std::fabs(along) <= length / 2 && std::fabs(across) <= thickness / 2) m.pixels[y * w + x] = 1;
          }
        }
        break;
      }
      case DefectShape::band: {
        // Full-length horizontal or vertical stripe.
        const bool horizontal = unit(rng) < 0.5;
        const std::size_t span = horizontal ? w : h;
        const std::size_t across = horizontal ? h : w;
        const std::size_t thick = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(area / static_cast<double>(span))));
        if (thick > across) continue;
        const std::size_t start = static_cast<std::size_t>(unit(rng) * static_cast<double>(across - thick + 1));
        for (std::size_t t = start; t < std::min(across, start + thick); ++t) {
          for (std::size_t s = 0; s < span; ++s) {
            if (horizontal) m.pixels[t * w + s] = 1;
            else m.pixels[s * w + t] = 1;
          }
        }
        break;
      }
    }
    const std::size_t n = m.positives();
    if (n >= d.min_area && n <= d.max_area) return m;
  }
  throw ConfigError(std::string("could not place a '") + to_string(d.shape) +
                    "' defect with area in the configured range");
}

}  // namespace detail

// Normal images are a jittered sinusoid grating plus noise. Each anomalous
// image is a fresh background with one defect added; the mask marks exactly
// the shifted pixels. Anomaly class id = index into cfg.defects.
inline std::vector<TextureImage> gen_texture_images(const TextureGenConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t h = cfg.height, w = cfg.width;

  auto background = [&]() {
    Tensor img({h, w});
    const double theta = (unit(rng) - 0.5) * 2.0 * cfg.orientation_jitter;
    const double phase = unit(rng) * 2.0 * std::numbers::pi;
    const double k = 2.0 * std::numbers::pi / cfg.grating_period;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double u = static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta);
        img.at(y, x) = 0.5 + cfg.grating_amplitude * std::sin(k * u + phase) + cfg.noise_std * noise(rng);
      }
    }
    return img;
  };

  std::vector<TextureImage> out;
  for (std::size_t i = 0; i < cfg.n_normal; ++i) {
    out.push_back({detail::make_id("img-n", i), 0, kNormalClass, background(),
                   PixelMask{h, w, std::vector<std::uint8_t>(h * w, 0)}});
  }
  std::size_t aid = 0;
  for (std::size_t c = 0; c < cfg.defects.size(); ++c) {
    const DefectType& d = cfg.defects[c];
    for (std::size_t i = 0; i < d.count; ++i) {
      TextureImage img{detail::make_id("img-a", aid++), 1, static_cast<int>(c), background(), {}};
      img.mask = detail::draw_defect_mask(d, h, w, rng);
      for (std::size_t p = 0; p < h * w; ++p) {
        if (img.mask.pixels[p]) img.pixels[p] += d.intensity_shift;
      }
      out.push_back(std::move(img));
    }
  }
  return out;
}

// Row-major sliding windows; each patch flattened to patch*patch values and
// standardized to mean 0, std 1 (std floored at 1e-6).
inline Bag extract_patches(const Tensor& image, std::size_t patch, std::size_t stride) {
  if (image.rank() != 2) throw DimensionError("extract_patches expects a 2-D image");
  if (stride == 0) throw ConfigError("stride must be >= 1");
  const PatchGeometry geo{image.rows(), image.cols(), patch, stride};
  if (patch == 0 || patch > geo.height || patch > geo.width || geo.count() == 0) {
    throw ConfigError("patch " + std::to_string(patch) + " / stride " + std::to_string(stride) +
                      " produce no windows on a " + image.shape_string() + " image");
  }
  const std::size_t d = patch * patch;
  Tensor inst({geo.count(), d});
  std::size_t idx = 0;
  for (std::size_t gr = 0; gr < geo.grid_rows(); ++gr) {
    for (std::size_t gc = 0; gc < geo.grid_cols(); ++gc, ++idx) {
      auto row = inst.row(idx);
      for (std::size_t dy = 0; dy < patch; ++dy) {
        for (std::size_t dx = 0; dx < patch; ++dx) {
          row[dy * patch + dx] = image.at(gr * stride + dy, gc * stride + dx);
        }
      }
      double mean = 0.0;
      for (double v : row) mean += v;
      mean /= static_cast<double>(d);
      double ss = 0.0;
      for (double v : row) ss += (v - mean) * (v - mean);
      const double sd = std::max(std::sqrt(ss / static_cast<double>(d)), 1e-6);
      for (double& v : row) v = (v - mean) / sd;
    }
  }
  Bag b;
  b.instances = std::move(inst);
  b.geometry = geo;
  return b;
}

inline std::vector<Bag> texture_bags(const std::vector<TextureImage>& images, std::size_t patch,
                                     std::size_t stride) {
  std::vector<Bag> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    Bag b = extract_patches(img.pixels, patch, stride);
    b.id = img.id;
    b.label = img.label;
    b.class_id = img.class_id;
    b.mask = img.mask;
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitMode { random_anomaly, open_set };

struct SplitSpec {
  SplitMode mode = SplitMode::random_anomaly;
  std::size_t n_labeled = 10;
  int seen_class = 0;
  double contamination = 0.0;
  double test_fraction = 0.3;  // share of normal samples held out for testing
  bool allow_high_contamination = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_labeled < 1) throw ConfigError("n_labeled must be >= 1");
    if (!(contamination >= 0.0)) throw ConfigError("contamination rate must be >= 0");
    if (contamination > 0.2 && !allow_high_contamination) {
      throw ConfigError("contamination above 0.2 requires an explicit override");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  }
};

struct Split {
  std::vector<Bag> train_normal;   // X_n, possibly contaminated
  std::vector<Bag> train_anomaly;  // X_a
  std::vector<Bag> test;
  std::size_t n_contaminated = 0;
};

// Normals are split train/test by test_fraction. Labeled anomalies come from
// every class (random mode) or only the seen class (open-set mode, where the
// rest of that class is dropped so the test set holds unseen classes only).
// Contamination moves round(rate * |X_n|) further anomalies into X_n with
// label 0 and removes them from the test set.
inline Split make_split(const std::vector<Bag>& dataset, const SplitSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> normals, labeled_pool, rest_pool;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Bag& b = dataset[i];
    if (b.label == 0) {
      normals.push_back(i);
    } else if (spec.mode == SplitMode::random_anomaly || b.class_id == spec.seen_class) {
      labeled_pool.push_back(i);
    } else {
      rest_pool.push_back(i);
    }
  }
  if (normals.size() < 2) throw ContractError("split needs at least 2 normal samples");
  if (labeled_pool.size() < spec.n_labeled) {
    throw ContractError("requested " + std::to_string(spec.n_labeled) + " labeled anomalies but only " +
                        std::to_string(labeled_pool.size()) + " are available" +
                        (spec.mode == SplitMode::open_set ? " in the seen class" : ""));
  }

  std::shuffle(normals.begin(), normals.end(), rng);
  std::size_t n_test = static_cast<std::size_t>(std::lround(spec.test_fraction * static_cast<double>(normals.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, normals.size() - 1);
  std::vector<std::size_t> test_idx(normals.begin(), normals.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train_norm(normals.begin() + static_cast<std::ptrdiff_t>(n_test), normals.end());

  std::shuffle(labeled_pool.begin(), labeled_pool.end(), rng);
  std::vector<std::size_t> labeled(labeled_pool.begin(), labeled_pool.begin() + static_cast<std::ptrdiff_t>(spec.n_labeled));
  if (spec.mode == SplitMode::random_anomaly) {
    rest_pool.assign(labeled_pool.begin() + static_cast<std::ptrdiff_t>(spec.n_labeled), labeled_pool.end());
    std::sort(rest_pool.begin(), rest_pool.end());
  }

  const std::size_t n_contam =
      static_cast<std::size_t>(std::lround(spec.contamination * static_cast<double>(train_norm.size())));
  if (rest_pool.size() < n_contam) {
    throw ContractError("contamination needs " + std::to_string(n_contam) + " anomalies but only " +
                        std::to_string(rest_pool.size()) + " remain after labeling");
  }
  std::shuffle(rest_pool.begin(), rest_pool.end(), rng);
  std::vector<std::size_t> contam(rest_pool.begin(), rest_pool.begin() + static_cast<std::ptrdiff_t>(n_contam));
  test_idx.insert(test_idx.end(), rest_pool.begin() + static_cast<std::ptrdiff_t>(n_contam), rest_pool.end());

  std::sort(train_norm.begin(), train_norm.end());
  std::sort(labeled.begin(), labeled.end());
  std::sort(contam.begin(), contam.end());
  std::sort(test_idx.begin(), test_idx.end());

  Split s;
  for (std::size_t i : train_norm) s.train_normal.push_back(dataset[i]);
  for (std::size_t i : contam) {
    Bag b = dataset[i];
    b.label = 0;
    s.train_normal.push_back(std::move(b));
  }
  for (std::size_t i : labeled) s.train_anomaly.push_back(dataset[i]);
  for (std::size_t i : test_idx) s.test.push_back(dataset[i]);
  s.n_contaminated = n_contam;
  return s;
}

}  // namespace devnet
