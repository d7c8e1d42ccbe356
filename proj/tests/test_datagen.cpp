#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "devnet/datagen.hpp"
#include "devnet/evaluator.hpp"

namespace devnet {
namespace {

TEST(Tabular, StandardConfigShape) {
  const auto data = gen_tabular(standard_tabular_config(1));
  ASSERT_EQ(data.size(), 2600u);
  std::size_t normals = 0;
  std::vector<std::size_t> per_class(3, 0);
  for (const Bag& b : data) {
    EXPECT_EQ(b.size(), 1u);
    EXPECT_EQ(b.dim(), 8u);
    if (b.label == 0) {
      ++normals;
      EXPECT_EQ(b.class_id, kNormalClass);
    } else {
      ++per_class[static_cast<std::size_t>(b.class_id)];
    }
  }
  EXPECT_EQ(normals, 2000u);
  EXPECT_EQ(per_class, (std::vector<std::size_t>{200, 200, 200}));
}

TEST(Tabular, DeterministicPerSeed) {
  EXPECT_EQ(gen_tabular(standard_tabular_config(5)), gen_tabular(standard_tabular_config(5)));
  EXPECT_NE(gen_tabular(standard_tabular_config(5)), gen_tabular(standard_tabular_config(6)));
}

TEST(Tabular, NoAnomalyClassesGivesOnlyNormals) {
  TabularGenConfig cfg = standard_tabular_config(2);
  cfg.anomaly_classes.clear();
  const auto data = gen_tabular(cfg);
  EXPECT_EQ(data.size(), 2000u);
  for (const Bag& b : data) EXPECT_EQ(b.label, 0);
}

TEST(Tabular, DuplicateAnomalyMeansRejected) {
  TabularGenConfig cfg = standard_tabular_config(2);
  cfg.anomaly_classes[1].mean = cfg.anomaly_classes[0].mean;
  EXPECT_THROW(gen_tabular(cfg), ConfigError);
}

// Distance to the nearest normal centroid is a near perfect detector here,
// which confirms the classes are placed away from the normal mass.
TEST(Tabular, NearestCentroidSeparates) {
  const TabularGenConfig cfg = standard_tabular_config(3);
  const auto data = gen_tabular(cfg);
  std::vector<double> s;
  std::vector<int> y;
  for (const Bag& b : data) {
    double best = 1e300;
    for (const auto& c : cfg.normal_components) {
      double d = 0.0;
      for (std::size_t i = 0; i < 8; ++i) d += (b.instances[i] - c.mean[i]) * (b.instances[i] - c.mean[i]);
      best = std::min(best, d);
    }
    s.push_back(best);
    y.push_back(b.label);
  }
  EXPECT_GT(auc_roc(s, y), 0.99);
}

TEST(Texture, ImageCountsAndIds) {
  TextureGenConfig cfg;
  cfg.n_normal = 5;
  for (auto& d : cfg.defects) d.count = 2;
  const auto imgs = gen_texture_images(cfg);
  ASSERT_EQ(imgs.size(), 11u);
  EXPECT_EQ(imgs[0].id.rfind("img-n", 0), 0u);
  EXPECT_EQ(imgs[5].id.rfind("img-a", 0), 0u);
  EXPECT_EQ(imgs[5].class_id, 0);
  EXPECT_EQ(imgs[10].class_id, 2);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(imgs[i].mask.positives(), 0u);
}

TEST(Texture, MaskAreasStayInRange) {
  TextureGenConfig cfg;
  cfg.n_normal = 1;
  cfg.seed = 9;
  const auto imgs = gen_texture_images(cfg);
  for (const auto& img : imgs) {
    if (img.label == 0) continue;
    const DefectType& d = cfg.defects[static_cast<std::size_t>(img.class_id)];
    EXPECT_GE(img.mask.positives(), d.min_area) << img.id;
    EXPECT_LE(img.mask.positives(), d.max_area) << img.id;
  }
}

TEST(Texture, FlatBackgroundExposesExactShift) {
  TextureGenConfig cfg;
  cfg.grating_amplitude = 0.0;
  cfg.noise_std = 0.0;
  cfg.n_normal = 2;
  const auto imgs = gen_texture_images(cfg);
  for (const auto& img : imgs) {
    const double shift = img.label ? cfg.defects[static_cast<std::size_t>(img.class_id)].intensity_shift : 0.0;
    for (std::size_t p = 0; p < img.pixels.size(); ++p) {
      EXPECT_DOUBLE_EQ(img.pixels[p], img.mask.pixels[p] ? 0.5 + shift : 0.5);
    }
  }
}

TEST(Texture, ZeroShiftDefectLeavesPixelsUntouched) {
  TextureGenConfig cfg;
  cfg.grating_amplitude = 0.0;
  cfg.noise_std = 0.0;
  cfg.n_normal = 0;
  for (auto& d : cfg.defects) d.intensity_shift = 0.0;
  for (const auto& img : gen_texture_images(cfg)) {
    EXPECT_GT(img.mask.positives(), 0u);
    for (double v : img.pixels.storage()) EXPECT_EQ(v, 0.5);
  }
}

TEST(Texture, OversizedDefectIsConfigError) {
  TextureGenConfig cfg;
  cfg.defects = {{DefectShape::blob, 0.5, 2000, 3000, 1}};
  EXPECT_THROW(gen_texture_images(cfg), ConfigError);
}

TEST(Patches, GridCounts) {
  const Tensor img({32, 32}, 0.0);
  EXPECT_EQ(extract_patches(img, 8, 4).size(), 49u);
  EXPECT_EQ(extract_patches(img, 8, 8).size(), 16u);
  EXPECT_EQ(extract_patches(img, 8, 4).dim(), 64u);
  EXPECT_THROW(extract_patches(img, 40, 4), ConfigError);
}

TEST(Patches, ContentsMatchDirectCrop) {
  std::mt19937_64 rng(1);
  Tensor img({12, 10});
  for (double& v : img.storage()) v = std::uniform_real_distribution<double>(0, 1)(rng);
  const Bag b = extract_patches(img, 4, 3);
  ASSERT_TRUE(b.geometry.has_value());
  EXPECT_EQ(b.geometry->grid_rows(), 3u);
  EXPECT_EQ(b.geometry->grid_cols(), 3u);
  for (std::size_t gr = 0; gr < 3; ++gr) {
    for (std::size_t gc = 0; gc < 3; ++gc) {
      std::vector<double> crop;
      for (std::size_t y = gr * 3; y < gr * 3 + 4; ++y)
        for (std::size_t x = gc * 3; x < gc * 3 + 4; ++x) crop.push_back(img.at(y, x));
      const double m = std::accumulate(crop.begin(), crop.end(), 0.0) / 16.0;
      double v = 0.0;
      for (double c : crop) v += (c - m) * (c - m);
      const double sd = std::sqrt(v / 16.0);
      const auto row = b.instances.row(gr * 3 + gc);
      for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(row[i], (crop[i] - m) / sd, 1e-12);
    }
  }
}

TEST(Patches, FlatPatchStandardizesToZero) {
  const Bag b = extract_patches(Tensor({8, 8}, 3.0), 4, 4);
  for (double v : b.instances.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Split, RandomModeAccounting) {
  const auto data = gen_tabular(standard_tabular_config(1));
  SplitSpec spec;
  spec.seed = 3;
  const Split s = make_split(data, spec);
  EXPECT_EQ(s.train_normal.size(), 1400u);
  EXPECT_EQ(s.train_anomaly.size(), 10u);
  EXPECT_EQ(s.test.size(), 600u + 590u);
  EXPECT_EQ(s.n_contaminated, 0u);
  std::set<std::string> ids;
  for (const auto* part : {&s.train_normal, &s.train_anomaly, &s.test})
    for (const Bag& b : *part) EXPECT_TRUE(ids.insert(b.id).second) << "duplicate " << b.id;
  for (const Bag& b : s.train_anomaly) EXPECT_EQ(b.label, 1);
}

TEST(Split, ContaminationCount) {
  TabularGenConfig cfg = standard_tabular_config(1);
  cfg.n_normal = 500;
  const auto data = gen_tabular(cfg);
  SplitSpec spec;
  spec.test_fraction = 0.5;
  spec.contamination = 0.1;
  const Split s = make_split(data, spec);
  // 250 clean normals, 25 hidden anomalies.
  EXPECT_EQ(s.n_contaminated, 25u);
  EXPECT_EQ(s.train_normal.size(), 275u);
  std::size_t hidden = 0;
  for (const Bag& b : s.train_normal) {
    EXPECT_EQ(b.label, 0);
    hidden += b.class_id != kNormalClass;
  }
  EXPECT_EQ(hidden, 25u);
}

TEST(Split, ContaminationFiftyOfFiveHundred) {
  TabularGenConfig cfg = standard_tabular_config(2);
  cfg.n_normal = 1000;
  SplitSpec spec;
  spec.test_fraction = 0.5;
  spec.contamination = 0.1;
  EXPECT_EQ(make_split(gen_tabular(cfg), spec).n_contaminated, 50u);
}

TEST(Split, HighContaminationNeedsOverride) {
  const auto data = gen_tabular(standard_tabular_config(1));
  SplitSpec spec;
  spec.contamination = 0.25;
  EXPECT_THROW(make_split(data, spec), ConfigError);
  spec.allow_high_contamination = true;
  EXPECT_NO_THROW(make_split(data, spec));
}

TEST(Split, OpenSetKeepsClassesDisjoint) {
  const auto data = gen_tabular(standard_tabular_config(4));
  SplitSpec spec;
  spec.mode = SplitMode::open_set;
  spec.seen_class = 1;
  const Split s = make_split(data, spec);
  for (const Bag& b : s.train_anomaly) EXPECT_EQ(b.class_id, 1);
  std::size_t test_anom = 0;
  for (const Bag& b : s.test) {
    if (b.label) {
      EXPECT_NE(b.class_id, 1);
      ++test_anom;
    }
  }
  EXPECT_EQ(test_anom, 400u);
}

TEST(Split, TooFewLabeledAnomaliesIsContractError) {
  const auto data = gen_tabular(standard_tabular_config(1));
  SplitSpec spec;
  spec.n_labeled = 601;
  EXPECT_THROW(make_split(data, spec), ContractError);
  spec.mode = SplitMode::open_set;
  spec.n_labeled = 201;
  EXPECT_THROW(make_split(data, spec), ContractError);
}

TEST(Split, DeterministicPerSeed) {
  const auto data = gen_tabular(standard_tabular_config(1));
  SplitSpec spec;
  spec.seed = 8;
  spec.contamination = 0.05;
  const Split a = make_split(data, spec), b = make_split(data, spec);
  EXPECT_EQ(a.train_normal, b.train_normal);
  EXPECT_EQ(a.train_anomaly, b.train_anomaly);
  EXPECT_EQ(a.test, b.test);
}

}  // namespace
}  // namespace devnet
