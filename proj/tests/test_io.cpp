#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "devnet/datagen.hpp"
#include "devnet/io.hpp"

namespace devnet {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("devnet_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Jsonl, TwoLineFixture) {
  const std::string text =
      R"({"id":"a","y":0,"class_id":-1,"instances":[[1.0,2.0]]})"
      "\n"
      R"({"id":"b","y":1,"class_id":2,"instances":[[0.5,-1],[3,4]]})"
      "\n";
  const auto bags = parse_bags(text);
  ASSERT_EQ(bags.size(), 2u);
  EXPECT_EQ(bags[0].id, "a");
  EXPECT_EQ(bags[0].instances.storage(), (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(bags[1].label, 1);
  EXPECT_EQ(bags[1].class_id, 2);
  EXPECT_EQ(bags[1].size(), 2u);
  EXPECT_EQ(bags[1].instances.at(1, 0), 3.0);
}

TEST(Jsonl, ErrorsCarryByteOffset) {
  const std::string good = R"({"id":"a","y":0,"class_id":-1,"instances":[[1]]})";
  const std::string text = good + "\n" + R"({"id":"b","y":0,"class_id":-1,"instances":[[1],[2,3]]})" + "\n";
  try {
    parse_bags(text);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), good.size() + 1);
  }
  EXPECT_THROW(parse_bags(good + "\n{not json\n"), ParseError);
  EXPECT_THROW(parse_bags(R"({"id":"a","y":2,"class_id":-1,"instances":[[1]]})"), ParseError);
}

TEST(Jsonl, GeometryMustMatchInstanceCount) {
  const std::string text =
      R"({"id":"a","y":0,"class_id":-1,"instances":[[1,2,3,4]],)"
      R"("geometry":{"height":4,"width":4,"patch":2,"stride":2}})";
  EXPECT_THROW(parse_bags(text), ParseError);
}

TEST(Jsonl, RoundTripWithMasks) {
  const fs::path dir = scratch_dir("roundtrip");
  TextureGenConfig cfg;
  cfg.n_normal = 2;
  for (auto& d : cfg.defects) d.count = 1;
  const auto bags = texture_bags(gen_texture_images(cfg), cfg.patch, cfg.stride);
  save_bags(dir / "data.jsonl", bags);
  EXPECT_TRUE(fs::exists(dir / "masks" / (bags.back().id + ".pgm")));
  const auto back = load_bags(dir / "data.jsonl");
  EXPECT_EQ(back, bags);
}

TEST(Jsonl, TabularRoundTripIsExact) {
  const fs::path dir = scratch_dir("tabular");
  TabularGenConfig cfg = standard_tabular_config(3);
  cfg.n_normal = 50;
  const auto bags = gen_tabular(cfg);
  save_bags(dir / "t.jsonl", bags);
  EXPECT_EQ(load_bags(dir / "t.jsonl"), bags);
}

TEST(Pgm, MaskRoundTrip) {
  const fs::path dir = scratch_dir("pgm");
  PixelMask m{3, 5, {0, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 1, 0, 1}};
  write_mask_pgm(dir / "m.pgm", m);
  EXPECT_EQ(read_mask_pgm(dir / "m.pgm"), m);
}

TEST(Pgm, TruncatedMaskIsParseError) {
  const fs::path dir = scratch_dir("pgm_bad");
  std::ofstream(dir / "m.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
  EXPECT_THROW(read_mask_pgm(dir / "m.pgm"), ParseError);
  std::ofstream(dir / "n.pgm", std::ios::binary) << "P2\n1 1\n255\n0";
  EXPECT_THROW(read_mask_pgm(dir / "n.pgm"), ParseError);
}

TEST(Pgm, SaliencyIsSixteenBit) {
  const fs::path dir = scratch_dir("sal");
  SaliencyMap m{"s", Tensor::matrix(1, 3, {0.0, 0.5, 1.0})};
  write_saliency_pgm(dir / "s.pgm", m);
  std::ifstream in(dir / "s.pgm", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const std::string header = "P5\n3 1\n65535\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 4]), 0xFF);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 5]), 0xFF);
}

Checkpoint sample_checkpoint() {
  TrainConfig cfg;
  cfg.seed = 42;
  cfg.loss = LossKind::focal;
  cfg.mil.k_fraction = 0.25;
  return make_checkpoint(init_params({5, 4, 3}, 9), cfg);
}

TEST(Checkpoint, RoundTrip) {
  const Checkpoint ck = sample_checkpoint();
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.header.seed, 42u);
  EXPECT_EQ(back.header.loss, LossKind::focal);
  EXPECT_EQ(back.header.mil.k_fraction, 0.25);
  EXPECT_EQ(back.header.arch, (std::vector<std::size_t>{5, 4, 3}));
  const fs::path dir = scratch_dir("ck");
  save_checkpoint(dir / "m.ckpt", ck);
  EXPECT_EQ(load_checkpoint(dir / "m.ckpt").params, ck.params);
}

TEST(Checkpoint, StartsWithMagicAndVersion) {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  EXPECT_EQ(bytes.substr(0, 8), "DEVNETCK");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9], 0);
}

TEST(Checkpoint, TruncationIsParseError) {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, cut)), ParseError) << cut;
  }
}

TEST(Checkpoint, WrongVersionReportsOffset) {
  std::string bytes = encode_checkpoint(sample_checkpoint());
  bytes[8] = 7;
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }
}

TEST(Checkpoint, CorruptedLengthField) {
  std::string bytes = encode_checkpoint(sample_checkpoint());
  // arch length lives after magic, 2 x u32, u64 seed, 4 x f64, u64 l
  const std::size_t at = 8 + 4 + 4 + 8 + 32 + 8;
  bytes[at + 6] = 0x7f;
  EXPECT_THROW(decode_checkpoint(bytes), ParseError);
  EXPECT_THROW(decode_checkpoint(std::string("NOTACKPT") + bytes.substr(8)), ParseError);
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(sample_checkpoint()) + "x"), ParseError);
}

TEST(History, CsvLayout) {
  TrainHistory h;
  h.iteration_loss = {3.0, 2.0, 1.5, 1.0};
  h.epoch_auc = {0.75, 0.875};
  std::ostringstream os;
  write_history_csv(os, h, 2);
  EXPECT_EQ(os.str(), "iteration,loss,auc\n0,3,\n1,2,0.75\n2,1.5,\n3,1,0.875\n");
  h.epoch_auc.clear();
  std::ostringstream plain;
  write_history_csv(plain, h, 2);
  EXPECT_EQ(plain.str(), "iteration,loss\n0,3\n1,2\n2,1.5\n3,1\n");
}

}  // namespace
}  // namespace devnet
