#pragma once

// File formats:
//   *.jsonl  one bag per line
//            {"id","y","class_id","instances":[[...]],"geometry"?,"mask_path"?}
//   *.ckpt   binary checkpoint, little-endian (layout in save_checkpoint)
//   *.pgm    binary PGM: 8-bit masks, 16-bit saliency maps
//   *.csv    training history

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "devnet/bag.hpp"
#include "devnet/errors.hpp"
#include "devnet/explainer.hpp"
#include "devnet/mil.hpp"
#include "devnet/network.hpp"
#include "devnet/prior.hpp"
#include "devnet/trainer.hpp"

namespace devnet {

namespace fs = std::filesystem;

namespace detail {

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::ofstream open_for_write(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PGM

inline void write_mask_pgm(const fs::path& path, const PixelMask& mask) {
  auto out = detail::open_for_write(path);
  out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  for (auto p : mask.pixels) out.put(static_cast<char>(p ? 255 : 0));
}

inline PixelMask read_mask_pgm(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
    }
    if (pos == start) throw ParseError(path.string() + ": expected PGM " + what, start);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw ParseError(path.string() + ": not a binary PGM", 0);
  pos = 2;
  const std::size_t w = read_int("width"), h = read_int("height"), maxval = read_int("maxval");
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw ParseError(path.string() + ": bad PGM header", pos);
  ++pos;  // single whitespace before raster
  const std::size_t bpp = maxval < 256 ? 1 : 2;
  if (bytes.size() < pos + w * h * bpp) throw ParseError(path.string() + ": truncated PGM raster", bytes.size());
  PixelMask m{h, w, std::vector<std::uint8_t>(w * h)};
  for (std::size_t i = 0; i < w * h; ++i) {
    const std::size_t at = pos + i * bpp;
    const unsigned v = bpp == 1 ? static_cast<unsigned char>(bytes[at])
                                : (static_cast<unsigned char>(bytes[at]) << 8) | static_cast<unsigned char>(bytes[at + 1]);
    m.pixels[i] = v != 0;
  }
  return m;
}

// 16-bit, min-max scaled to [0, 65535]; big-endian samples per the PGM format.
inline void write_saliency_pgm(const fs::path& path, const SaliencyMap& map) {
  auto out = detail::open_for_write(path);
  out << "P5\n" << map.width() << ' ' << map.height() << "\n65535\n";
  const auto [lo, hi] = std::minmax_element(map.values.data().begin(), map.values.data().end());
  const double range = *hi - *lo;
  for (double v : map.values.data()) {
    const double t = range > 0.0 ? (v - *lo) / range : 0.0;
    const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
    out.put(static_cast<char>(q >> 8));
    out.put(static_cast<char>(q & 0xff));
  }
}

inline void write_saliency_csv(const fs::path& path, const SaliencyMap& map) {
  auto out = detail::open_for_write(path);
  out << std::setprecision(17);
  for (std::size_t y = 0; y < map.height(); ++y) {
    for (std::size_t x = 0; x < map.width(); ++x) out << (x ? "," : "") << map.values.at(y, x);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSONL bags

inline nlohmann::json bag_to_json(const Bag& bag, const std::string& mask_path = {}) {
  nlohmann::json j;
  j["id"] = bag.id;
  j["y"] = bag.label;
  j["class_id"] = bag.class_id;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < bag.size(); ++r) {
    const auto row = bag.instances.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["instances"] = std::move(rows);
  if (bag.geometry) {
    j["geometry"] = {{"height", bag.geometry->height},
                     {"width", bag.geometry->width},
                     {"patch", bag.geometry->patch},
                     {"stride", bag.geometry->stride}};
  }
  if (!mask_path.empty()) j["mask_path"] = mask_path;
  return j;
}

// Masks go to <dir of path>/masks/<id>.pgm and are referenced relatively.
inline void save_bags(const fs::path& path, const std::vector<Bag>& bags) {
  auto out = detail::open_for_write(path);
  const fs::path base = path.parent_path();
  for (const Bag& b : bags) {
    std::string mask_path;
    if (b.mask) {
      mask_path = "masks/" + b.id + ".pgm";
      write_mask_pgm(base / mask_path, *b.mask);
    }
    out << bag_to_json(b, mask_path).dump() << '\n';
  }
}

inline Bag bag_from_json(const nlohmann::json& j, const fs::path& base, std::size_t offset) {
  auto fail = [&](const std::string& what) -> ParseError { return ParseError("bag record: " + what, offset); };
  if (!j.is_object()) throw fail("expected an object");
  for (const char* key : {"id", "y", "class_id", "instances"}) {
    if (!j.contains(key)) throw fail(std::string("missing field '") + key + "'");
  }
  Bag b;
  if (!j["id"].is_string()) throw fail("'id' must be a string");
  b.id = j["id"].get<std::string>();
  if (!j["y"].is_number_integer() || !j["class_id"].is_number_integer()) throw fail("'y' and 'class_id' must be integers");
  b.label = j["y"].get<int>();
  if (b.label != 0 && b.label != 1) throw fail("'y' must be 0 or 1");
  b.class_id = j["class_id"].get<int>();

  const auto& rows = j["instances"];
  if (!rows.is_array() || rows.empty()) throw fail("'instances' must be a non-empty array");
  const std::size_t n = rows.size();
  if (!rows[0].is_array() || rows[0].empty()) throw fail("instance 0 must be a non-empty array");
  const std::size_t d = rows[0].size();
  std::vector<double> data;
  data.reserve(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    if (!rows[r].is_array() || rows[r].size() != d) {
      throw fail("instance " + std::to_string(r) + " does not have " + std::to_string(d) + " features");
    }
    for (const auto& v : rows[r]) {
      if (!v.is_number()) throw fail("instance " + std::to_string(r) + " holds a non-numeric value");
      data.push_back(v.get<double>());
    }
  }
  b.instances = Tensor({n, d}, std::move(data));

  if (j.contains("geometry")) {
    const auto& g = j["geometry"];
    PatchGeometry geo;
    try {
      geo = {g.at("height").get<std::size_t>(), g.at("width").get<std::size_t>(), g.at("patch").get<std::size_t>(),
             g.at("stride").get<std::size_t>()};
    } catch (const nlohmann::json::exception&) {
      throw fail("malformed 'geometry'");
    }
    if (geo.stride == 0 || geo.count() != n || geo.patch * geo.patch != d) {
      throw fail("geometry describes " + std::to_string(geo.count()) + " patches of " +
                 std::to_string(geo.patch * geo.patch) + " values but the record holds " + std::to_string(n) +
                 " x " + std::to_string(d));
    }
    b.geometry = geo;
  }
  if (j.contains("mask_path")) {
    if (!j["mask_path"].is_string()) throw fail("'mask_path' must be a string");
    b.mask = read_mask_pgm(base / j["mask_path"].get<std::string>());
    if (b.geometry && (b.mask->height != b.geometry->height || b.mask->width != b.geometry->width)) {
      throw fail("mask size does not match geometry");
    }
  }
  return b;
}

inline std::vector<Bag> parse_bags(const std::string& text, const fs::path& base = {}) {
  std::vector<Bag> bags;
  std::size_t line_start = 0;
  while (line_start < text.size()) {
    std::size_t end = text.find('\n', line_start);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + line_start, end - line_start);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("malformed JSON line: " + std::string(e.what()), line_start + (e.byte > 0 ? e.byte - 1 : 0));
      }
      bags.push_back(bag_from_json(j, base, line_start));
    }
    line_start = end + 1;
  }
  return bags;
}

inline std::vector<Bag> load_bags(const fs::path& path) {
  return parse_bags(detail::read_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers unsigned, all little-endian):
//   char[8]  "DEVNETCK"
//   u32      format version (1)
//   u32      loss kind (0 deviation, 1 focal)
//   u64      seed
//   f64      k_fraction, margin, prior mu, prior sigma
//   u64      prior l
//   u64      number of arch entries A, then A x u64 widths [D, ..., L]
//   per feature layer, then the scorer:
//     u64 rows, u64 cols, rows*cols x f64 weights (row-major), cols x f64 bias

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'D', 'E', 'V', 'N', 'E', 'T', 'C', 'K'};

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  LossKind loss = LossKind::deviation;
  std::uint64_t seed = 0;
  MilConfig mil;
  PriorConfig prior;
  std::vector<std::size_t> arch;
};

struct Checkpoint {
  CheckpointHeader header;
  NetworkParams params;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const char* p, std::size_t n) { bytes_.append(p, n); }
  const std::string& bytes() const { return bytes_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view b) : b_(b) {}

  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  std::uint64_t u64(const char* what) { return le(8, what); }
  double f64(const char* what) { return std::bit_cast<double>(le(8, what)); }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

  std::string_view raw(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw ParseError(std::string("truncated checkpoint while reading ") + what, pos_);
  }
  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view b_;
  std::size_t pos_ = 0;
};

inline void write_layer(ByteWriter& w, const DenseLayer& l) {
  w.u64(l.fan_in());
  w.u64(l.fan_out());
  for (double v : l.weight.data()) w.f64(v);
  for (double v : l.bias.data()) w.f64(v);
}

inline DenseLayer read_layer(ByteReader& r, std::size_t fan_in, std::size_t fan_out, const std::string& name) {
  const std::size_t at = r.offset();
  const std::uint64_t rows = r.u64("layer rows");
  const std::uint64_t cols = r.u64("layer cols");
  if (rows != fan_in || cols != fan_out) {
    throw ParseError(name + " length fields " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " disagree with the architecture (" + std::to_string(fan_in) + "x" +
                         std::to_string(fan_out) + ")",
                     at);
  }
  DenseLayer l{Tensor({fan_in, fan_out}), Tensor({fan_out})};
  for (double& v : l.weight.storage()) v = r.f64("weights");
  for (double& v : l.bias.storage()) v = r.f64("bias");
  return l;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(ck.header.version);
  w.u32(ck.header.loss == LossKind::deviation ? 0u : 1u);
  w.u64(ck.header.seed);
  w.f64(ck.header.mil.k_fraction);
  w.f64(ck.header.mil.margin);
  w.f64(ck.header.prior.mu);
  w.f64(ck.header.prior.sigma);
  w.u64(ck.header.prior.l);
  const std::vector<std::size_t> arch = ck.params.arch();
  w.u64(arch.size());
  for (std::size_t a : arch) w.u64(a);
  for (const auto& l : ck.params.feature_layers) detail::write_layer(w, l);
  detail::write_layer(w, ck.params.scorer);
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(sizeof kCheckpointMagic, "magic") != std::string_view(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw ParseError("not a devnet checkpoint (bad magic)", 0);
  }
  Checkpoint ck;
  const std::size_t version_at = r.offset();
  ck.header.version = r.u32("version");
  if (ck.header.version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(ck.header.version) + " (expected " +
                         std::to_string(kCheckpointVersion) + ")",
                     version_at);
  }
  const std::size_t loss_at = r.offset();
  const std::uint32_t loss = r.u32("loss kind");
  if (loss > 1) throw ParseError("unknown loss kind " + std::to_string(loss), loss_at);
  ck.header.loss = loss == 0 ? LossKind::deviation : LossKind::focal;
  ck.header.seed = r.u64("seed");
  ck.header.mil.k_fraction = r.f64("k_fraction");
  ck.header.mil.margin = r.f64("margin");
  ck.header.prior.mu = r.f64("prior mu");
  ck.header.prior.sigma = r.f64("prior sigma");
  ck.header.prior.l = r.u64("prior l");

  const std::size_t arch_at = r.offset();
  const std::uint64_t n_arch = r.u64("arch length");
  if (n_arch < 2 || n_arch > r.remaining() / 8) {
    throw ParseError("implausible architecture length " + std::to_string(n_arch), arch_at);
  }
  for (std::uint64_t i = 0; i < n_arch; ++i) {
    const std::size_t at = r.offset();
    const std::uint64_t width = r.u64("arch width");
    if (width == 0 || width > (std::uint64_t{1} << 24)) {
      throw ParseError("implausible layer width " + std::to_string(width), at);
    }
    ck.header.arch.push_back(width);
  }
  // Weights must fit in what is left of the file before anything is allocated.
  std::uint64_t expected = 0;
  for (std::size_t i = 0; i + 1 < ck.header.arch.size(); ++i) {
    expected += 16 + 8 * (ck.header.arch[i] * ck.header.arch[i + 1] + ck.header.arch[i + 1]);
  }
  expected += 16 + 8 * (ck.header.arch.back() + 1);
  if (expected > r.remaining()) {
    throw ParseError("truncated checkpoint: parameters need " + std::to_string(expected) + " bytes, " +
                         std::to_string(r.remaining()) + " remain",
                     bytes.size());
  }
  for (std::size_t i = 0; i + 1 < ck.header.arch.size(); ++i) {
    ck.params.feature_layers.push_back(
        detail::read_layer(r, ck.header.arch[i], ck.header.arch[i + 1], "layer " + std::to_string(i)));
  }
  ck.params.scorer = detail::read_layer(r, ck.header.arch.back(), 1, "scorer");
  if (r.remaining() != 0) throw ParseError("trailing bytes after checkpoint payload", r.offset());
  return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  auto out = detail::open_for_write(path);
  const std::string bytes = encode_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(detail::read_file(path)); }

inline Checkpoint make_checkpoint(const NetworkParams& params, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.header.loss = cfg.loss;
  ck.header.seed = cfg.seed;
  ck.header.mil = cfg.mil;
  ck.header.prior = cfg.prior;
  ck.header.arch = params.arch();
  ck.params = params;
  return ck;
}

// ---------------------------------------------------------------------------
// History CSV: iteration,loss[,auc]; the AUC sits on the last iteration of
// each epoch and is blank elsewhere.

inline void write_history_csv(std::ostream& os, const TrainHistory& h, std::size_t iters_per_epoch) {
  const bool with_auc = !h.epoch_auc.empty();
  os << (with_auc ? "iteration,loss,auc\n" : "iteration,loss\n");
  os << std::setprecision(17);
  for (std::size_t i = 0; i < h.iteration_loss.size(); ++i) {
    os << i << ',' << h.iteration_loss[i];
    if (with_auc) {
      os << ',';
      if (iters_per_epoch > 0 && (i + 1) % iters_per_epoch == 0) {
        const std::size_t epoch = i / iters_per_epoch;
        if (epoch < h.epoch_auc.size()) os << h.epoch_auc[epoch];
      }
    }
    os << '\n';
  }
}

}  // namespace devnet
