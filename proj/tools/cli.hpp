#pragma once

// Subcommand implementations for the `devnet` binary. Kept in a header so
// the test suites can drive the CLI in-process through run_cli().

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "devnet/devnet.hpp"

namespace devnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kDiverged = 3 };

inline fs::path default_output_dir() {
  const char* env = std::getenv("DEVNET_OUTPUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

// Written before any output artifact and completed with the wall-clock time
// once the command finishes.
class Manifest {
 public:
  Manifest(fs::path path, std::string command, std::vector<std::string> args)
      : path_(std::move(path)), start_(std::chrono::steady_clock::now()) {
    doc_["tool"] = "devnet";
    doc_["version"] = kVersion;
    doc_["command"] = std::move(command);
    doc_["args"] = std::move(args);
    doc_["wall_clock_seconds"] = nullptr;
  }

  json& config() { return doc_["config"]; }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void input(const std::string& role, const fs::path& p) { doc_["inputs"][role] = p.string(); }
  void output(const std::string& role, const fs::path& p) { doc_["outputs"][role] = p.string(); }

  void write() const {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::trunc);
    out << doc_.dump(2) << '\n';
  }

  void finish() {
    doc_["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write();
  }

 private:
  fs::path path_;
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

inline json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"iters_per_epoch", c.iters_per_epoch},
          {"batch_size", c.batch_size},
          {"hidden", c.hidden},
          {"learning_rate", c.optimizer.learning_rate},
          {"weight_decay", c.optimizer.weight_decay},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"k_fraction", c.mil.k_fraction},
          {"margin", c.mil.margin},
          {"prior_mu", c.prior.mu},
          {"prior_sigma", c.prior.sigma},
          {"prior_l", c.prior.l},
          {"loss", to_string(c.loss)},
          {"focal_gamma", c.focal.gamma},
          {"focal_alpha", c.focal.alpha},
          {"seed", c.seed}};
}

struct SynthOptions {
  std::string kind = "tabular";
  std::uint64_t seed = 0;
  std::string mode = "random";
  std::size_t n_labeled = 10;
  int seen_class = 0;
  double contamination = 0.0;
  bool allow_high_contamination = false;
  double test_fraction = 0.3;
  std::size_t n_normal = 0;  // 0 = generator default
  std::size_t anomalies_per_class = 0;
  std::size_t image_size = 32;
  std::size_t patch = 8;
  std::size_t stride = 4;
  double noise_std = 0.05;
  fs::path out_dir;
};

inline int cmd_synth(const SynthOptions& o, Manifest& manifest) {
  SplitSpec spec;
  spec.mode = o.mode == "open-set" ? SplitMode::open_set : SplitMode::random_anomaly;
  spec.n_labeled = o.n_labeled;
  spec.seen_class = o.seen_class;
  spec.contamination = o.contamination;
  spec.allow_high_contamination = o.allow_high_contamination;
  spec.test_fraction = o.test_fraction;
  spec.seed = o.seed;

  json& cfg = manifest.config();
  cfg = {{"kind", o.kind},
         {"mode", o.mode},
         {"n_labeled", o.n_labeled},
         {"contamination", o.contamination},
         {"test_fraction", o.test_fraction}};
  if (spec.mode == SplitMode::open_set) cfg["seen_class"] = o.seen_class;

  std::vector<Bag> dataset;
  if (o.kind == "tabular") {
    TabularGenConfig g = standard_tabular_config(o.seed);
    if (o.n_normal) g.n_normal = o.n_normal;
    if (o.anomalies_per_class) {
      for (auto& a : g.anomaly_classes) a.count = o.anomalies_per_class;
    }
    cfg["n_normal"] = g.n_normal;
    cfg["dim"] = g.dim;
    dataset = gen_tabular(g);
  } else {
    TextureGenConfig g;
    g.height = g.width = o.image_size;
    g.patch = o.patch;
    g.stride = o.stride;
    g.noise_std = o.noise_std;
    g.seed = o.seed;
    if (o.n_normal) g.n_normal = o.n_normal;
    if (o.anomalies_per_class) {
      for (auto& d : g.defects) d.count = o.anomalies_per_class;
    }
    cfg["n_normal"] = g.n_normal;
    cfg["image_size"] = g.height;
    cfg["patch"] = g.patch;
    cfg["stride"] = g.stride;
    cfg["noise_std"] = g.noise_std;
    dataset = texture_bags(gen_texture_images(g), g.patch, g.stride);
  }
  const Split split = make_split(dataset, spec);

  const fs::path normal_path = o.out_dir / "train_normal.jsonl";
  const fs::path anomaly_path = o.out_dir / "train_anomaly.jsonl";
  const fs::path test_path = o.out_dir / "test.jsonl";
  manifest.output("train_normal", normal_path);
  manifest.output("train_anomaly", anomaly_path);
  manifest.output("test", test_path);
  manifest.write();

  save_bags(normal_path, split.train_normal);
  save_bags(anomaly_path, split.train_anomaly);
  save_bags(test_path, split.test);

  std::size_t test_anom = 0;
  for (const Bag& b : split.test) test_anom += b.label;
  std::cout << "train normal:  " << split.train_normal.size() << " (" << split.n_contaminated
            << " contaminated)\n"
            << "train anomaly: " << split.train_anomaly.size() << "\n"
            << "test:          " << split.test.size() << " (" << test_anom << " anomalous)\n";
  return kOk;
}

struct TrainOptions {
  TrainConfig config;
  std::string loss = "deviation";
  fs::path data_dir;
  fs::path normal_path;
  fs::path anomaly_path;
  fs::path val_anomalies;
  fs::path checkpoint;
  fs::path history;
};

inline int cmd_train(TrainOptions o, Manifest& manifest) {
  o.config.loss = o.loss == "focal" ? LossKind::focal : LossKind::deviation;
  if (o.normal_path.empty()) o.normal_path = o.data_dir / "train_normal.jsonl";
  if (o.anomaly_path.empty()) o.anomaly_path = o.data_dir / "train_anomaly.jsonl";
  manifest.config() = to_json(o.config);
  manifest.seed(o.config.seed);
  manifest.input("train_normal", o.normal_path);
  manifest.input("train_anomaly", o.anomaly_path);
  manifest.output("checkpoint", o.checkpoint);
  manifest.output("history", o.history);
  manifest.write();

  std::vector<Bag> normals = load_bags(o.normal_path);
  std::vector<Bag> anomalies;
  if (fs::exists(o.anomaly_path)) anomalies = load_bags(o.anomaly_path);
  if (anomalies.empty()) {
    throw ConfigError("no labeled anomalies in '" + o.anomaly_path.string() +
                      "': training needs a few labeled anomalies (X_a)");
  }

  std::vector<Bag> validation;
  if (!o.val_anomalies.empty()) {
    // Hold out 10% of X_n plus the given anomalies.
    std::mt19937_64 rng(o.config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(normals.begin(), normals.end(), rng);
    const std::size_t n_val = std::max<std::size_t>(1, normals.size() / 10);
    validation.assign(normals.end() - static_cast<std::ptrdiff_t>(n_val), normals.end());
    normals.resize(normals.size() - n_val);
    for (Bag& b : load_bags(o.val_anomalies)) validation.push_back(std::move(b));
    manifest.input("val_anomalies", o.val_anomalies);
  }

  TrainResult result;
  try {
    result = train(normals, anomalies, o.config, validation);
  } catch (const DivergenceError& e) {
    save_checkpoint(o.checkpoint, make_checkpoint(e.last_good(), o.config));
    std::cerr << "error: " << e.what() << "; last good parameters written to " << o.checkpoint << "\n";
    manifest.finish();
    return kDiverged;
  }

  save_checkpoint(o.checkpoint, make_checkpoint(result.params, o.config));
  {
    if (o.history.has_parent_path()) fs::create_directories(o.history.parent_path());
    std::ofstream h(o.history, std::ios::trunc);
    write_history_csv(h, result.history, o.config.iters_per_epoch);
  }
  std::cout << "trained " << o.config.epochs << " epochs x " << o.config.iters_per_epoch << " iterations ("
            << result.history.iteration_loss.size() << " history rows), loss " << to_string(o.config.loss) << "\n";
  if (!result.history.epoch_loss.empty()) {
    std::cout << "epoch loss: first " << result.history.epoch_loss.front() << ", last "
              << result.history.epoch_loss.back() << "\n";
  }
  return kOk;
}

struct ScoredSample {
  std::string id;
  int label;
  double phi_k;
  double dev;
  double probability;
};

inline std::vector<ScoredSample> score_dataset(const Checkpoint& ck, const std::vector<Bag>& bags) {
  const ReferenceStats ref = expected_reference(ck.header.prior);
  std::vector<ScoredSample> out;
  out.reserve(bags.size());
  for (const Bag& b : bags) {
    const double phi = score_bag(b, ck.params, ck.header.mil.k_fraction).value;
    const double dev = deviation(phi, ref);
    out.push_back({b.id, b.label, phi, dev, score_to_probability(dev)});
  }
  return out;
}

struct EvalOptions {
  fs::path checkpoint;
  fs::path data;
  fs::path out;  // score: csv path; eval: report stem
  fs::path train_normal;
  std::size_t risk_samples = 0;
  double risk_margin = 2.0;
  std::uint64_t seed = 0;
  std::size_t n_thresholds = 201;
};

inline int cmd_score(const EvalOptions& o, Manifest& manifest) {
  manifest.input("checkpoint", o.checkpoint);
  manifest.input("data", o.data);
  manifest.output("scores", o.out);
  manifest.write();
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const auto scored = score_dataset(ck, load_bags(o.data));
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  std::ofstream out(o.out, std::ios::trunc);
  out << "id,label,phi_k,dev,probability\n" << std::setprecision(17);
  for (const auto& s : scored) {
    out << s.id << ',' << s.label << ',' << s.phi_k << ',' << s.dev << ',' << s.probability << '\n';
  }
  std::cout << "scored " << scored.size() << " samples -> " << o.out.string() << "\n";
  return kOk;
}

inline int cmd_eval(const EvalOptions& o, Manifest& manifest) {
  const fs::path csv = fs::path(o.out.string() + ".csv");
  const fs::path txt = fs::path(o.out.string() + ".txt");
  manifest.input("checkpoint", o.checkpoint);
  manifest.input("data", o.data);
  manifest.output("report_csv", csv);
  manifest.output("report_txt", txt);
  manifest.config() = {{"n_thresholds", o.n_thresholds}, {"risk_samples", o.risk_samples}};
  manifest.seed(o.seed);
  manifest.write();

  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const std::vector<Bag> bags = load_bags(o.data);
  const auto scored = score_dataset(ck, bags);
  std::vector<double> devs;
  std::vector<int> labels;
  for (const auto& s : scored) {
    devs.push_back(s.dev);
    labels.push_back(s.label);
  }
  EvalReport report = evaluate_scores(devs, labels, o.n_thresholds);

  if (o.risk_samples > 0) {
    if (o.train_normal.empty()) throw ContractError("--risk-samples needs --train-normal");
    std::vector<std::vector<double>> normals;
    for (const Bag& b : load_bags(o.train_normal)) {
      if (b.size() != 1) throw ContractError("open-space risk is defined for single-instance (tabular) data");
      normals.emplace_back(b.instances.data().begin(), b.instances.data().end());
    }
    const ReferenceStats ref = expected_reference(ck.header.prior);
    auto dev_of = [&](std::span<const double> x) {
      const Tensor t({1, x.size()}, std::vector<double>(x.begin(), x.end()));
      return deviation(score_bag(Bag{"", 0, kNormalClass, t, {}, {}}, ck.params, ck.header.mil.k_fraction).value, ref);
    };
    std::mt19937_64 rng(o.seed);
    report.open_space_risk = estimate_open_space_risk(dev_of, normals, bounding_box(normals, o.risk_margin), kZ95,
                                                      o.risk_samples, open_space_radius(normals), rng);
  }

  {
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    std::ofstream c(csv, std::ios::trunc);
    write_report_csv(c, report);
    std::ofstream t(txt, std::ios::trunc);
    write_report_text(t, report);
  }
  write_report_text(std::cout, report);
  return kOk;
}

struct ExplainOptions {
  fs::path checkpoint;
  fs::path data;
  fs::path out_dir;
  std::vector<std::string> image_ids;
  double sigma = 0.0;
};

inline int cmd_explain(const ExplainOptions& o, Manifest& manifest) {
  manifest.input("checkpoint", o.checkpoint);
  manifest.input("data", o.data);
  manifest.output("saliency_dir", o.out_dir);
  manifest.config() = {{"image_ids", o.image_ids}, {"sigma", o.sigma}};
  manifest.write();

  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const std::vector<Bag> bags = load_bags(o.data);
  std::vector<const Bag*> chosen;
  if (o.image_ids.empty()) {
    for (const Bag& b : bags) {
      if (b.label == 1) chosen.push_back(&b);
    }
  } else {
    for (const std::string& id : o.image_ids) {
      auto it = std::find_if(bags.begin(), bags.end(), [&](const Bag& b) { return b.id == id; });
      if (it == bags.end()) throw ContractError("image id '" + id + "' not found in " + o.data.string());
      chosen.push_back(&*it);
    }
  }
  double auc_sum = 0.0;
  std::size_t auc_n = 0;
  std::cout << std::setprecision(6) << std::fixed;
  for (const Bag* b : chosen) {
    const SaliencyMap map = explain(*b, ck.params, ck.header.mil.k_fraction, o.sigma);
    write_saliency_pgm(o.out_dir / (b->id + ".pgm"), map);
    write_saliency_csv(o.out_dir / (b->id + ".csv"), map);
    std::cout << b->id;
    if (b->mask && b->mask->positives() > 0 && b->mask->positives() < b->mask->pixels.size()) {
      const double a = pixel_auc(map, *b->mask);
      auc_sum += a;
      ++auc_n;
      std::cout << " pixel_auc " << a;
    }
    std::cout << '\n';
  }
  if (auc_n) std::cout << "mean pixel_auc " << auc_sum / static_cast<double>(auc_n) << " over " << auc_n << " images\n";
  return kOk;
}

inline std::vector<std::string> split_csv_sizes(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) parts.push_back(item);
  return parts;
}

// Entry point; `args` excludes the program name.
inline int run_cli(std::vector<std::string> args) {
  // --manifest FILE replays the argument list recorded in a manifest.
  if (args.size() == 2 && args[0] == "--manifest") {
    std::ifstream in(args[1]);
    if (!in) {
      std::cerr << "error: cannot read manifest " << args[1] << "\n";
      return kUsage;
    }
    try {
      const json m = json::parse(in);
      return run_cli(m.at("args").get<std::vector<std::string>>());
    } catch (const json::exception& e) {
      std::cerr << "error: malformed manifest: " << e.what() << "\n";
      return kDataError;
    }
  }

  CLI::App app{"devnet: few-shot anomaly detection with deviation networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  fs::path out_dir = default_output_dir();

  // synth
  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and few-shot split");
  synth->add_option("--kind", so.kind, "tabular or texture")->check(CLI::IsMember({"tabular", "texture"}));
  synth->add_option("--seed", so.seed);
  synth->add_option("--out-dir", out_dir, "output directory (default $DEVNET_OUTPUT_DIR or .)");
  synth->add_option("--mode", so.mode)->check(CLI::IsMember({"random", "open-set"}));
  synth->add_option("--n-labeled", so.n_labeled, "labeled anomalies in X_a");
  auto* seen_opt = synth->add_option("--seen-class", so.seen_class, "anomaly class used for X_a in open-set mode");
  synth->add_option("--contamination", so.contamination, "share of |X_n| replaced by unlabeled anomalies");
  synth->add_flag("--allow-high-contamination", so.allow_high_contamination);
  synth->add_option("--test-fraction", so.test_fraction);
  synth->add_option("--n-normal", so.n_normal);
  synth->add_option("--anomalies-per-class", so.anomalies_per_class);
  auto* size_opt = synth->add_option("--image-size", so.image_size);
  auto* patch_opt = synth->add_option("--patch", so.patch);
  auto* stride_opt = synth->add_option("--stride", so.stride);
  auto* noise_opt = synth->add_option("--noise-std", so.noise_std);

  // train
  TrainOptions to;
  std::string hidden = "64,32";
  auto* train_cmd = app.add_subcommand("train", "train a scoring network");
  train_cmd->add_option("--data", to.data_dir, "directory holding train_normal.jsonl / train_anomaly.jsonl");
  train_cmd->add_option("--normal", to.normal_path);
  train_cmd->add_option("--anomaly", to.anomaly_path);
  train_cmd->add_option("--val-anomalies", to.val_anomalies, "hold out 10% of X_n plus these anomalies for per-epoch AUC");
  train_cmd->add_option("--out-dir", out_dir);
  train_cmd->add_option("--checkpoint", to.checkpoint);
  train_cmd->add_option("--history", to.history);
  train_cmd->add_option("--loss", to.loss)->check(CLI::IsMember({"deviation", "focal"}));
  train_cmd->add_option("--epochs", to.config.epochs);
  train_cmd->add_option("--iters-per-epoch", to.config.iters_per_epoch);
  train_cmd->add_option("--batch-size", to.config.batch_size);
  train_cmd->add_option("--hidden", hidden, "comma-separated feature widths, last = L");
  train_cmd->add_option("--lr", to.config.optimizer.learning_rate);
  train_cmd->add_option("--weight-decay", to.config.optimizer.weight_decay);
  train_cmd->add_option("--beta1", to.config.optimizer.beta1);
  train_cmd->add_option("--beta2", to.config.optimizer.beta2);
  train_cmd->add_option("--eps", to.config.optimizer.eps);
  train_cmd->add_option("--k-fraction", to.config.mil.k_fraction);
  train_cmd->add_option("--margin", to.config.mil.margin);
  train_cmd->add_option("--prior-mu", to.config.prior.mu);
  train_cmd->add_option("--prior-sigma", to.config.prior.sigma);
  train_cmd->add_option("--prior-l", to.config.prior.l);
  train_cmd->add_option("--focal-gamma", to.config.focal.gamma);
  train_cmd->add_option("--focal-alpha", to.config.focal.alpha);
  train_cmd->add_option("--seed", to.config.seed);

  // score / eval
  EvalOptions eo;
  auto* score_cmd = app.add_subcommand("score", "per-sample phi_K, deviation and tail probability");
  auto* eval_cmd = app.add_subcommand("eval", "AUC-ROC and F1 sweep on a labeled set");
  for (auto* c : {score_cmd, eval_cmd}) {
    c->add_option("--checkpoint", eo.checkpoint)->required();
    c->add_option("--data", eo.data)->required();
    c->add_option("--out-dir", out_dir);
    c->add_option("--out", eo.out);
  }
  eval_cmd->add_option("--n-thresholds", eo.n_thresholds);
  eval_cmd->add_option("--train-normal", eo.train_normal, "training normals for the open-space risk estimate");
  eval_cmd->add_option("--risk-samples", eo.risk_samples, "Monte-Carlo samples for open-space risk (0 = off)");
  eval_cmd->add_option("--risk-margin", eo.risk_margin, "padding of the sampling box around X_n");
  eval_cmd->add_option("--seed", eo.seed);

  // explain
  ExplainOptions xo;
  auto* explain_cmd = app.add_subcommand("explain", "gradient saliency maps for image bags");
  explain_cmd->add_option("--checkpoint", xo.checkpoint)->required();
  explain_cmd->add_option("--data", xo.data)->required();
  explain_cmd->add_option("--out-dir", out_dir);
  explain_cmd->add_option("--image-id", xo.image_ids, "explain only these ids (default: all anomalies)");
  explain_cmd->add_option("--sigma", xo.sigma, "blur sigma (default scales 4 px at 128 px)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
    if (synth->parsed()) {
      const bool texture_flags = size_opt->count() || patch_opt->count() || stride_opt->count() || noise_opt->count();
      if (so.kind == "tabular" && texture_flags) {
        throw CLI::ValidationError("--image-size/--patch/--stride/--noise-std apply to --kind texture only");
      }
      if (seen_opt->count() && so.mode != "open-set") {
        throw CLI::ValidationError("--seen-class requires --mode open-set");
      }
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  std::vector<std::string> recorded = args;
  Manifest manifest(out_dir / (command + ".manifest.json"), command, recorded);
  try {
    int rc = kOk;
    if (synth->parsed()) {
      so.out_dir = out_dir;
      manifest.seed(so.seed);
      rc = cmd_synth(so, manifest);
    } else if (train_cmd->parsed()) {
      to.config.hidden.clear();
      for (const auto& w : split_csv_sizes(hidden)) to.config.hidden.push_back(std::stoul(w));
      if (to.checkpoint.empty()) to.checkpoint = out_dir / "model.ckpt";
      if (to.history.empty()) to.history = out_dir / "history.csv";
      if (to.data_dir.empty()) to.data_dir = out_dir;
      rc = cmd_train(to, manifest);
    } else if (score_cmd->parsed()) {
      if (eo.out.empty()) eo.out = out_dir / "scores.csv";
      rc = cmd_score(eo, manifest);
    } else if (eval_cmd->parsed()) {
      if (eo.out.empty()) eo.out = out_dir / "report";
      rc = cmd_eval(eo, manifest);
    } else if (explain_cmd->parsed()) {
      xo.out_dir = out_dir / "saliency";
      rc = cmd_explain(xo, manifest);
    }
    if (rc == kOk) manifest.finish();
    return rc;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: bad number in arguments: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace devnet::cli
