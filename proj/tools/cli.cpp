#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "wtbcp/checkpoint.hpp"
#include "wtbcp/config.hpp"
#include "wtbcp/error.hpp"
#include "wtbcp/mixer.hpp"
#include "wtbcp/tensorio.hpp"
#include "wtbcp/trainer.hpp"
#include "wtbcp/wavelet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace wtbcp {

namespace {

constexpr const char* kCheckpointFile = "checkpoint.wtbcp";
constexpr const char* kLogFile = "log.jsonl";
constexpr const char* kConfigFile = "config.json";
constexpr const char* kCommandFile = "command.json";
constexpr const char* kReportFile = "report.json";

Shape parse_shape(const std::string& text) {
  Shape out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const int64_t v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("bad extent '" + item + "' in shape '" + text + "'");
    }
  }
  if (out.size() != 2 && out.size() != 3) throw ConfigError("shape '" + text + "' must have 2 or 3 extents");
  return out;
}

// Refuses to reuse a non-empty directory unless forced, in which case its
// contents are replaced.
void prepare_out(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
      for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

// A config file is either a {"model": ..., "train": ...} JSON document or
// lines of section.key=value (blank lines and # comments ignored).
void apply_config_file(RunConfig& rc, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json doc = json::parse(text, nullptr, false);
  if (!doc.is_discarded()) {
    rc.merge(doc);
    return;
  }
  std::stringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    rc.apply_override(line.substr(first, last - first + 1));
  }
}

struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigOptions& opts) {
  cmd->add_option("--config", opts.config_path, "Config file (JSON or section.key=value lines)");
  cmd->add_option("--set", opts.overrides, "Override one setting, e.g. train.ema_lambda=0.95 (repeatable)");
}

void apply_config_options(RunConfig& rc, const ConfigOptions& opts) {
  if (!opts.config_path.empty()) apply_config_file(rc, opts.config_path);
  for (const auto& o : opts.overrides) rc.apply_override(o);
  rc.validate();
}

void check_against_dataset(const RunConfig& rc, const Dataset& ds) {
  if (ds.spatial_rank() != rc.model.spatial_rank) {
    throw ConfigError("dataset has " + std::to_string(ds.spatial_rank()) + " spatial dims, model expects " +
                      std::to_string(rc.model.spatial_rank));
  }
  if (ds.num_classes != rc.model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(ds.num_classes) + " classes, model expects " +
                      std::to_string(rc.model.num_classes));
  }
  if (!ds.samples.empty() && ds.samples.front().image.channels() != rc.model.in_channels) {
    throw ConfigError("dataset images have " + std::to_string(ds.samples.front().image.channels()) +
                      " channels, model expects " + std::to_string(rc.model.in_channels));
  }
}

class JsonlLog {
 public:
  explicit JsonlLog(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path.string());
  }
  LogSink sink() {
    return [this](const json& line) {
      out_ << line.dump() << '\n';
      out_.flush();
    };
  }

 private:
  std::ofstream out_;
};

std::pair<size_t, size_t> distinct_pair(const std::vector<size_t>& pool, Rng& rng, const char* what) {
  const auto n = static_cast<int64_t>(pool.size());
  if (n < 2) throw SamplingError(std::string("need at least two ") + what + " samples");
  const int64_t a = uniform_index(rng, n);
  int64_t b = uniform_index(rng, n - 1);
  if (b >= a) ++b;
  return {pool[static_cast<size_t>(a)], pool[static_cast<size_t>(b)]};
}

XNetPlus load_model(const Checkpoint& ck, bool teacher) {
  XNetPlus model = build_model(ck.model);
  restore_state(*model, teacher ? ck.teacher : ck.student);
  return model;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct SynthOptions {
  int count = 40;
  std::string shape = "64,64";
  int classes = 4;
  double labeled = 0.1;
  uint64_t seed = 0;
  double noise = 0.05;
  std::string out;
  bool force = false;
};

int cmd_synth(const SynthOptions& o) {
  SyntheticConfig cfg;
  cfg.count = o.count;
  cfg.spatial_shape = parse_shape(o.shape);
  cfg.num_classes = o.classes;
  cfg.seed = o.seed;
  cfg.noise_fraction = o.noise;
  if (o.count < 1) throw ConfigError("--count must be >= 1");
  labeled_count(static_cast<size_t>(o.count), o.labeled);
  if (!(o.noise >= 0.0)) throw ConfigError("--noise must be >= 0");

  const Dataset ds = split_labeled(generate_synthetic(cfg), o.labeled, o.seed);
  prepare_out(o.out, o.force);
  const json command = {{"subcommand", "synth"},     {"count", o.count},   {"shape", cfg.spatial_shape},
                        {"classes", o.classes},      {"labeled", o.labeled}, {"seed", o.seed},
                        {"noise", o.noise}};
  write_dataset(ds, o.out, json{{"generator", command}});
  write_json(fs::path(o.out) / kCommandFile, command);
  std::cout << json{{"samples", ds.samples.size()},
                    {"labeled", ds.labeled_indices.size()},
                    {"unlabeled", ds.unlabeled_indices.size()}}
                   .dump()
            << '\n';
  return kExitOk;
}

struct PretrainOptions {
  std::string data;
  std::string out;
  bool force = false;
  ConfigOptions config;
};

int cmd_pretrain(const PretrainOptions& o) {
  const Dataset ds = load_dataset(o.data);
  RunConfig rc = RunConfig::defaults_for_rank(ds.spatial_rank());
  rc.model.num_classes = ds.num_classes;
  rc.model.in_channels = ds.samples.empty() ? 1 : ds.samples.front().image.channels();
  apply_config_options(rc, o.config);
  check_against_dataset(rc, ds);

  prepare_out(o.out, o.force);
  write_json(fs::path(o.out) / kConfigFile, rc.to_json());
  JsonlLog log(fs::path(o.out) / kLogFile);
  const Checkpoint ck = pretrain(ds, rc.model, rc.train, log.sink());
  save_checkpoint(ck, fs::path(o.out) / kCheckpointFile);
  std::cout << json{{"checkpoint", (fs::path(o.out) / kCheckpointFile).string()}, {"iteration", ck.iteration}}.dump()
            << '\n';
  return kExitOk;
}

struct TrainOptions {
  std::string data;
  std::string init;
  std::string val;
  std::string out;
  bool force = false;
  ConfigOptions config;
};

int cmd_train(const TrainOptions& o) {
  const Checkpoint ck = load_checkpoint(o.init);
  RunConfig rc{ck.model, ck.train};
  apply_config_options(rc, o.config);
  if (json_digest(json(rc.model)) != ck.config_hash()) {
    throw ConfigError("model config differs from the one stored in " + o.init);
  }
  const Dataset ds = load_dataset(o.data);
  check_against_dataset(rc, ds);
  std::optional<Dataset> val;
  if (!o.val.empty()) {
    val = load_dataset(o.val);
    check_against_dataset(rc, *val);
  }

  TrainingSession session(ck);
  session.train_config() = rc.train;

  prepare_out(o.out, o.force);
  write_json(fs::path(o.out) / kConfigFile, rc.to_json());
  JsonlLog log(fs::path(o.out) / kLogFile);
  train_ssl(session, ds, val ? &*val : nullptr, log.sink());
  save_checkpoint(session.to_checkpoint(), fs::path(o.out) / kCheckpointFile);
  const json last = session.metric_history.empty() ? json(nullptr) : session.metric_history.back();
  std::cout << json{{"checkpoint", (fs::path(o.out) / kCheckpointFile).string()},
                    {"iteration", session.iteration},
                    {"last_eval", last}}
                   .dump()
            << '\n';
  return kExitOk;
}

struct EvalOptions {
  std::string data;
  std::string checkpoint;
  std::string predictions;
  std::string out;
  bool force = false;
};

int cmd_eval(const EvalOptions& o) {
  if (o.checkpoint.empty() == o.predictions.empty()) {
    throw ConfigError("eval needs exactly one of --checkpoint or --predictions");
  }
  const Dataset ds = load_dataset(o.data);
  if (ds.labeled_indices.empty()) throw ValidationError("manifest " + o.data + " has no labels to evaluate against");

  json report;
  if (!o.checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    check_against_dataset(RunConfig{ck.model, ck.train}, ds);
    report = evaluate(ck, ds);
  } else {
    const Manifest preds = read_manifest(o.predictions);
    std::map<std::string, const Volume*> by_id;
    for (const auto& entry : preds.entries) {
      auto it = entry.volumes.find("prediction");
      if (it == entry.volumes.end()) it = entry.volumes.find("label");
      if (it != entry.volumes.end()) by_id[entry.id] = &it->second;
    }
    std::vector<Volume> p, g;
    for (size_t idx : ds.labeled_indices) {
      const auto& s = ds.samples[idx];
      auto it = by_id.find(s.id);
      if (it == by_id.end()) throw ValidationError("no prediction for sample '" + s.id + "'");
      Volume pred = *it->second;
      pred.set_kind(VolumeKind::label);
      pred.validate(ds.num_classes);
      if (pred.shape() != s.label->shape()) throw ShapeError("prediction for '" + s.id + "' has the wrong shape");
      p.push_back(std::move(pred));
      g.push_back(*s.label);
    }
    report = metric_report(p, g, ds.num_classes);
  }

  if (!o.out.empty()) {
    prepare_out(o.out, o.force);
    write_json(fs::path(o.out) / kReportFile, report);
  }
  std::cout << report.dump(2) << '\n';
  return kExitOk;
}

struct PredictOptions {
  std::string data;
  std::string checkpoint;
  std::string out;
  bool force = false;
};

int cmd_predict(const PredictOptions& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const Dataset ds = load_dataset(o.data);
  check_against_dataset(RunConfig{ck.model, ck.train}, ds);
  XNetPlus model = load_model(ck, false);

  Manifest out;
  out.num_classes = ds.num_classes;
  out.spatial_rank = ds.spatial_rank();
  out.metadata = {{"source", "predict"}, {"config_hash", ck.config_hash()}};
  for (const auto& s : ds.samples) {
    ManifestEntry entry{s.id, false, {}};
    entry.volumes.emplace("prediction", predict(model, s.image, ck.train.patch, ck.train.wavelet));
    out.entries.push_back(std::move(entry));
  }
  prepare_out(o.out, o.force);
  write_manifest(out, o.out);
  return kExitOk;
}

struct DecomposeOptions {
  std::string data;
  std::string family = "haar";
  std::string out;
  bool force = false;
};

int cmd_decompose(const DecomposeOptions& o) {
  const WaveletFamily family = parse_wavelet_family(o.family);
  const Dataset ds = load_dataset(o.data);
  Manifest out;
  out.num_classes = ds.num_classes;
  out.spatial_rank = ds.spatial_rank();
  out.metadata = {{"family", std::string(to_string(family))}, {"volumes", {"low", "main", "high"}}};
  for (const auto& s : ds.samples) {
    FrequencyTriple t = frequency_triple(s.image, family);
    ManifestEntry entry{s.id, s.label.has_value(), {}};
    entry.volumes.emplace("low", std::move(t.low));
    entry.volumes.emplace("main", std::move(t.main));
    entry.volumes.emplace("high", std::move(t.high));
    if (s.label) entry.volumes.emplace("label", *s.label);
    out.entries.push_back(std::move(entry));
  }
  prepare_out(o.out, o.force);
  write_manifest(out, o.out);
  return kExitOk;
}

struct MixDemoOptions {
  std::string data;
  std::string checkpoint;
  double ratio = 2.0 / 3.0;
  uint64_t seed = 0;
  bool mask_ones = false;
  std::string out;
  bool force = false;
};

int cmd_mix_demo(const MixDemoOptions& o) {
  const Dataset ds = load_dataset(o.data);
  Rng rng = derive_rng(o.seed, 0);
  const auto [i, j] = distinct_pair(ds.labeled_indices, rng, "labeled");
  const auto [p, q] = distinct_pair(ds.unlabeled_indices, rng, "unlabeled");
  const Shape spatial = ds.samples[i].image.spatial_shape();
  const MixMask mask = o.mask_ones ? MixMask::ones(spatial) : generate_mask(spatial, o.ratio, rng);

  // Pseudo-labels come from a trained teacher when one is given; otherwise
  // the unlabeled content is marked background.
  Volume pseudo_p, pseudo_q;
  std::string pseudo_source = "background";
  if (!o.checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    check_against_dataset(RunConfig{ck.model, ck.train}, ds);
    XNetPlus teacher = load_model(ck, true);
    pseudo_p = predict(teacher, ds.samples[p].image, ck.train.patch, ck.train.wavelet);
    pseudo_q = predict(teacher, ds.samples[q].image, ck.train.patch, ck.train.wavelet);
    pseudo_source = "teacher";
  } else {
    Shape shape{1};
    shape.insert(shape.end(), spatial.begin(), spatial.end());
    pseudo_p = Volume(shape, VolumeKind::label);
    pseudo_q = Volume(shape, VolumeKind::label);
  }

  const auto& si = ds.samples[i];
  const auto& sj = ds.samples[j];
  MixedImages mixed = mix_pair(si.image, sj.image, ds.samples[p].image, ds.samples[q].image, mask);
  Shape mask_shape{1};
  mask_shape.insert(mask_shape.end(), spatial.begin(), spatial.end());
  Volume mask_volume(mask_shape, std::vector<float>(mask.values.begin(), mask.values.end()), VolumeKind::label);

  Manifest out;
  out.num_classes = ds.num_classes;
  out.spatial_rank = ds.spatial_rank();
  out.metadata = {{"ratio", mask.ratio},
                  {"seed", o.seed},
                  {"mask_ones", o.mask_ones},
                  {"crop_offset", mask.crop_offset},
                  {"crop_size", mask.crop_size},
                  {"zero_count", mask.zero_count()},
                  {"pseudo_labels", pseudo_source},
                  {"sources", {{"labeled_i", si.id}, {"labeled_j", sj.id},
                               {"unlabeled_p", ds.samples[p].id}, {"unlabeled_q", ds.samples[q].id}}}};
  ManifestEntry entry{"pair", false, {}};
  entry.volumes.emplace("x_in", std::move(mixed.inward));
  entry.volumes.emplace("x_out", std::move(mixed.outward));
  entry.volumes.emplace("y_in", mix_labels(*sj.label, pseudo_p, mask, MixDirection::inward));
  entry.volumes.emplace("y_out", mix_labels(*si.label, pseudo_q, mask, MixDirection::outward));
  entry.volumes.emplace("mask", std::move(mask_volume));
  out.entries.push_back(std::move(entry));
  prepare_out(o.out, o.force);
  write_manifest(out, o.out);
  return kExitOk;
}

int report_failure(const char* category, const std::exception& e, int code) {
  std::cerr << "wtbcp: " << category << ": " << e.what() << '\n';
  return code;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Wavelet-augmented bidirectional copy-paste segmentation"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Intra-op threads (1 keeps runs bit-reproducible)")->check(CLI::PositiveNumber);

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic segmentation dataset manifest");
  c_synth->add_option("--count", synth.count, "Number of samples");
  c_synth->add_option("--shape", synth.shape, "Spatial shape, e.g. 64,64 or 32,32,32");
  c_synth->add_option("--classes", synth.classes, "Number of classes including background");
  c_synth->add_option("--labeled", synth.labeled, "Labeled fraction in (0, 1]");
  c_synth->add_option("--seed", synth.seed, "Random seed");
  c_synth->add_option("--noise", synth.noise, "Gaussian noise std as a fraction of the intensity range");
  c_synth->add_option("--out", synth.out, "Output manifest directory")->required();
  c_synth->add_flag("--force", synth.force, "Overwrite a non-empty output directory");

  PretrainOptions pre;
  auto* c_pre = app.add_subcommand("pretrain", "Supervised teacher pretraining on the labeled samples");
  c_pre->add_option("--data", pre.data, "Training manifest")->required();
  c_pre->add_option("--out", pre.out, "Output directory")->required();
  c_pre->add_flag("--force", pre.force, "Overwrite a non-empty output directory");
  add_config_options(c_pre, pre.config);

  TrainOptions train;
  auto* c_train = app.add_subcommand("train", "Semi-supervised training from a checkpoint");
  c_train->add_option("--data", train.data, "Training manifest")->required();
  c_train->add_option("--init", train.init, "Pretrained or partially trained checkpoint")->required();
  c_train->add_option("--val", train.val, "Validation manifest (default: the labeled training samples)");
  c_train->add_option("--out", train.out, "Output directory")->required();
  c_train->add_flag("--force", train.force, "Overwrite a non-empty output directory");
  add_config_options(c_train, train.config);

  EvalOptions ev;
  auto* c_eval = app.add_subcommand("eval", "Dice, Jaccard, 95HD and ASD per foreground class");
  c_eval->add_option("--data", ev.data, "Manifest with ground-truth labels")->required();
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint whose student is evaluated");
  c_eval->add_option("--predictions", ev.predictions, "Manifest of predicted label maps");
  c_eval->add_option("--out", ev.out, "Directory for report.json");
  c_eval->add_flag("--force", ev.force, "Overwrite a non-empty output directory");

  PredictOptions pr;
  auto* c_pred = app.add_subcommand("predict", "Write student label predictions as a manifest");
  c_pred->add_option("--data", pr.data, "Input manifest")->required();
  c_pred->add_option("--checkpoint", pr.checkpoint, "Checkpoint")->required();
  c_pred->add_option("--out", pr.out, "Output manifest directory")->required();
  c_pred->add_flag("--force", pr.force, "Overwrite a non-empty output directory");

  DecomposeOptions dec;
  auto* c_dec = app.add_subcommand("decompose", "Write the low/main/high frequency images of every sample");
  c_dec->add_option("--data", dec.data, "Input manifest")->required();
  c_dec->add_option("--family", dec.family, "Wavelet family: haar or db2");
  c_dec->add_option("--out", dec.out, "Output manifest directory")->required();
  c_dec->add_flag("--force", dec.force, "Overwrite a non-empty output directory");

  MixDemoOptions mix;
  auto* c_mix = app.add_subcommand("mix-demo", "Write one bidirectional copy-paste example");
  c_mix->add_option("--data", mix.data, "Manifest with at least two labeled and two unlabeled samples")->required();
  c_mix->add_option("--checkpoint", mix.checkpoint, "Teacher checkpoint for pseudo-labels");
  c_mix->add_option("--ratio", mix.ratio, "Crop ratio of the pasted block");
  c_mix->add_option("--seed", mix.seed, "Random seed");
  c_mix->add_flag("--mask-ones", mix.mask_ones, "Use an all-ones mask (nothing pasted)");
  c_mix->add_option("--out", mix.out, "Output manifest directory")->required();
  c_mix->add_flag("--force", mix.force, "Overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    torch::set_num_threads(threads);
    if (*c_synth) return cmd_synth(synth);
    if (*c_pre) return cmd_pretrain(pre);
    if (*c_train) return cmd_train(train);
    if (*c_eval) return cmd_eval(ev);
    if (*c_pred) return cmd_predict(pr);
    if (*c_dec) return cmd_decompose(dec);
    if (*c_mix) return cmd_mix_demo(mix);
  } catch (const NumericError& e) {
    return report_failure("numeric failure", e, kExitNumeric);
  } catch (const IoError& e) {
    return report_failure("io error", e, kExitIo);
  } catch (const FormatError& e) {
    return report_failure("format error", e, kExitIo);
  } catch (const Error& e) {
    return report_failure("error", e, kExitConfig);
  } catch (const fs::filesystem_error& e) {
    return report_failure("io error", e, kExitIo);
  } catch (const std::exception& e) {
    return report_failure("error", e, kExitConfig);
  }
  return kExitConfig;
}

}  // namespace wtbcp
