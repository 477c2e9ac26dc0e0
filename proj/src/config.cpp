#include "wtbcp/config.hpp"

#include <cmath>
#include <cstdio>

#include "wtbcp/error.hpp"

using nlohmann::json;

namespace wtbcp {

void TrainConfig::validate() const {
  if (pretrain_iterations <= 0 || ssl_iterations <= 0) throw ConfigError("iteration counts must be positive");
  if (pretrain_batch < 1) throw ConfigError("pretrain_batch must be >= 1");
  if (pairs_per_step < 1) throw ConfigError("pairs_per_step must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(lr_power >= 0.0)) throw ConfigError("lr_power must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(ema_lambda >= 0.0 && ema_lambda <= 1.0)) throw ConfigError("ema_lambda must lie in [0, 1]");
  if (!(mask_ratio > 0.0 && mask_ratio <= 1.0)) throw ConfigError("mask_ratio must lie in (0, 1]");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (!(consistency_weight >= 0.0)) throw ConfigError("consistency_weight must be >= 0");
  if (patch.size() != 2 && patch.size() != 3) throw ConfigError("patch must have 2 or 3 extents");
  for (int64_t d : patch) {
    if (d < 2) throw ConfigError("patch extents must be >= 2");
  }
  if (eval_interval < 0) throw ConfigError("eval_interval must be >= 0");
  if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"pretrain_iterations", c.pretrain_iterations},
       {"ssl_iterations", c.ssl_iterations},
       {"pretrain_batch", c.pretrain_batch},
       {"pairs_per_step", c.pairs_per_step},
       {"base_lr", c.base_lr},
       {"lr_power", c.lr_power},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"ema_lambda", c.ema_lambda},
       {"mask_ratio", c.mask_ratio},
       {"alpha", c.alpha},
       {"consistency_weight", c.consistency_weight},
       {"seed", c.seed},
       {"patch", c.patch},
       {"eval_interval", c.eval_interval},
       {"log_interval", c.log_interval},
       {"wavelet", std::string(to_string(c.wavelet))}};
}

void from_json(const json& j, TrainConfig& c) {
  j.at("pretrain_iterations").get_to(c.pretrain_iterations);
  j.at("ssl_iterations").get_to(c.ssl_iterations);
  j.at("pretrain_batch").get_to(c.pretrain_batch);
  j.at("pairs_per_step").get_to(c.pairs_per_step);
  j.at("base_lr").get_to(c.base_lr);
  j.at("lr_power").get_to(c.lr_power);
  j.at("momentum").get_to(c.momentum);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("ema_lambda").get_to(c.ema_lambda);
  j.at("mask_ratio").get_to(c.mask_ratio);
  j.at("alpha").get_to(c.alpha);
  j.at("consistency_weight").get_to(c.consistency_weight);
  j.at("seed").get_to(c.seed);
  j.at("patch").get_to(c.patch);
  j.at("eval_interval").get_to(c.eval_interval);
  j.at("log_interval").get_to(c.log_interval);
  c.wavelet = parse_wavelet_family(j.at("wavelet").get<std::string>());
}

RunConfig RunConfig::defaults_for_rank(int spatial_rank) {
  RunConfig rc;
  rc.model.spatial_rank = spatial_rank;
  if (spatial_rank == 3) {
    rc.model.base_width = 8;
    rc.train.pairs_per_step = 1;
    rc.train.pretrain_batch = 2;
    rc.train.patch = {32, 32, 32};
  }
  return rc;
}

namespace {

// Overwrites keys of `target` from `patch`, rejecting keys `target` lacks.
void merge_section(json& target, const json& patch, const std::string& section) {
  if (!patch.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    if (!target.contains(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
    target[key] = value;
  }
}

}  // namespace

void RunConfig::merge(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  json m = model;
  json t = train;
  for (const auto& [section, body] : doc.items()) {
    if (section == "model") {
      merge_section(m, body, section);
    } else if (section == "train") {
      merge_section(t, body, section);
    } else {
      throw ConfigError("unknown config section '" + section + "'");
    }
  }
  try {
    ModelConfig new_model = m.get<ModelConfig>();
    TrainConfig new_train = t.get<TrainConfig>();
    model = new_model;
    train = new_train;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw ConfigError("override '" + std::string(assignment) + "' must look like section.key=value");
  }
  const std::string section(assignment.substr(0, dot));
  const std::string key(assignment.substr(dot + 1, eq - dot - 1));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  merge(json{{section, {{key, value}}}});
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (static_cast<int>(train.patch.size()) != model.spatial_rank) {
    throw ConfigError("patch rank " + std::to_string(train.patch.size()) + " does not match model spatial_rank " +
                      std::to_string(model.spatial_rank));
  }
  for (size_t a = 0; a < train.patch.size(); ++a) {
    if (train.patch[a] % model.size_divisor() != 0) {
      throw ConfigError("patch extent " + std::to_string(train.patch[a]) + " along axis " + std::to_string(a) +
                        " is not divisible by " + std::to_string(model.size_divisor()));
    }
  }
}

json RunConfig::to_json() const { return {{"model", model}, {"train", train}}; }

std::string json_digest(const json& doc) {
  const std::string text = doc.dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace wtbcp
