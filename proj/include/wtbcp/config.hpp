#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "wtbcp/volume.hpp"
#include "wtbcp/wavelet.hpp"
#include "wtbcp/xnetplus.hpp"

namespace wtbcp {

struct TrainConfig {
  int64_t pretrain_iterations = 1000;
  int64_t ssl_iterations = 1000;
  int64_t pretrain_batch = 4;  // labeled crops per pretraining step
  int64_t pairs_per_step = 4;  // labeled pairs and unlabeled pairs per SSL step
  double base_lr = 0.01;
  double lr_power = 0.9;  // polynomial decay exponent
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double ema_lambda = 0.99;
  double mask_ratio = 2.0 / 3.0;
  double alpha = 0.5;
  double consistency_weight = 1.0;
  uint64_t seed = 0;
  Shape patch{64, 64};
  int64_t eval_interval = 0;  // 0 evaluates only at the end of SSL training
  int64_t log_interval = 1;
  WaveletFamily wavelet = WaveletFamily::haar;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Defaults that depend on dimensionality: base width 16 and 4 pairs per
// step in 2D, base width 8 and 1 pair per step in 3D.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  static RunConfig defaults_for_rank(int spatial_rank);

  // Merges a {"model": {...}, "train": {...}} document. Unknown sections or
  // keys raise ConfigError.
  void merge(const nlohmann::json& doc);
  // Applies one "section.key=value" override; the value is parsed as JSON
  // when possible and as a string otherwise.
  void apply_override(std::string_view assignment);
  void validate() const;

  nlohmann::json to_json() const;
};

// Stable 64-bit FNV-1a digest of a JSON document, as 16 hex digits.
std::string json_digest(const nlohmann::json& doc);

}  // namespace wtbcp
