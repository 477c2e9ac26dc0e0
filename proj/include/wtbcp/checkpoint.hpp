#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "wtbcp/config.hpp"
#include "wtbcp/xnetplus.hpp"

namespace wtbcp {

using TensorMap = std::map<std::string, torch::Tensor>;

enum class TrainingPhase { pretrain, ssl };

std::string_view to_string(TrainingPhase phase);
TrainingPhase parse_training_phase(std::string_view text);

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  TrainingPhase phase = TrainingPhase::pretrain;
  int64_t iteration = 0;  // completed iterations within `phase`
  TensorMap student;
  TensorMap teacher;
  TensorMap momentum;  // optimizer momentum buffers, keyed by student parameter name
  nlohmann::json metric_history = nlohmann::json::array();

  // Digest of the model config; a run refuses checkpoints whose digest
  // differs from its own model config.
  std::string config_hash() const;
  void validate() const;
};

// Single-file container:
//   8 bytes  magic "WTBCPCK1"
//   8 bytes  little-endian header length H
//   H bytes  JSON header (configs, phase, iteration, history, tensor index)
//   payload  raw little-endian float32 tensors at the offsets in the index
// Saving then loading reproduces every tensor bit for bit.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies a model's state (parameters + float buffers) into a map, cloned and
// detached.
TensorMap capture_state(const torch::nn::Module& model);
// Writes a state map back into a model. Name sets must match exactly.
void restore_state(torch::nn::Module& model, const TensorMap& state);

}  // namespace wtbcp
