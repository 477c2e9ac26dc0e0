#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "wtbcp/checkpoint.hpp"
#include "wtbcp/config.hpp"
#include "wtbcp/losses.hpp"
#include "wtbcp/mixer.hpp"
#include "wtbcp/tensorio.hpp"
#include "wtbcp/wavelet.hpp"
#include "wtbcp/xnetplus.hpp"

namespace wtbcp {

// Receives one JSON object per logged iteration or evaluation.
using LogSink = std::function<void(const nlohmann::json&)>;

// Plain SGD with momentum and L2 weight decay, matching torch.optim.SGD
// (dampening 0, no Nesterov). Momentum buffers are keyed by parameter name so
// they can be checkpointed.
class Sgd {
 public:
  Sgd(std::vector<std::pair<std::string, torch::Tensor>> params, double momentum, double weight_decay);

  void zero_grad();
  void step(double lr);

  const TensorMap& momentum_buffers() const { return buffers_; }
  void load_momentum_buffers(const TensorMap& buffers);

 private:
  std::vector<std::pair<std::string, torch::Tensor>> params_;
  double momentum_;
  double weight_decay_;
  TensorMap buffers_;
};

// base_lr * (1 - iteration / total)^power
double poly_lr(double base_lr, int64_t iteration, int64_t total, double power);

// Theta_t <- lambda * Theta_t + (1 - lambda) * Theta_s for every parameter and
// batch-norm statistic. Name sets must agree (ContractError otherwise).
void ema_update(torch::nn::Module& teacher, const torch::nn::Module& student, double lambda);
void ema_update(TensorMap& teacher, const TensorMap& student, double lambda);

// Live mean-teacher state: two models of identical architecture and the
// student's optimizer.
class TrainingSession {
 public:
  TrainingSession(const ModelConfig& model, const TrainConfig& train);
  explicit TrainingSession(const Checkpoint& checkpoint);

  Checkpoint to_checkpoint() const;

  XNetPlus& student() { return student_; }
  XNetPlus& teacher() { return teacher_; }
  const ModelConfig& model_config() const { return model_config_; }
  const TrainConfig& train_config() const { return train_; }
  TrainConfig& train_config() { return train_; }
  Sgd& optimizer() { return optimizer_; }

  TrainingPhase phase = TrainingPhase::pretrain;
  int64_t iteration = 0;
  nlohmann::json metric_history = nlohmann::json::array();

  // Copies the student into the teacher and clears optimizer state; used at
  // the pretrain -> SSL boundary.
  void start_ssl();

 private:
  ModelConfig model_config_;
  TrainConfig train_;
  XNetPlus student_{nullptr};
  XNetPlus teacher_{nullptr};
  Sgd optimizer_;
};

// Batches the WT triples of a list of image volumes into network input.
TripleBatch make_triple_batch(const std::vector<Volume>& images, WaveletFamily family);

// Stacks single-channel label volumes into an (N, spatial...) long tensor.
torch::Tensor label_tensor(const std::vector<Volume>& labels);

// Hardens (N, K, spatial...) probabilities to label volumes by argmax.
std::vector<Volume> argmax_labels(const torch::Tensor& probs);

// Supervised training on labeled crops; returns a checkpoint whose student and
// teacher are identical. Throws ConfigError for an empty labeled set.
Checkpoint pretrain(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
                    const LogSink& log = {});

struct LabeledPair {
  Volume image_i, label_i;
  Volume image_j, label_j;
};

struct UnlabeledPair {
  Volume image_p;
  Volume image_q;
};

struct SslStepRecord {
  int64_t iteration = 0;
  double lr = 0.0;
  double ema_lambda = 0.0;
  LossBreakdown losses;

  nlohmann::json to_json() const;
};

// One bidirectional copy-paste step: teacher pseudo-labels for the unlabeled
// images, mixing with one fresh mask per pair, student update on both mixed
// groups, then the EMA update of the teacher.
SslStepRecord ssl_step(TrainingSession& session, const std::vector<LabeledPair>& labeled,
                       const std::vector<UnlabeledPair>& unlabeled, Rng& rng);

// Draws crops for one SSL step from the dataset (i != j, p != q).
void sample_ssl_batch(const Dataset& dataset, const TrainConfig& config, Rng& rng, std::vector<LabeledPair>& labeled,
                      std::vector<UnlabeledPair>& unlabeled);

// Runs SSL iterations from session.iteration up to ssl_iterations (or up to
// `stop_at` when given), evaluating on `validation` (default: the labeled
// training samples) every eval_interval iterations and at the end.
void train_ssl(TrainingSession& session, const Dataset& dataset, const Dataset* validation, const LogSink& log = {},
               std::optional<int64_t> stop_at = std::nullopt);

// Student inference: WT triple, forward, argmax of the raw-image branch.
// Images larger than `patch` are tiled with 50% overlap and probabilities are
// averaged; any extent is padded up to the model's size divisor and cropped
// back.
torch::Tensor predict_probabilities(XNetPlus& model, const Volume& image, const Shape& patch, WaveletFamily family);
Volume predict(XNetPlus& model, const Volume& image, const Shape& patch, WaveletFamily family);
Volume predict(const Checkpoint& checkpoint, const Volume& image);

// Per-class (foreground only) and mean Dice/Jaccard/95HD/ASD over labeled
// samples. Undefined distances (empty regions) are left out of the means and
// counted.
nlohmann::json metric_report(const std::vector<Volume>& predictions, const std::vector<Volume>& ground_truth,
                             int num_classes);
nlohmann::json evaluate(XNetPlus& model, const Dataset& dataset, const Shape& patch, WaveletFamily family);
nlohmann::json evaluate(const Checkpoint& checkpoint, const Dataset& dataset);

}  // namespace wtbcp
