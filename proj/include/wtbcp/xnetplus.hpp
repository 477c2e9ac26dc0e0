#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace wtbcp {

struct ModelConfig {
  int spatial_rank = 2;
  int64_t in_channels = 1;
  int64_t num_classes = 4;
  int64_t base_width = 16;
  int depth = 4;
  // The raw-image (M) branch is always present; these toggle the LF and HF
  // encoder/fusion/decoder paths.
  bool low_branch = true;
  bool high_branch = true;
  uint64_t seed = 0;

  void validate() const;
  // Required divisor of every spatial extent (2^(depth-1)).
  int64_t size_divisor() const { return int64_t{1} << (depth - 1); }
  int64_t width_at(int stage) const { return base_width << stage; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Batched network inputs, each (N, C, spatial...). Disabled branches ignore
// their tensor.
struct TripleBatch {
  torch::Tensor low;
  torch::Tensor main;
  torch::Tensor high;
};

// Softmax probability maps (N, K, spatial...) per decoder branch.
struct PredictionTriple {
  torch::Tensor main;
  std::optional<torch::Tensor> low;
  std::optional<torch::Tensor> high;
};

// conv(k) -> batch norm -> ReLU over 2 or 3 spatial dims. The convolution has
// no bias since batch norm supplies the shift.
class ConvNormActImpl : public torch::nn::Module {
 public:
  ConvNormActImpl(int spatial_rank, int64_t in_channels, int64_t out_channels, int64_t kernel = 3);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int spatial_rank_;
  int64_t padding_;
  torch::Tensor weight_;
  torch::Tensor bn_weight_;
  torch::Tensor bn_bias_;
  torch::Tensor running_mean_;
  torch::Tensor running_var_;
};
TORCH_MODULE(ConvNormAct);

class DoubleConvImpl : public torch::nn::Module {
 public:
  DoubleConvImpl(int spatial_rank, int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  ConvNormAct first_{nullptr};
  ConvNormAct second_{nullptr};
};
TORCH_MODULE(DoubleConv);

// Stage 0 is a double conv at full resolution; each later stage max-pools by
// 2 and doubles the width. forward returns every stage output, the last one
// being the bottleneck.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ModelConfig& config);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

 private:
  int spatial_rank_;
  std::vector<DoubleConv> stages_;
};
TORCH_MODULE(Encoder);

// Concatenates two equally wide feature maps and reduces them back to one
// width with a single conv-norm-act block.
class FusionImpl : public torch::nn::Module {
 public:
  FusionImpl(int spatial_rank, int64_t width);
  torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);

 private:
  ConvNormAct reduce_{nullptr};
};
TORCH_MODULE(Fusion);

// Nearest upsample + conv, concatenation with the skip, double conv; ends in
// a 1x1 projection to class logits.
class DecoderBranchImpl : public torch::nn::Module {
 public:
  explicit DecoderBranchImpl(const ModelConfig& config);
  // Returns logits.
  torch::Tensor forward(const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips);

 private:
  int spatial_rank_;
  std::vector<ConvNormAct> up_convs_;
  std::vector<DoubleConv> merges_;
  torch::Tensor head_weight_;
  torch::Tensor head_bias_;
};
TORCH_MODULE(DecoderBranch);

class XNetPlusImpl : public torch::nn::Module {
 public:
  explicit XNetPlusImpl(const ModelConfig& config);

  PredictionTriple forward(const TripleBatch& input);

  const ModelConfig& config() const { return config_; }
  int64_t parameter_count() const;

 private:
  void check_input(const torch::Tensor& x, const char* name) const;

  ModelConfig config_;
  Encoder encoder_main_{nullptr};
  Encoder encoder_low_{nullptr};
  Encoder encoder_high_{nullptr};
  Fusion fuse_low_{nullptr};
  Fusion fuse_high_{nullptr};
  Fusion fuse_main_{nullptr};
  DecoderBranch decoder_main_{nullptr};
  DecoderBranch decoder_low_{nullptr};
  DecoderBranch decoder_high_{nullptr};
};
TORCH_MODULE(XNetPlus);

// Builds and initializes a model: Kaiming-normal convolution weights, zero
// biases, unit batch-norm scale. Deterministic in config.seed.
XNetPlus build_model(const ModelConfig& config);

// Named parameters and floating-point buffers (batch-norm running statistics),
// i.e. everything that defines the model's function.
std::vector<std::pair<std::string, torch::Tensor>> model_state(const torch::nn::Module& model);

}  // namespace wtbcp
