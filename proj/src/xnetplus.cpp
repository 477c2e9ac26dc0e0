#include "wtbcp/xnetplus.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "wtbcp/error.hpp"
#include "wtbcp/volume.hpp"

namespace wtbcp {

void ModelConfig::validate() const {
  if (spatial_rank != 2 && spatial_rank != 3) throw ConfigError("model spatial_rank must be 2 or 3");
  if (in_channels < 1) throw ConfigError("model in_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("model num_classes must be >= 2");
  if (base_width < 4) throw ConfigError("model base_width must be >= 4");
  if (depth < 2) throw ConfigError("model depth must be >= 2");
  if (depth > 8) throw ConfigError("model depth must be <= 8");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"spatial_rank", c.spatial_rank}, {"in_channels", c.in_channels}, {"num_classes", c.num_classes},
       {"base_width", c.base_width},     {"depth", c.depth},             {"low_branch", c.low_branch},
       {"high_branch", c.high_branch},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("spatial_rank").get_to(c.spatial_rank);
  j.at("in_channels").get_to(c.in_channels);
  j.at("num_classes").get_to(c.num_classes);
  j.at("base_width").get_to(c.base_width);
  j.at("depth").get_to(c.depth);
  j.at("low_branch").get_to(c.low_branch);
  j.at("high_branch").get_to(c.high_branch);
  j.at("seed").get_to(c.seed);
}

namespace {

torch::Tensor conv(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& b, int rank, int64_t pad) {
  return torch::convolution(x, w, b, std::vector<int64_t>(rank, 1), std::vector<int64_t>(rank, pad),
                            std::vector<int64_t>(rank, 1), false, std::vector<int64_t>(rank, 0), 1);
}

Shape kernel_shape(int64_t out, int64_t in, int rank, int64_t k) {
  Shape s{out, in};
  for (int i = 0; i < rank; ++i) s.push_back(k);
  return s;
}

torch::Tensor downsample(const torch::Tensor& x, int rank) {
  return rank == 2 ? torch::max_pool2d(x, {2, 2}) : torch::max_pool3d(x, {2, 2, 2});
}

torch::Tensor upsample(const torch::Tensor& x, int rank) {
  namespace F = torch::nn::functional;
  return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>(rank, 2.0)).mode(torch::kNearest));
}

}  // namespace

ConvNormActImpl::ConvNormActImpl(int spatial_rank, int64_t in_channels, int64_t out_channels, int64_t kernel)
    : spatial_rank_(spatial_rank), padding_(kernel / 2) {
  weight_ = register_parameter("weight", torch::empty(kernel_shape(out_channels, in_channels, spatial_rank, kernel)));
  bn_weight_ = register_parameter("bn_weight", torch::ones({out_channels}));
  bn_bias_ = register_parameter("bn_bias", torch::zeros({out_channels}));
  running_mean_ = register_buffer("running_mean", torch::zeros({out_channels}));
  running_var_ = register_buffer("running_var", torch::ones({out_channels}));
}

torch::Tensor ConvNormActImpl::forward(const torch::Tensor& x) {
  auto y = conv(x, weight_, {}, spatial_rank_, padding_);
  y = torch::batch_norm(y, bn_weight_, bn_bias_, running_mean_, running_var_, is_training(), 0.1, 1e-5, false);
  return torch::relu(y);
}

DoubleConvImpl::DoubleConvImpl(int spatial_rank, int64_t in_channels, int64_t out_channels) {
  first_ = register_module("first", ConvNormAct(spatial_rank, in_channels, out_channels));
  second_ = register_module("second", ConvNormAct(spatial_rank, out_channels, out_channels));
}

torch::Tensor DoubleConvImpl::forward(const torch::Tensor& x) { return second_(first_(x)); }

EncoderImpl::EncoderImpl(const ModelConfig& config) : spatial_rank_(config.spatial_rank) {
  for (int s = 0; s < config.depth; ++s) {
    const int64_t in = s == 0 ? config.in_channels : config.width_at(s - 1);
    stages_.push_back(register_module("stage" + std::to_string(s), DoubleConv(spatial_rank_, in, config.width_at(s))));
  }
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> features;
  torch::Tensor h = x;
  for (size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) h = downsample(h, spatial_rank_);
    h = stages_[s](h);
    features.push_back(h);
  }
  return features;
}

FusionImpl::FusionImpl(int spatial_rank, int64_t width) {
  reduce_ = register_module("reduce", ConvNormAct(spatial_rank, 2 * width, width));
}

torch::Tensor FusionImpl::forward(const torch::Tensor& a, const torch::Tensor& b) {
  return reduce_(torch::cat({a, b}, 1));
}

DecoderBranchImpl::DecoderBranchImpl(const ModelConfig& config) : spatial_rank_(config.spatial_rank) {
  const int levels = config.depth - 1;
  up_convs_.resize(static_cast<size_t>(levels), nullptr);
  merges_.resize(static_cast<size_t>(levels), nullptr);
  for (int s = levels - 1; s >= 0; --s) {
    const int64_t w = config.width_at(s);
    up_convs_[static_cast<size_t>(s)] =
        register_module("up" + std::to_string(s), ConvNormAct(spatial_rank_, config.width_at(s + 1), w));
    merges_[static_cast<size_t>(s)] = register_module("merge" + std::to_string(s), DoubleConv(spatial_rank_, 2 * w, w));
  }
  head_weight_ = register_parameter("head_weight",
                                    torch::empty(kernel_shape(config.num_classes, config.base_width, spatial_rank_, 1)));
  head_bias_ = register_parameter("head_bias", torch::zeros({config.num_classes}));
}

torch::Tensor DecoderBranchImpl::forward(const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips) {
  torch::Tensor h = bottleneck;
  for (size_t s = up_convs_.size(); s-- > 0;) {
    h = up_convs_[s](upsample(h, spatial_rank_));
    h = merges_[s](torch::cat({skips[s], h}, 1));
  }
  return conv(h, head_weight_, head_bias_, spatial_rank_, 0);
}

XNetPlusImpl::XNetPlusImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int64_t bottleneck = config_.width_at(config_.depth - 1);
  encoder_main_ = register_module("encoder_main", Encoder(config_));
  if (config_.low_branch) {
    encoder_low_ = register_module("encoder_low", Encoder(config_));
    fuse_low_ = register_module("fuse_low", Fusion(config_.spatial_rank, bottleneck));
  }
  if (config_.high_branch) {
    encoder_high_ = register_module("encoder_high", Encoder(config_));
    fuse_high_ = register_module("fuse_high", Fusion(config_.spatial_rank, bottleneck));
  }
  if (config_.low_branch && config_.high_branch) {
    fuse_main_ = register_module("fuse_main", Fusion(config_.spatial_rank, bottleneck));
  }
  decoder_main_ = register_module("decoder_main", DecoderBranch(config_));
  if (config_.low_branch) decoder_low_ = register_module("decoder_low", DecoderBranch(config_));
  if (config_.high_branch) decoder_high_ = register_module("decoder_high", DecoderBranch(config_));
}

void XNetPlusImpl::check_input(const torch::Tensor& x, const char* name) const {
  if (!x.defined()) throw ShapeError(std::string("missing ") + name + " input");
  if (x.dim() != config_.spatial_rank + 2) {
    throw ShapeError(std::string(name) + " input must have " + std::to_string(config_.spatial_rank + 2) +
                     " dims (N, C, spatial...), got " + std::to_string(x.dim()));
  }
  if (x.size(1) != config_.in_channels) {
    throw ShapeError(std::string(name) + " input has " + std::to_string(x.size(1)) + " channels, model expects " +
                     std::to_string(config_.in_channels));
  }
  const int64_t div = config_.size_divisor();
  for (int a = 0; a < config_.spatial_rank; ++a) {
    if (x.size(a + 2) % div != 0) {
      throw ShapeError(std::string(name) + " input spatial dim " + std::to_string(a) + " (extent " +
                       std::to_string(x.size(a + 2)) + ") is not divisible by " + std::to_string(div));
    }
  }
}

PredictionTriple XNetPlusImpl::forward(const TripleBatch& input) {
  check_input(input.main, "main");
  const auto main_feats = encoder_main_(input.main);
  const torch::Tensor& f_main = main_feats.back();
  const std::vector<torch::Tensor> main_skips(main_feats.begin(), main_feats.end() - 1);

  PredictionTriple out;
  std::optional<torch::Tensor> f_low_main, f_high_main;
  if (config_.low_branch) {
    check_input(input.low, "low");
    if (input.low.sizes() != input.main.sizes()) throw ShapeError("low and main inputs differ in shape");
    const auto feats = encoder_low_(input.low);
    f_low_main = fuse_low_(feats.back(), f_main);
    out.low = torch::softmax(decoder_low_(*f_low_main, std::vector<torch::Tensor>(feats.begin(), feats.end() - 1)), 1);
  }
  if (config_.high_branch) {
    check_input(input.high, "high");
    if (input.high.sizes() != input.main.sizes()) throw ShapeError("high and main inputs differ in shape");
    const auto feats = encoder_high_(input.high);
    f_high_main = fuse_high_(feats.back(), f_main);
    out.high = torch::softmax(decoder_high_(*f_high_main, std::vector<torch::Tensor>(feats.begin(), feats.end() - 1)), 1);
  }

  torch::Tensor main_bottleneck;
  if (f_low_main && f_high_main) {
    main_bottleneck = fuse_main_(*f_low_main, *f_high_main);
  } else if (f_low_main) {
    main_bottleneck = *f_low_main;
  } else if (f_high_main) {
    main_bottleneck = *f_high_main;
  } else {
    main_bottleneck = f_main;
  }
  out.main = torch::softmax(decoder_main_(main_bottleneck, main_skips), 1);
  return out;
}

int64_t XNetPlusImpl::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

XNetPlus build_model(const ModelConfig& config) {
  XNetPlus model(config);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(config.seed);
  torch::NoGradGuard no_grad;
  for (auto& item : model->named_parameters()) {
    auto& p = item.value();
    const std::string& name = item.key();
    const bool is_conv_weight = p.dim() >= 3;
    if (is_conv_weight) {
      const double fan_in = static_cast<double>(p.numel() / p.size(0));
      p.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
    } else if (name.ends_with("bn_weight")) {
      p.fill_(1.0);
    } else {
      p.zero_();
    }
  }
  return model;
}

std::vector<std::pair<std::string, torch::Tensor>> model_state(const torch::nn::Module& model) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : model.named_parameters()) out.emplace_back(item.key(), item.value());
  for (const auto& item : model.named_buffers()) {
    if (item.value().is_floating_point()) out.emplace_back(item.key(), item.value());
  }
  return out;
}

}  // namespace wtbcp
