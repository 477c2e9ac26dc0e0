#pragma once

#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "wtbcp/xnetplus.hpp"

namespace wtbcp::test {

// Textbook 2D UNet from stock torch::nn layers with the same block layout as
// a single (raw-image) branch.
struct RefBlock : torch::nn::Module {
  RefBlock(int64_t in, int64_t out)
      : conv(register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1).bias(false)))),
        bn(register_module("bn", torch::nn::BatchNorm2d(out))) {}
  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(bn(conv(x))); }
  torch::nn::Conv2d conv;
  torch::nn::BatchNorm2d bn;
};

struct RefUNet : torch::nn::Module {
  explicit RefUNet(const ModelConfig& c) {
    for (int s = 0; s < c.depth; ++s) {
      const int64_t in = s == 0 ? c.in_channels : c.width_at(s - 1);
      auto a = std::make_shared<RefBlock>(in, c.width_at(s));
      auto b = std::make_shared<RefBlock>(c.width_at(s), c.width_at(s));
      enc.push_back({register_module("enc" + std::to_string(s) + "a", a), register_module("enc" + std::to_string(s) + "b", b)});
    }
    for (int s = c.depth - 2; s >= 0; --s) {
      const int64_t w = c.width_at(s);
      Dec d;
      d.up = register_module("up" + std::to_string(s), std::make_shared<RefBlock>(c.width_at(s + 1), w));
      d.a = register_module("dec" + std::to_string(s) + "a", std::make_shared<RefBlock>(2 * w, w));
      d.b = register_module("dec" + std::to_string(s) + "b", std::make_shared<RefBlock>(w, w));
      dec.push_back(d);
    }
    head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(c.base_width, c.num_classes, 1)));
  }

  torch::Tensor forward(torch::Tensor x) {
    std::vector<torch::Tensor> skips;
    for (size_t s = 0; s < enc.size(); ++s) {
      if (s > 0) x = torch::max_pool2d(x, 2);
      x = enc[s].second->forward(enc[s].first->forward(x));
      skips.push_back(x);
    }
    for (size_t k = 0; k < dec.size(); ++k) {
      const size_t s = enc.size() - 2 - k;
      x = dec[k].up->forward(torch::upsample_nearest2d(x, {x.size(2) * 2, x.size(3) * 2}));
      x = dec[k].b->forward(dec[k].a->forward(torch::cat({skips[s], x}, 1)));
    }
    return torch::softmax(head(x), 1);
  }

  struct Dec {
    std::shared_ptr<RefBlock> up, a, b;
  };
  std::vector<std::pair<std::shared_ptr<RefBlock>, std::shared_ptr<RefBlock>>> enc;
  std::vector<Dec> dec;
  torch::nn::Conv2d head{nullptr};
};

}  // namespace wtbcp::test
