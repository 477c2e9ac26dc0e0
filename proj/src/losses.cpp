#include "wtbcp/losses.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <iostream>
#include <sstream>

#include "wtbcp/error.hpp"

namespace wtbcp {

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and >= 0");
  if (!(consistency >= 0.0) || !std::isfinite(consistency)) throw ConfigError("consistency weight must be finite and >= 0");
}

namespace {

// (N, K, ...) -> (K,) sums over batch and space.
torch::Tensor per_class_sum(const torch::Tensor& t) { return t.transpose(0, 1).reshape({t.size(1), -1}).sum(1); }

void check_pred_target(const torch::Tensor& probs, const torch::Tensor& target) {
  if (probs.dim() < 3) throw ShapeError("prediction must be (N, K, spatial...)");
  if (target.dim() != probs.dim() - 1) throw ShapeError("target must be (N, spatial...)");
  if (target.size(0) != probs.size(0)) throw ShapeError("prediction and target batch sizes differ");
  for (int64_t d = 1; d < target.dim(); ++d) {
    if (target.size(d) != probs.size(d + 1)) throw ShapeError("prediction and target spatial shapes differ");
  }
}

}  // namespace

torch::Tensor seg_loss(const torch::Tensor& probs, const torch::Tensor& target, const torch::Tensor& weights) {
  check_pred_target(probs, target);
  if (weights.sizes() != target.sizes()) throw ShapeError("voxel weights must match the target shape");
  const auto w_sum = weights.sum().item<double>();
  if (!(weights.min().item<double>() >= 0.0)) throw ValidationError("voxel weights must be non-negative");
  if (!(w_sum > 0.0)) throw ValidationError("voxel weights are all zero; loss undefined");

  const auto target_long = target.to(torch::kLong);
  const torch::Tensor w = (weights / weights.mean()).to(probs.dtype());
  const torch::Tensor w_cls = w.unsqueeze(1);
  const torch::Tensor onehot = torch::zeros_like(probs).scatter_(1, target_long.unsqueeze(1), 1.0);

  const auto intersect = per_class_sum(w_cls * probs * onehot);
  const auto pred_sq = per_class_sum(w_cls * probs * probs);
  const auto target_sq = per_class_sum(w_cls * onehot);
  const auto dice = 1.0 - (2.0 * intersect + kDiceSmooth) / (pred_sq + target_sq + kDiceSmooth);

  const auto picked = probs.gather(1, target_long.unsqueeze(1)).squeeze(1);
  const auto ce = -(w * torch::log(picked.clamp_min(1e-12))).sum() / w.sum();

  return 0.5 * dice.mean() + 0.5 * ce;
}

torch::Tensor bcp_weights(const torch::Tensor& mask, double alpha, MixDirection direction) {
  if (direction == MixDirection::inward) return mask + alpha * (1.0 - mask);
  return (1.0 - mask) + alpha * mask;
}

torch::Tensor bcp_loss(const torch::Tensor& probs, const torch::Tensor& mixed_target, const torch::Tensor& mask,
                       double alpha, MixDirection direction) {
  if (mask.sizes() != mixed_target.sizes()) throw ShapeError("mask and mixed target shapes differ");
  return seg_loss(probs, mixed_target, bcp_weights(mask.to(probs.dtype()), alpha, direction));
}

torch::Tensor mask_tensor(const std::vector<MixMask>& masks, torch::Dtype dtype) {
  if (masks.empty()) throw ShapeError("mask_tensor needs at least one mask");
  std::vector<torch::Tensor> rows;
  for (const auto& m : masks) {
    if (m.spatial_shape != masks.front().spatial_shape) throw ShapeError("masks in a batch must share their shape");
    auto t = torch::empty(m.spatial_shape, torch::kUInt8);
    std::memcpy(t.data_ptr<uint8_t>(), m.values.data(), m.values.size());
    rows.push_back(t.to(dtype));
  }
  return torch::stack(rows);
}

torch::Tensor soft_dice_loss(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ShapeError("soft Dice operands differ in shape");
  const auto intersect = per_class_sum(a * b);
  const auto denom = per_class_sum(a * a) + per_class_sum(b * b);
  return 1.0 - ((2.0 * intersect + kDiceSmooth) / (denom + kDiceSmooth)).mean();
}

ConsistencyTerms consistency_loss(const PredictionTriple& preds) {
  ConsistencyTerms out;
  if (preds.low) out.main_low = soft_dice_loss(preds.main, *preds.low);
  if (preds.high) out.main_high = soft_dice_loss(preds.main, *preds.high);
  if (!out.main_low && !out.main_high) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      std::cerr << "warning: consistency loss requested without LF/HF branches; contributing 0\n";
    }
    out.total = torch::zeros({}, preds.main.options());
    return out;
  }
  out.total = out.main_low && out.main_high ? *out.main_low + *out.main_high : (out.main_low ? *out.main_low : *out.main_high);
  return out;
}

torch::Tensor BranchLosses::sum() const {
  torch::Tensor s = main;
  if (low) s = s + *low;
  if (high) s = s + *high;
  return s;
}

BranchLosses branch_losses(const PredictionTriple& preds, const torch::Tensor& target, const torch::Tensor& weights) {
  BranchLosses out;
  out.main = seg_loss(preds.main, target, weights);
  if (preds.low) out.low = seg_loss(*preds.low, target, weights);
  if (preds.high) out.high = seg_loss(*preds.high, target, weights);
  return out;
}

namespace {

double scalar(const torch::Tensor& t) { return t.defined() ? t.detach().item<double>() : 0.0; }

nlohmann::json branch_json(const BranchLosses& b) {
  nlohmann::json j = {{"M", scalar(b.main)}};
  if (b.low) j["L"] = scalar(*b.low);
  if (b.high) j["H"] = scalar(*b.high);
  return j;
}

nlohmann::json consistency_json(const ConsistencyTerms& c) {
  nlohmann::json j = nlohmann::json::object();
  if (c.main_low) j["ML"] = scalar(*c.main_low);
  if (c.main_high) j["MH"] = scalar(*c.main_high);
  return j;
}

}  // namespace

nlohmann::json LossBreakdown::to_json() const {
  return {{"in", branch_json(inward)},
          {"out", branch_json(outward)},
          {"con", {{"in", consistency_json(consistency_in)}, {"out", consistency_json(consistency_out)}}},
          {"total", scalar(total)}};
}

torch::Tensor total_loss(const BranchLosses& inward, const BranchLosses& outward, const ConsistencyTerms& con_in,
                         const ConsistencyTerms& con_out, const LossWeights& weights) {
  weights.validate();
  const torch::Tensor total =
      inward.sum() + outward.sum() + weights.consistency * (con_in.total + con_out.total);
  if (!std::isfinite(scalar(total))) {
    std::ostringstream os;
    os << "non-finite loss: in=" << branch_json(inward).dump() << " out=" << branch_json(outward).dump()
       << " con_in=" << consistency_json(con_in).dump() << " con_out=" << consistency_json(con_out).dump();
    throw NumericError(os.str());
  }
  return total;
}

}  // namespace wtbcp
