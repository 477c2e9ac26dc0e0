#pragma once

#include <optional>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "wtbcp/mixer.hpp"
#include "wtbcp/xnetplus.hpp"

namespace wtbcp {

inline constexpr double kDiceSmooth = 1e-5;

struct LossWeights {
  double alpha = 0.5;        // weight of voxels that came from the unlabeled image
  double consistency = 1.0;  // weight of the tri-branch consistency term

  void validate() const;
};

// 0.5 * class-averaged soft Dice loss + 0.5 * cross-entropy, both weighted
// per voxel and normalized by the mean weight (so a global rescale of the
// weights leaves the loss unchanged).
//   probs:   (N, K, spatial...) probabilities
//   target:  (N, spatial...) integer class ids
//   weights: (N, spatial...) non-negative, not all zero
torch::Tensor seg_loss(const torch::Tensor& probs, const torch::Tensor& target, const torch::Tensor& weights);

// Voxel weights for a copy-paste mask tensor (N, spatial...), 1 outside the
// pasted block and 0 inside:
//   inward:  M + alpha (1 - M)
//   outward: (1 - M) + alpha M
torch::Tensor bcp_weights(const torch::Tensor& mask, double alpha, MixDirection direction);

torch::Tensor bcp_loss(const torch::Tensor& probs, const torch::Tensor& mixed_target, const torch::Tensor& mask,
                       double alpha, MixDirection direction);

// Stacks masks into an (N, spatial...) float tensor.
torch::Tensor mask_tensor(const std::vector<MixMask>& masks, torch::Dtype dtype = torch::kFloat32);

// 1 - mean_k (2 sum(a b) + eps) / (sum(a^2) + sum(b^2) + eps)
torch::Tensor soft_dice_loss(const torch::Tensor& a, const torch::Tensor& b);

struct ConsistencyTerms {
  std::optional<torch::Tensor> main_low;
  std::optional<torch::Tensor> main_high;
  torch::Tensor total;
};

// Dice discrepancy of the raw-image branch against each present frequency
// branch. With no frequency branch the total is zero (and a warning is
// logged once per process).
ConsistencyTerms consistency_loss(const PredictionTriple& preds);

// Per-branch supervised terms of one input group.
struct BranchLosses {
  std::optional<torch::Tensor> low;
  torch::Tensor main;
  std::optional<torch::Tensor> high;

  torch::Tensor sum() const;
};

struct LossBreakdown {
  BranchLosses inward;
  BranchLosses outward;
  ConsistencyTerms consistency_in;
  ConsistencyTerms consistency_out;
  torch::Tensor total;

  nlohmann::json to_json() const;
};

// sum_k L_in_k + sum_k L_out_k + consistency * (L_con(in) + L_con(out)).
// Throws NumericError listing every term when any of them is non-finite.
torch::Tensor total_loss(const BranchLosses& inward, const BranchLosses& outward, const ConsistencyTerms& con_in,
                         const ConsistencyTerms& con_out, const LossWeights& weights);

// Supervised terms of every present branch against one target.
BranchLosses branch_losses(const PredictionTriple& preds, const torch::Tensor& target, const torch::Tensor& weights);

}  // namespace wtbcp
