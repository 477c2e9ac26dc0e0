#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "wtbcp/error.hpp"
#include "wtbcp/losses.hpp"

namespace wtbcp {
namespace {

// Plain-loop reference of the weighted Dice + cross-entropy objective on an
// (N, K, S) probability array with an (N, S) target and weights.
double seg_loss_reference(const std::vector<double>& p, const std::vector<int>& t, const std::vector<double>& w,
                          int n, int k, int s) {
  double w_mean = 0.0;
  for (double x : w) w_mean += x;
  w_mean /= static_cast<double>(w.size());
  double dice_sum = 0.0;
  for (int c = 0; c < k; ++c) {
    double inter = 0.0, psq = 0.0, tsq = 0.0;
    for (int b = 0; b < n; ++b) {
      for (int v = 0; v < s; ++v) {
        const double wn = w[b * s + v] / w_mean;
        const double pv = p[(b * k + c) * s + v];
        const double tv = t[b * s + v] == c ? 1.0 : 0.0;
        inter += wn * pv * tv;
        psq += wn * pv * pv;
        tsq += wn * tv;
      }
    }
    dice_sum += 1.0 - (2.0 * inter + 1e-5) / (psq + tsq + 1e-5);
  }
  double ce = 0.0, wsum = 0.0;
  for (int b = 0; b < n; ++b) {
    for (int v = 0; v < s; ++v) {
      const double wn = w[b * s + v] / w_mean;
      ce -= wn * std::log(p[(b * k + t[b * s + v]) * s + v]);
      wsum += wn;
    }
  }
  return 0.5 * dice_sum / k + 0.5 * ce / wsum;
}

struct Instance {
  torch::Tensor probs;   // (N, K, H, W) double
  torch::Tensor target;  // (N, H, W) long
  torch::Tensor weights; // (N, H, W) double
};

Instance random_instance(int n, int k, int h, int w, uint64_t seed) {
  torch::manual_seed(seed);
  Instance in;
  in.probs = torch::softmax(torch::randn({n, k, h, w}, torch::kFloat64), 1);
  in.target = torch::randint(0, k, {n, h, w}, torch::kLong);
  in.weights = torch::rand({n, h, w}, torch::kFloat64) + 0.1;
  return in;
}

template <typename T>
std::vector<T> to_vec(const torch::Tensor& t) {
  const auto c = t.contiguous();
  return std::vector<T>(c.data_ptr<T>(), c.data_ptr<T>() + c.numel());
}

TEST(Losses, SegLossMatchesReference) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto in = random_instance(2, 3, 5, 4, seed);
    const auto t32 = to_vec<int64_t>(in.target);
    const double ref = seg_loss_reference(to_vec<double>(in.probs), std::vector<int>(t32.begin(), t32.end()),
                                          to_vec<double>(in.weights), 2, 3, 20);
    EXPECT_NEAR(seg_loss(in.probs, in.target, in.weights).item<double>(), ref, 1e-10);
  }
}

TEST(Losses, UniformBinaryPredictionGivesLn2CrossEntropy) {
  const int64_t n = 16;
  const auto probs = torch::full({1, 2, 4, 4}, 0.5, torch::kFloat64);
  const auto target = torch::zeros({1, 4, 4}, torch::kLong);
  const auto ones = torch::ones({1, 4, 4}, torch::kFloat64);
  const double e = kDiceSmooth;
  const double dice0 = 1.0 - (2.0 * 0.5 * n + e) / (0.25 * n + n + e);
  const double dice1 = 1.0 - e / (0.25 * n + e);
  const double expected = 0.5 * (dice0 + dice1) / 2.0 + 0.5 * std::log(2.0);
  EXPECT_NEAR(seg_loss(probs, target, ones).item<double>(), expected, 1e-12);
}

TEST(Losses, PerfectPredictionHasZeroLoss) {
  auto target = torch::randint(0, 3, {1, 6, 6}, torch::kLong);
  auto probs = torch::one_hot(target, 3).permute({0, 3, 1, 2}).to(torch::kFloat64);
  EXPECT_NEAR(seg_loss(probs, target, torch::ones({1, 6, 6}, torch::kFloat64)).item<double>(), 0.0, 1e-12);
}

TEST(Losses, SoftDiceOfDisjointOneHotIsOne) {
  auto t = torch::randint(0, 2, {1, 8, 8}, torch::kLong);
  auto a = torch::one_hot(t, 2).permute({0, 3, 1, 2}).to(torch::kFloat64);
  auto b = torch::one_hot(1 - t, 2).permute({0, 3, 1, 2}).to(torch::kFloat64);
  EXPECT_NEAR(soft_dice_loss(a, b).item<double>(), 1.0, 1e-6);
  EXPECT_EQ(soft_dice_loss(a, a).item<double>(), 0.0);
}

TEST(Losses, WeightRescaleInvariance) {
  const auto in = random_instance(1, 4, 6, 6, 3);
  const double base = seg_loss(in.probs, in.target, in.weights).item<double>();
  EXPECT_NEAR(seg_loss(in.probs, in.target, in.weights * 2.0).item<double>(), base, 1e-12);
  EXPECT_NEAR(seg_loss(in.probs, in.target, in.weights * 0.125).item<double>(), base, 1e-12);
}

torch::Tensor block_mask(int h, int w, int r0, int r1, int c0, int c1) {
  auto m = torch::ones({1, h, w}, torch::kFloat64);
  m.index_put_({0, torch::indexing::Slice(r0, r1), torch::indexing::Slice(c0, c1)}, 0.0);
  return m;
}

TEST(Losses, AlphaOneEqualsUnweighted) {
  const auto in = random_instance(1, 3, 8, 8, 4);
  const auto m = block_mask(8, 8, 1, 6, 2, 7);
  const double plain = seg_loss(in.probs, in.target, torch::ones_like(in.weights)).item<double>();
  for (auto dir : {MixDirection::inward, MixDirection::outward}) {
    EXPECT_NEAR(bcp_loss(in.probs, in.target, m, 1.0, dir).item<double>(), plain, 1e-6);
  }
}

TEST(Losses, AlphaZeroIgnoresDownWeightedRegion) {
  const auto in = random_instance(1, 3, 8, 8, 5);
  const auto m = block_mask(8, 8, 2, 6, 1, 5);
  const auto noise = random_instance(1, 3, 8, 8, 6);
  // Inward: the block (M = 0) carries weight alpha.
  {
    const auto inside = (1.0 - m).to(torch::kBool);
    auto probs = torch::where(inside.unsqueeze(1), noise.probs, in.probs);
    auto target = torch::where(inside, noise.target, in.target);
    EXPECT_EQ(bcp_loss(in.probs, in.target, m, 0.0, MixDirection::inward).item<double>(),
              bcp_loss(probs, target, m, 0.0, MixDirection::inward).item<double>());
  }
  // Outward: the complement (M = 1) carries weight alpha.
  {
    const auto outside = m.to(torch::kBool);
    auto probs = torch::where(outside.unsqueeze(1), noise.probs, in.probs);
    auto target = torch::where(outside, noise.target, in.target);
    EXPECT_EQ(bcp_loss(in.probs, in.target, m, 0.0, MixDirection::outward).item<double>(),
              bcp_loss(probs, target, m, 0.0, MixDirection::outward).item<double>());
  }
}

TEST(Losses, DirectionalSymmetry) {
  const auto in = random_instance(2, 3, 6, 6, 7);
  const auto m = torch::cat({block_mask(6, 6, 0, 4, 1, 5), block_mask(6, 6, 2, 6, 0, 4)});
  for (double alpha : {0.0, 0.5, 0.3, 1.0}) {
    EXPECT_TRUE(torch::equal(bcp_weights(m, alpha, MixDirection::inward),
                             bcp_weights(1.0 - m, alpha, MixDirection::outward)));
    EXPECT_EQ(bcp_loss(in.probs, in.target, m, alpha, MixDirection::inward).item<double>(),
              bcp_loss(in.probs, in.target, 1.0 - m, alpha, MixDirection::outward).item<double>());
  }
}

TEST(Losses, WeightsForDefaultAlpha) {
  const auto m = block_mask(4, 4, 0, 2, 0, 2);
  const auto w_in = bcp_weights(m, 0.5, MixDirection::inward);
  const auto w_out = bcp_weights(m, 0.5, MixDirection::outward);
  EXPECT_EQ(w_in[0][0][0].item<double>(), 0.5);
  EXPECT_EQ(w_in[0][3][3].item<double>(), 1.0);
  EXPECT_EQ(w_out[0][0][0].item<double>(), 1.0);
  EXPECT_EQ(w_out[0][3][3].item<double>(), 0.5);
}

// Central finite differences through softmax on an 8x8 instance.
void check_gradient(const std::function<torch::Tensor(const torch::Tensor&)>& loss, uint64_t seed) {
  torch::manual_seed(seed);
  auto logits = torch::randn({1, 3, 8, 8}, torch::kFloat64).requires_grad_(true);
  loss(torch::softmax(logits, 1)).backward();
  const auto analytic = logits.grad().clone();
  const double h = 1e-6;
  auto flat = logits.detach().clone().reshape({-1});
  double worst = 0.0;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    auto plus = flat.clone();
    auto minus = flat.clone();
    plus[i] += h;
    minus[i] -= h;
    const double fp = loss(torch::softmax(plus.reshape(logits.sizes()), 1)).item<double>();
    const double fm = loss(torch::softmax(minus.reshape(logits.sizes()), 1)).item<double>();
    const double fd = (fp - fm) / (2 * h);
    const double an = analytic.reshape({-1})[i].item<double>();
    worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-4));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Losses, SegLossGradientMatchesFiniteDifferences) {
  torch::manual_seed(1);
  const auto target = torch::randint(0, 3, {1, 8, 8}, torch::kLong);
  const auto weights = torch::rand({1, 8, 8}, torch::kFloat64) + 0.2;
  check_gradient([&](const torch::Tensor& p) { return seg_loss(p, target, weights); }, 2);
}

TEST(Losses, BcpLossGradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  const auto target = torch::randint(0, 3, {1, 8, 8}, torch::kLong);
  const auto m = block_mask(8, 8, 1, 6, 3, 8);
  check_gradient([&](const torch::Tensor& p) { return bcp_loss(p, target, m, 0.5, MixDirection::inward); }, 4);
  check_gradient([&](const torch::Tensor& p) { return bcp_loss(p, target, m, 0.5, MixDirection::outward); }, 5);
}

TEST(Losses, ConsistencyGradientMatchesFiniteDifferences) {
  torch::manual_seed(6);
  const auto other = torch::softmax(torch::randn({1, 3, 8, 8}, torch::kFloat64), 1);
  check_gradient([&](const torch::Tensor& p) { return soft_dice_loss(p, other); }, 7);
}

TEST(Losses, ConsistencyZeroOnIdenticalTriples) {
  const auto p = torch::softmax(torch::randn({2, 4, 6, 6}, torch::kFloat64), 1);
  const PredictionTriple preds{p, p.clone(), p.clone()};
  const ConsistencyTerms c = consistency_loss(preds);
  ASSERT_TRUE(c.main_low && c.main_high);
  EXPECT_EQ(c.total.item<double>(), 0.0);
}

TEST(Losses, ConsistencyWithoutBranchesIsZero) {
  const auto p = torch::softmax(torch::randn({1, 2, 4, 4}), 1);
  const ConsistencyTerms c = consistency_loss(PredictionTriple{p, std::nullopt, std::nullopt});
  EXPECT_FALSE(c.main_low);
  EXPECT_FALSE(c.main_high);
  EXPECT_EQ(c.total.item<double>(), 0.0);
}

TEST(Losses, ConsistencySumsPresentTerms) {
  const auto p = torch::softmax(torch::randn({1, 2, 4, 4}, torch::kFloat64), 1);
  const auto q = torch::softmax(torch::randn({1, 2, 4, 4}, torch::kFloat64), 1);
  const auto r = torch::softmax(torch::randn({1, 2, 4, 4}, torch::kFloat64), 1);
  const ConsistencyTerms c = consistency_loss(PredictionTriple{p, q, r});
  EXPECT_NEAR(c.total.item<double>(), soft_dice_loss(p, q).item<double>() + soft_dice_loss(p, r).item<double>(), 1e-12);
  const ConsistencyTerms only_low = consistency_loss(PredictionTriple{p, q, std::nullopt});
  EXPECT_NEAR(only_low.total.item<double>(), soft_dice_loss(p, q).item<double>(), 1e-12);
}

TEST(Losses, TotalLossCombinesTerms) {
  const auto in = random_instance(1, 3, 4, 4, 8);
  const PredictionTriple preds{in.probs, in.probs.flip(2), in.probs.flip(3)};
  const auto w = torch::ones_like(in.weights);
  const BranchLosses bin = branch_losses(preds, in.target, w);
  const BranchLosses bout = branch_losses(preds, in.target.flip(1), w);
  const ConsistencyTerms c = consistency_loss(preds);
  const LossWeights lw{0.5, 0.7};
  const double expected = bin.sum().item<double>() + bout.sum().item<double>() + 0.7 * 2 * c.total.item<double>();
  EXPECT_NEAR(total_loss(bin, bout, c, c, lw).item<double>(), expected, 1e-12);

  LossBreakdown b{bin, bout, c, c, total_loss(bin, bout, c, c, lw)};
  const auto j = b.to_json();
  for (const char* key : {"M", "L", "H"}) {
    EXPECT_TRUE(j["in"].contains(key));
    EXPECT_TRUE(j["out"].contains(key));
  }
  EXPECT_TRUE(j["con"]["in"].contains("ML"));
  EXPECT_TRUE(j["con"]["out"].contains("MH"));
  EXPECT_NEAR(j["total"].get<double>(), expected, 1e-12);
}

TEST(Losses, NonFiniteTotalIsNumericError) {
  const auto in = random_instance(1, 2, 4, 4, 9);
  const auto w = torch::ones_like(in.weights);
  BranchLosses bad = branch_losses(PredictionTriple{in.probs, std::nullopt, std::nullopt}, in.target, w);
  bad.main = bad.main + std::numeric_limits<double>::quiet_NaN();
  const ConsistencyTerms none{std::nullopt, std::nullopt, torch::zeros({}, torch::kFloat64)};
  EXPECT_THROW(total_loss(bad, bad, none, none, LossWeights{}), NumericError);
}

TEST(Losses, InvalidWeightsRejected) {
  const auto in = random_instance(1, 2, 4, 4, 10);
  EXPECT_THROW(seg_loss(in.probs, in.target, torch::zeros_like(in.weights)), ValidationError);
  EXPECT_THROW(seg_loss(in.probs, in.target, -in.weights), ValidationError);
  EXPECT_THROW(seg_loss(in.probs, in.target, torch::ones({1, 4, 5}, torch::kFloat64)), ShapeError);
  EXPECT_THROW(seg_loss(in.probs, in.target.unsqueeze(0), in.weights), ShapeError);
  EXPECT_THROW(total_loss(BranchLosses{}, BranchLosses{}, ConsistencyTerms{}, ConsistencyTerms{}, LossWeights{-1.0, 1.0}),
               ConfigError);
}

}  // namespace
}  // namespace wtbcp
