// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
//
//   wtbcp_acceptance [--criterion N]...
//
// Exit status is 0 only when every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "brute_metrics.hpp"
#include "reference_unet.hpp"
#include "wtbcp/error.hpp"
#include "wtbcp/losses.hpp"
#include "wtbcp/metrics.hpp"
#include "wtbcp/mixer.hpp"
#include "wtbcp/tensorio.hpp"
#include "wtbcp/trainer.hpp"
#include "wtbcp/wavelet.hpp"
#include "wtbcp/xnetplus.hpp"

namespace wtbcp {
namespace {

using Clock = std::chrono::steady_clock;

// Collects failed checks of one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok && failures_.size() < 8) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void note(const std::string& text) { notes_.push_back(text); }
  bool ok() const { return failed_ == 0; }
  std::string summary() const {
    std::ostringstream os;
    os << (total_ - failed_) << "/" << total_ << " checks";
    for (const auto& n : notes_) os << "; " << n;
    for (const auto& f : failures_) os << "; failed: " << f;
    return os.str();
  }

 private:
  int total_ = 0;
  int failed_ = 0;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

Volume random_image(const Shape& shape, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Volume v(shape, VolumeKind::image);
  for (auto& x : v.data()) x = static_cast<float>(u(rng));
  return v;
}

double max_abs_diff(const Volume& a, const Volume& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

double energy(const Volume& v) {
  double e = 0.0;
  for (float x : v.data()) e += double(x) * double(x);
  return e;
}

// ---------------------------------------------------------------------------
// 1. Wavelet suite
// ---------------------------------------------------------------------------

void criterion_wavelet(Checks& c) {
  const auto start = Clock::now();
  const std::vector<Shape> shapes = {{1, 8, 8},    {1, 64, 64},  {1, 7, 10},     {2, 15, 9},
                                     {1, 4, 6, 8}, {1, 5, 7, 3}, {1, 16, 16, 16}};
  double pr = 0.0, split = 0.0, hf = 0.0, energy_err = 0.0;
  for (auto family : {WaveletFamily::haar, WaveletFamily::db2}) {
    for (size_t k = 0; k < shapes.size(); ++k) {
      const Volume x = random_image(shapes[k], 100 + k);
      pr = std::max(pr, max_abs_diff(idwt(dwt(x, family)), x));
      const FrequencyTriple t = frequency_triple(x, family);
      Volume sum = t.low;
      for (int64_t i = 0; i < sum.numel(); ++i) sum[i] += t.high[i];
      split = std::max(split, max_abs_diff(sum, t.main));
      c.expect(t.main == x, "X_M is the input image");

      Volume flat(shapes[k], std::vector<float>(static_cast<size_t>(product(shapes[k])), 0.7f), VolumeKind::image);
      const FrequencyTriple ft = frequency_triple(flat, family);
      for (float v : ft.high.data()) hf = std::max(hf, double(std::abs(v)));

      bool even = true;
      for (size_t a = 1; a < shapes[k].size(); ++a) even &= shapes[k][a] % 2 == 0;
      if (even) {
        double e = 0.0;
        for (const auto& b : dwt(x, family).bands) e += energy(b);
        energy_err = std::max(energy_err, std::abs(e - energy(x)) / energy(x));
      }
    }
  }
  c.expect(pr <= 1e-5, "perfect reconstruction max err " + fmt(pr));
  c.expect(split <= 1e-5, "X_L + X_H = X_M max err " + fmt(split));
  c.expect(hf <= 1e-5, "constant image HF max " + fmt(hf));
  c.expect(energy_err <= 1e-4, "energy relative err " + fmt(energy_err));

  const Subbands s = dwt(Volume({1, 2, 2}, {1, 2, 3, 4}, VolumeKind::image), WaveletFamily::haar);
  c.expect(std::abs(s.band("LL")[0] - 5.0) < 1e-6, "Haar 2x2 LL = 5");
  c.expect(std::abs(s.band("HL")[0] + 2.0) < 1e-6, "Haar 2x2 HL = -2");
  c.expect(std::abs(s.band("LH")[0] + 1.0) < 1e-6, "Haar 2x2 LH = -1");
  c.expect(std::abs(s.band("HH")[0]) < 1e-6, "Haar 2x2 HH = 0");

  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  c.expect(secs < 10.0, "runtime " + fmt(secs) + " s < 10 s");
  c.note("PR " + fmt(pr, 2) + ", L+H " + fmt(split, 2) + ", energy " + fmt(energy_err, 2));
}

// ---------------------------------------------------------------------------
// 2. Mixer suite
// ---------------------------------------------------------------------------

void criterion_mixer(Checks& c) {
  const auto start = Clock::now();
  std::mt19937_64 gen(2);
  int cases = 0;
  while (cases < 20) {
    const int rank = 2 + static_cast<int>(gen() % 2);
    Shape shape;
    for (int a = 0; a < rank; ++a) shape.push_back(3 + static_cast<int64_t>(gen() % (rank == 2 ? 60 : 20)));
    // Rational ratio p/q so floor(ratio * dim) has an exact integer oracle.
    const int64_t q = 2 + static_cast<int64_t>(gen() % 7);
    const int64_t p = 1 + static_cast<int64_t>(gen() % q);
    int64_t expected = 1;
    for (int64_t d : shape) expected *= p * d / q;
    if (expected == 0) continue;
    Rng rng = derive_rng(11, static_cast<uint64_t>(cases));
    const MixMask m = generate_mask(shape, static_cast<double>(p) / static_cast<double>(q), rng);
    int64_t zeros = 0;
    for (uint8_t v : m.values) zeros += v == 0;
    c.expect(zeros == expected, "zero count for " + shape_to_string(shape) + " ratio " + std::to_string(p) + "/" +
                                    std::to_string(q));
    const Volume a = random_image([&] { Shape s{1}; s.insert(s.end(), shape.begin(), shape.end()); return s; }(), cases);
    const Volume b = random_image(a.shape(), 1000 + cases);
    const Volume ab = mix(a, b, m), ba = mix(b, a, m);
    bool sum_ok = true;
    for (int64_t i = 0; i < a.numel(); ++i) sum_ok &= ab[i] + ba[i] == a[i] + b[i];
    c.expect(sum_ok, "mix(a,b,M) + mix(b,a,M) = a + b");
    ++cases;
  }
  Rng rng = derive_rng(0, 0);
  c.expect(generate_mask(Shape{6, 6}, 2.0 / 3.0, rng).zero_count() == 16, "(6,6) at 2/3 has 16 zeros");
  c.expect(mask_block_size(Shape{112, 112, 80}, 2.0 / 3.0) == Shape{74, 74, 53}, "(112,112,80) block (74,74,53)");

  const Volume li = random_image({1, 12, 12}, 1), lj = random_image({1, 12, 12}, 2);
  const Volume up = random_image({1, 12, 12}, 3), uq = random_image({1, 12, 12}, 4);
  const MixedImages ones = mix_pair(li, lj, up, uq, MixMask::ones({12, 12}));
  c.expect(ones.inward == lj && ones.outward == uq, "M = 1 keeps the foreground sources");
  const MixedImages zeros = mix_pair(li, lj, up, uq, MixMask::zeros({12, 12}));
  c.expect(zeros.inward == up && zeros.outward == li, "M = 0 yields the background sources");

  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  c.expect(secs < 10.0, "runtime " + fmt(secs) + " s < 10 s");
}

// ---------------------------------------------------------------------------
// 3. Loss suite
// ---------------------------------------------------------------------------

torch::Tensor block_mask(int64_t n, int64_t h, int64_t w, uint64_t seed) {
  std::vector<MixMask> masks;
  Rng rng = derive_rng(seed, 0);
  for (int64_t i = 0; i < n; ++i) masks.push_back(generate_mask(Shape{h, w}, 2.0 / 3.0, rng));
  return mask_tensor(masks, torch::kFloat64);
}

double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& loss, uint64_t seed) {
  torch::manual_seed(seed);
  auto logits = torch::randn({1, 3, 8, 8}, torch::kFloat64).requires_grad_(true);
  loss(torch::softmax(logits, 1)).backward();
  const auto analytic = logits.grad().reshape({-1}).clone();
  auto flat = logits.detach().reshape({-1}).clone();
  const double h = 1e-6;
  double worst = 0.0;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    auto plus = flat.clone(), minus = flat.clone();
    plus[i] += h;
    minus[i] -= h;
    const double fd = (loss(torch::softmax(plus.reshape(logits.sizes()), 1)).item<double>() -
                       loss(torch::softmax(minus.reshape(logits.sizes()), 1)).item<double>()) /
                      (2 * h);
    const double an = analytic[i].item<double>();
    worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-4));
  }
  return worst;
}

void criterion_losses(Checks& c) {
  const auto start = Clock::now();
  for (uint64_t seed = 0; seed < 5; ++seed) {
    torch::manual_seed(seed);
    const auto probs = torch::softmax(torch::randn({2, 4, 8, 8}, torch::kFloat64), 1);
    const auto target = torch::randint(0, 4, {2, 8, 8}, torch::kLong);
    const auto m = block_mask(2, 8, 8, seed);
    const double plain = seg_loss(probs, target, torch::ones({2, 8, 8}, torch::kFloat64)).item<double>();
    for (auto dir : {MixDirection::inward, MixDirection::outward}) {
      c.expect(std::abs(bcp_loss(probs, target, m, 1.0, dir).item<double>() - plain) <= 1e-6, "alpha = 1 equivalence");
    }
    // alpha = 0: voxels weighted by alpha may change arbitrarily.
    const auto other_probs = torch::softmax(torch::randn({2, 4, 8, 8}, torch::kFloat64), 1);
    const auto other_target = torch::randint(0, 4, {2, 8, 8}, torch::kLong);
    const auto in_block = m.eq(0);
    const auto p_in = torch::where(in_block.unsqueeze(1), other_probs, probs);
    const auto t_in = torch::where(in_block, other_target, target);
    c.expect(bcp_loss(probs, target, m, 0.0, MixDirection::inward).item<double>() ==
                 bcp_loss(p_in, t_in, m, 0.0, MixDirection::inward).item<double>(),
             "alpha = 0 inward ignores the pasted block");
    const auto p_out = torch::where(in_block.logical_not().unsqueeze(1), other_probs, probs);
    const auto t_out = torch::where(in_block.logical_not(), other_target, target);
    c.expect(bcp_loss(probs, target, m, 0.0, MixDirection::outward).item<double>() ==
                 bcp_loss(p_out, t_out, m, 0.0, MixDirection::outward).item<double>(),
             "alpha = 0 outward ignores the unlabeled surround");
    for (double alpha : {0.5, 0.25}) {
      c.expect(bcp_loss(probs, target, m, alpha, MixDirection::inward).item<double>() ==
                   bcp_loss(probs, target, 1.0 - m, alpha, MixDirection::outward).item<double>(),
               "directional symmetry");
    }
    const PredictionTriple same{probs, probs.clone(), probs.clone()};
    c.expect(consistency_loss(same).total.item<double>() == 0.0, "consistency 0 on identical triples");
  }
  torch::manual_seed(42);
  const auto target = torch::randint(0, 3, {1, 8, 8}, torch::kLong);
  const auto m = block_mask(1, 8, 8, 5);
  const auto other = torch::softmax(torch::randn({1, 3, 8, 8}, torch::kFloat64), 1);
  const double g1 = gradient_error([&](const torch::Tensor& p) { return bcp_loss(p, target, m, 0.5, MixDirection::inward); }, 1);
  const double g2 = gradient_error([&](const torch::Tensor& p) { return bcp_loss(p, target, m, 0.5, MixDirection::outward); }, 2);
  const double g3 = gradient_error([&](const torch::Tensor& p) { return soft_dice_loss(p, other); }, 3);
  c.expect(g1 <= 1e-3 && g2 <= 1e-3 && g3 <= 1e-3,
           "finite-difference gradients (" + fmt(g1, 2) + ", " + fmt(g2, 2) + ", " + fmt(g3, 2) + ")");
  c.note("worst gradient rel err " + fmt(std::max({g1, g2, g3}), 2));
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  c.expect(secs < 60.0, "runtime " + fmt(secs) + " s < 60 s");
}

// ---------------------------------------------------------------------------
// 4. EMA suite
// ---------------------------------------------------------------------------

void criterion_ema(Checks& c) {
  ModelConfig cfg;
  cfg.base_width = 4;
  cfg.depth = 3;
  auto teacher = build_model(cfg);
  cfg.seed = 1;
  auto student = build_model(cfg);
  auto snapshot = [](const torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (const auto& [n, t] : model_state(m)) out.push_back(t.detach().clone());
    return out;
  };
  auto all_equal = [](const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    bool ok = a.size() == b.size();
    for (size_t i = 0; ok && i < a.size(); ++i) ok = torch::equal(a[i], b[i]);
    return ok;
  };
  const auto t0 = snapshot(*teacher);
  ema_update(*teacher, *student, 1.0);
  c.expect(all_equal(snapshot(*teacher), t0), "lambda = 1 leaves the teacher unchanged");
  ema_update(*teacher, *student, 0.0);
  c.expect(all_equal(snapshot(*teacher), snapshot(*student)), "lambda = 0 copies the student");

  // Geometric contraction, in double precision so the 1e-7 bound measures
  // the update rule rather than float32 rounding.
  cfg.seed = 2;
  auto t = build_model(cfg);
  cfg.seed = 3;
  auto s = build_model(cfg);
  t->to(torch::kFloat64);
  s->to(torch::kFloat64);
  const auto s_state = snapshot(*s);
  const auto d0 = [&] {
    std::vector<torch::Tensor> d;
    const auto ts = snapshot(*t);
    for (size_t i = 0; i < ts.size(); ++i) d.push_back((ts[i] - s_state[i]).abs());
    return d;
  }();
  const double lambda = 0.99;
  double worst = 0.0;
  for (int k = 1; k <= 100; ++k) {
    ema_update(*t, *s, lambda);
    const auto ts = snapshot(*t);
    for (size_t i = 0; i < ts.size(); ++i) {
      const auto dk = (ts[i] - s_state[i]).abs();
      worst = std::max(worst, (dk - d0[i] * std::pow(lambda, k)).abs().max().item<double>());
    }
  }
  c.expect(worst <= 1e-7, "contraction error " + fmt(worst, 2) + " <= 1e-7");
  c.note("max contraction deviation " + fmt(worst, 2));
}

// ---------------------------------------------------------------------------
// 5. Model suite
// ---------------------------------------------------------------------------

void criterion_model(Checks& c) {
  for (int rank : {2, 3}) {
    ModelConfig cfg;
    cfg.spatial_rank = rank;
    cfg.base_width = rank == 2 ? 16 : 8;
    auto model = build_model(cfg);
    const std::vector<int64_t> shape = rank == 2 ? std::vector<int64_t>{2, 1, 64, 64} : std::vector<int64_t>{1, 1, 32, 32, 16};
    torch::manual_seed(rank);
    const auto x = torch::randn(shape);
    const PredictionTriple p = model->forward(TripleBatch{x, x, x});
    auto expected = shape;
    expected[1] = cfg.num_classes;
    for (const auto& t : {p.main, *p.low, *p.high}) {
      c.expect(t.sizes().vec() == expected, "output shape for rank " + std::to_string(rank));
      c.expect((t.sum(1) - 1.0).abs().max().item<double>() <= 1e-5, "softmax normalization");
    }
  }
  for (int depth : {3, 4, 5}) {
    ModelConfig cfg;
    cfg.depth = depth;
    cfg.low_branch = cfg.high_branch = false;
    test::RefUNet ref(cfg);
    int64_t ref_count = 0;
    for (const auto& t : ref.parameters()) ref_count += t.numel();
    const int64_t ours = build_model(cfg)->parameter_count();
    c.expect(ours == ref_count, "single-branch parameters " + std::to_string(ours) + " vs reference UNet " +
                                    std::to_string(ref_count));
  }
  ModelConfig cfg;
  cfg.seed = 77;
  auto a = build_model(cfg), b = build_model(cfg);
  const auto sa = model_state(*a), sb = model_state(*b);
  bool same = sa.size() == sb.size();
  for (size_t i = 0; same && i < sa.size(); ++i) same = torch::equal(sa[i].second, sb[i].second);
  c.expect(same, "build determinism");
}

// ---------------------------------------------------------------------------
// 6. Metrics suite
// ---------------------------------------------------------------------------

void criterion_metrics(Checks& c) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> fill(0.02, 0.75);
  int distance_cases = 0;
  for (int trial = 0; trial < 200; ++trial) {
    BinaryRegionPair p;
    p.shape = {8, 8};
    std::bernoulli_distribution bp(fill(rng)), bg(fill(rng));
    for (int i = 0; i < 64; ++i) {
      p.pred.push_back(bp(rng));
      p.gt.push_back(bg(rng));
    }
    int64_t inter = 0, sp = 0, sg = 0, uni = 0;
    for (int i = 0; i < 64; ++i) {
      inter += p.pred[i] & p.gt[i];
      uni += p.pred[i] | p.gt[i];
      sp += p.pred[i];
      sg += p.gt[i];
    }
    const double ref_dice = sp + sg ? 200.0 * double(inter) / double(sp + sg) : 100.0;
    const double ref_jac = uni ? 100.0 * double(inter) / double(uni) : 100.0;
    c.expect(dice(p) == ref_dice, "dice trial " + std::to_string(trial));
    c.expect(jaccard(p) == ref_jac, "jaccard trial " + std::to_string(trial));
    if (sp == 0 || sg == 0) continue;
    const auto ref = test::brute_distances(p);
    double mean = 0.0;
    for (double d : ref) mean += d;
    mean /= double(ref.size());
    c.expect(std::abs(hd95(p) - test::brute_percentile(ref, 0.95)) <= 1e-9, "hd95 trial " + std::to_string(trial));
    c.expect(std::abs(asd(p) - mean) <= 1e-9, "asd trial " + std::to_string(trial));
    ++distance_cases;
  }
  c.note(std::to_string(distance_cases) + " pairs with defined distances");
}

// ---------------------------------------------------------------------------
// 7 / 9. Overfit one sample
// ---------------------------------------------------------------------------

struct OverfitResult {
  double dice = 0.0;
  std::string final_loss;
  double seconds = 0.0;
};

OverfitResult run_overfit() {
  const auto start = Clock::now();
  SyntheticConfig syn;
  syn.count = 1;
  syn.spatial_shape = {64, 64};
  syn.num_classes = 4;
  syn.seed = 3;
  const Dataset ds = generate_synthetic(syn);

  ModelConfig model;
  model.num_classes = 4;
  TrainConfig train;
  train.pretrain_iterations = 500;
  train.log_interval = 1;
  std::string last;
  const Checkpoint ck = pretrain(ds, model, train, [&](const nlohmann::json& j) { last = j["loss"].dump(); });
  const nlohmann::json report = evaluate(ck, ds);
  OverfitResult r;
  r.dice = report["mean"]["dice"].get<double>();
  r.final_loss = last;
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

std::optional<OverfitResult> first_overfit;

void criterion_overfit(Checks& c) {
  first_overfit = run_overfit();
  c.expect(first_overfit->dice >= 95.0, "training-sample mean foreground Dice " + fmt(first_overfit->dice) + " >= 95");
  c.expect(first_overfit->seconds < 600.0, "runtime " + fmt(first_overfit->seconds) + " s < 600 s");
  c.note("Dice " + fmt(first_overfit->dice) + " after 500 iterations in " + fmt(first_overfit->seconds) + " s");
}

void criterion_determinism(Checks& c) {
  if (!first_overfit) first_overfit = run_overfit();
  const OverfitResult second = run_overfit();
  c.expect(!first_overfit->final_loss.empty() && first_overfit->final_loss == second.final_loss,
           "final loss " + first_overfit->final_loss + " vs " + second.final_loss);
  c.note("final loss " + second.final_loss + " in both runs");
}

// ---------------------------------------------------------------------------
// 8. Scaled SSL trend
// ---------------------------------------------------------------------------

struct SslArm {
  double baseline = 0.0;
  double ssl = 0.0;
};

SslArm run_ssl_arm(const Dataset& train_set, const Dataset& val, bool frequency_branches) {
  ModelConfig model;
  model.num_classes = train_set.num_classes;
  model.low_branch = model.high_branch = frequency_branches;
  TrainConfig train;
  train.pretrain_iterations = 300;
  train.ssl_iterations = 600;
  train.seed = 8;
  const Checkpoint pre = pretrain(train_set, model, train);
  SslArm arm;
  arm.baseline = evaluate(pre, val)["mean"]["dice"].get<double>();
  TrainingSession session(pre);
  train_ssl(session, train_set, &val);
  arm.ssl = session.metric_history.back()["mean"]["dice"].get<double>();
  return arm;
}

void criterion_ssl(Checks& c) {
  const auto start = Clock::now();
  SyntheticConfig syn;
  syn.count = 50;
  syn.spatial_shape = {64, 64};
  syn.num_classes = 4;
  syn.seed = 2024;
  const Dataset all = generate_synthetic(syn);
  Dataset train_all, val;
  train_all.num_classes = val.num_classes = all.num_classes;
  for (size_t i = 0; i < all.samples.size(); ++i) {
    Dataset& dst = i < 40 ? train_all : val;
    dst.labeled_indices.push_back(dst.samples.size());
    dst.samples.push_back(all.samples[i]);
  }
  const Dataset train_set = split_labeled(train_all, 0.1, syn.seed);

  const SslArm full = run_ssl_arm(train_set, val, true);
  const SslArm main_only = run_ssl_arm(train_set, val, false);
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  c.expect(full.ssl >= full.baseline + 2.0,
           "(a) full SSL " + fmt(full.ssl) + " >= labeled-only baseline " + fmt(full.baseline) + " + 2");
  c.expect(full.ssl >= main_only.ssl - 0.5, "(b) M+LF+HF " + fmt(full.ssl) + " >= M-only " + fmt(main_only.ssl) + " - 0.5");
  c.expect(secs < 3600.0, "runtime " + fmt(secs) + " s < 3600 s");
  c.note("val Dice: baseline " + fmt(full.baseline) + ", full " + fmt(full.ssl) + ", M-only baseline " +
         fmt(main_only.baseline) + ", M-only " + fmt(main_only.ssl) + ", " + fmt(secs) + " s");
}

}  // namespace
}  // namespace wtbcp

int main(int argc, char** argv) {
  using namespace wtbcp;
  torch::set_num_threads(1);
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      selected.insert(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: " << argv[0] << " [--criterion N]...\n";
      return 2;
    }
  }
  const std::vector<std::pair<std::string, std::function<void(Checks&)>>> criteria = {
      {"wavelet suite", criterion_wavelet},   {"mixer suite", criterion_mixer},
      {"loss suite", criterion_losses},       {"EMA suite", criterion_ema},
      {"model suite", criterion_model},       {"metrics suite", criterion_metrics},
      {"end-to-end overfit", criterion_overfit}, {"scaled SSL trend", criterion_ssl},
      {"determinism", criterion_determinism},
  };
  bool all_ok = true;
  for (size_t k = 0; k < criteria.size(); ++k) {
    const int number = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    Checks checks;
    const auto start = Clock::now();
    try {
      criteria[k].second(checks);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    all_ok &= checks.ok();
    std::cout << "criterion " << number << " " << (checks.ok() ? "PASS" : "FAIL") << " (" << criteria[k].first
              << ", " << fmt(secs, 3) << " s): " << checks.summary() << std::endl;
  }
  return all_ok ? 0 : 1;
}
