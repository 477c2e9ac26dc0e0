#include "wtbcp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "wtbcp/error.hpp"
#include "wtbcp/metrics.hpp"
#include "wtbcp/ndindex.hpp"

using nlohmann::json;

namespace wtbcp {

namespace {

// Random streams per phase; iteration k of a phase always sees the same draws.
constexpr uint64_t kPretrainStream = uint64_t{1} << 40;
constexpr uint64_t kSslStream = uint64_t{2} << 40;

std::vector<std::pair<std::string, torch::Tensor>> named_params(const torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : m.named_parameters()) out.emplace_back(item.key(), item.value());
  return out;
}

torch::Tensor to_tensor(const Volume& v) {
  auto t = torch::empty(v.shape(), torch::kFloat32);
  std::memcpy(t.data_ptr<float>(), v.data().data(), static_cast<size_t>(v.numel()) * sizeof(float));
  return t;
}

void check_model_inputs(const ModelConfig& model, const TrainConfig& config) {
  model.validate();
  config.validate();
  RunConfig rc{model, config};
  rc.validate();
}

void freeze(XNetPlus& model) {
  for (auto& p : model->parameters()) p.set_requires_grad(false);
}

}  // namespace

// ---------------------------------------------------------------------------
// Optimizer and EMA
// ---------------------------------------------------------------------------

Sgd::Sgd(std::vector<std::pair<std::string, torch::Tensor>> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {}

void Sgd::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
}

void Sgd::step(double lr) {
  torch::NoGradGuard no_grad;
  for (auto& [name, p] : params_) {
    if (!p.grad().defined()) continue;
    torch::Tensor d = p.grad();
    if (weight_decay_ != 0.0) d = d + weight_decay_ * p;
    if (momentum_ != 0.0) {
      auto it = buffers_.find(name);
      if (it == buffers_.end()) {
        it = buffers_.emplace(name, d.clone()).first;
      } else {
        it->second.mul_(momentum_).add_(d);
      }
      d = it->second;
    }
    p.add_(d, -lr);
  }
}

void Sgd::load_momentum_buffers(const TensorMap& buffers) {
  std::set<std::string> names;
  for (const auto& [name, p] : params_) names.insert(name);
  buffers_.clear();
  for (const auto& [name, t] : buffers) {
    if (!names.count(name)) throw ContractError("momentum buffer '" + name + "' matches no parameter");
    buffers_.emplace(name, t.clone());
  }
}

double poly_lr(double base_lr, int64_t iteration, int64_t total, double power) {
  const double frac = std::clamp(static_cast<double>(iteration) / static_cast<double>(std::max<int64_t>(total, 1)), 0.0, 1.0);
  return base_lr * std::pow(1.0 - frac, power);
}

void ema_update(TensorMap& teacher, const TensorMap& student, double lambda) {
  if (teacher.size() != student.size()) throw ContractError("EMA: teacher and student tensor sets differ in size");
  for (const auto& [name, s] : student) {
    if (!teacher.count(name)) throw ContractError("EMA: teacher lacks '" + name + "'");
  }
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : teacher) {
    const auto& s = student.at(name);
    if (s.sizes() != t.sizes()) throw ContractError("EMA: shape mismatch for '" + name + "'");
    t.mul_(lambda).add_(s, 1.0 - lambda);
  }
}

void ema_update(torch::nn::Module& teacher, const torch::nn::Module& student, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("EMA lambda must lie in [0, 1]");
  const auto t_state = model_state(teacher);
  const auto s_state = model_state(student);
  if (t_state.size() != s_state.size()) throw ContractError("EMA: teacher and student tensor sets differ in size");
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < t_state.size(); ++i) {
    if (t_state[i].first != s_state[i].first || t_state[i].second.sizes() != s_state[i].second.sizes()) {
      throw ContractError("EMA: teacher/student mismatch at '" + t_state[i].first + "'");
    }
    auto t = t_state[i].second;
    if (lambda == 0.0) {
      t.copy_(s_state[i].second);
    } else if (lambda != 1.0) {
      t.mul_(lambda).add_(s_state[i].second, 1.0 - lambda);
    }
  }
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

TrainingSession::TrainingSession(const ModelConfig& model, const TrainConfig& train)
    : model_config_(model),
      train_(train),
      student_(build_model(model)),
      teacher_(build_model(model)),
      optimizer_(named_params(*student_), train.momentum, train.weight_decay) {
  restore_state(*teacher_, capture_state(*student_));
  freeze(teacher_);
}

TrainingSession::TrainingSession(const Checkpoint& ck) : TrainingSession(ck.model, ck.train) {
  restore_state(*student_, ck.student);
  restore_state(*teacher_, ck.teacher);
  optimizer_.load_momentum_buffers(ck.momentum);
  phase = ck.phase;
  iteration = ck.iteration;
  metric_history = ck.metric_history;
}

Checkpoint TrainingSession::to_checkpoint() const {
  Checkpoint ck;
  ck.model = model_config_;
  ck.train = train_;
  ck.phase = phase;
  ck.iteration = iteration;
  ck.student = capture_state(*student_);
  ck.teacher = capture_state(*teacher_);
  for (const auto& [name, t] : optimizer_.momentum_buffers()) ck.momentum.emplace(name, t.clone());
  ck.metric_history = metric_history;
  return ck;
}

void TrainingSession::start_ssl() {
  restore_state(*teacher_, capture_state(*student_));
  optimizer_.load_momentum_buffers({});
  phase = TrainingPhase::ssl;
  iteration = 0;
}

// ---------------------------------------------------------------------------
// Tensor plumbing
// ---------------------------------------------------------------------------

TripleBatch make_triple_batch(const std::vector<Volume>& images, WaveletFamily family) {
  if (images.empty()) throw ShapeError("cannot batch zero images");
  std::vector<torch::Tensor> low, main, high;
  for (const auto& img : images) {
    if (img.shape() != images.front().shape()) throw ShapeError("images in a batch must share their shape");
    const FrequencyTriple triple = frequency_triple(img, family);
    low.push_back(to_tensor(triple.low));
    main.push_back(to_tensor(triple.main));
    high.push_back(to_tensor(triple.high));
  }
  return TripleBatch{torch::stack(low), torch::stack(main), torch::stack(high)};
}

torch::Tensor label_tensor(const std::vector<Volume>& labels) {
  std::vector<torch::Tensor> rows;
  for (const auto& l : labels) {
    if (l.channels() != 1) throw ShapeError("label volumes must have one channel");
    rows.push_back(to_tensor(l).squeeze(0).to(torch::kLong));
  }
  return torch::stack(rows);
}

std::vector<Volume> argmax_labels(const torch::Tensor& probs) {
  const auto idx = probs.detach().argmax(1).to(torch::kFloat32).contiguous();
  std::vector<Volume> out;
  for (int64_t n = 0; n < idx.size(0); ++n) {
    const auto row = idx[n].contiguous();
    Shape shape{1};
    for (int64_t d = 0; d < row.dim(); ++d) shape.push_back(row.size(d));
    std::vector<float> data(row.data_ptr<float>(), row.data_ptr<float>() + row.numel());
    out.emplace_back(shape, std::move(data), VolumeKind::label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

Checkpoint pretrain(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config, const LogSink& log) {
  if (dataset.labeled_indices.empty()) throw ConfigError("pretraining needs at least one labeled sample");
  check_model_inputs(model, config);
  if (dataset.spatial_rank() != model.spatial_rank) throw ConfigError("dataset rank does not match model spatial_rank");

  TrainingSession session(model, config);
  auto& student = session.student();
  student->train();
  const LossWeights weights{config.alpha, config.consistency_weight};

  for (int64_t it = 0; it < config.pretrain_iterations; ++it) {
    Rng rng = derive_rng(config.seed, kPretrainStream + static_cast<uint64_t>(it));
    std::vector<Volume> images, labels;
    for (int64_t b = 0; b < config.pretrain_batch; ++b) {
      const auto& s = dataset.samples[dataset.labeled_indices[static_cast<size_t>(
          uniform_index(rng, static_cast<int64_t>(dataset.labeled_indices.size())))]];
      auto crop = random_crop(s.image, &*s.label, config.patch, rng);
      images.push_back(std::move(crop.image));
      labels.push_back(std::move(*crop.label));
    }
    const auto preds = student->forward(make_triple_batch(images, config.wavelet));
    const auto target = label_tensor(labels);
    const auto ones = torch::ones(target.sizes(), torch::kFloat32);

    BranchLosses supervised = branch_losses(preds, target, ones);
    ConsistencyTerms con = preds.low || preds.high ? consistency_loss(preds) : ConsistencyTerms{{}, {}, torch::zeros({})};
    const torch::Tensor total = supervised.sum() + weights.consistency * con.total;
    const double total_value = total.item<double>();
    if (!std::isfinite(total_value)) {
      throw NumericError("non-finite pretraining loss at iteration " + std::to_string(it));
    }

    const double lr = poly_lr(config.base_lr, it, config.pretrain_iterations, config.lr_power);
    session.optimizer().zero_grad();
    total.backward();
    session.optimizer().step(lr);
    session.iteration = it + 1;

    if (log && ((it + 1) % config.log_interval == 0 || it + 1 == config.pretrain_iterations)) {
      LossBreakdown b{supervised, {}, con, {}, total};
      json terms = b.to_json();
      log(json{{"phase", "pretrain"},
               {"iteration", it + 1},
               {"lr", lr},
               {"loss", total_value},
               {"supervised", terms["in"]},
               {"con", terms["con"]["in"]}});
    }
  }

  restore_state(*session.teacher(), capture_state(*student));
  return session.to_checkpoint();
}

// ---------------------------------------------------------------------------
// SSL
// ---------------------------------------------------------------------------

json SslStepRecord::to_json() const {
  json j = losses.to_json();
  return json{{"phase", "ssl"}, {"iteration", iteration}, {"lr", lr},          {"ema_lambda", ema_lambda},
              {"loss", j["total"]}, {"in", j["in"]},      {"out", j["out"]}, {"con", j["con"]}};
}

SslStepRecord ssl_step(TrainingSession& session, const std::vector<LabeledPair>& labeled,
                       const std::vector<UnlabeledPair>& unlabeled, Rng& rng) {
  const TrainConfig& config = session.train_config();
  if (labeled.empty() || labeled.size() != unlabeled.size()) {
    throw SamplingError("ssl_step needs equally many labeled and unlabeled pairs");
  }
  const Shape spatial = labeled.front().image_i.spatial_shape();

  // Teacher pseudo-labels from the raw-image branch only.
  std::vector<Volume> images_p, images_q;
  for (const auto& u : unlabeled) {
    images_p.push_back(u.image_p);
    images_q.push_back(u.image_q);
  }
  std::vector<Volume> pseudo_p, pseudo_q;
  {
    torch::NoGradGuard no_grad;
    auto& teacher = session.teacher();
    teacher->eval();
    pseudo_p = argmax_labels(teacher->forward(make_triple_batch(images_p, config.wavelet)).main);
    pseudo_q = argmax_labels(teacher->forward(make_triple_batch(images_q, config.wavelet)).main);
  }

  std::vector<MixMask> masks;
  std::vector<Volume> x_in, x_out, y_in, y_out;
  for (size_t b = 0; b < labeled.size(); ++b) {
    const auto& l = labeled[b];
    const auto& u = unlabeled[b];
    masks.push_back(generate_mask(spatial, config.mask_ratio, rng));
    const auto& mask = masks.back();
    MixedImages mixed = mix_pair(l.image_i, l.image_j, u.image_p, u.image_q, mask);
    x_in.push_back(std::move(mixed.inward));
    x_out.push_back(std::move(mixed.outward));
    // Pseudo-labels follow the unlabeled image that was actually pasted.
    y_in.push_back(mix_labels(l.label_j, pseudo_p[b], mask, MixDirection::inward));
    y_out.push_back(mix_labels(l.label_i, pseudo_q[b], mask, MixDirection::outward));
  }

  auto& student = session.student();
  student->train();
  const PredictionTriple preds_in = student->forward(make_triple_batch(x_in, config.wavelet));
  const PredictionTriple preds_out = student->forward(make_triple_batch(x_out, config.wavelet));
  const torch::Tensor m = mask_tensor(masks);
  const torch::Tensor target_in = label_tensor(y_in);
  const torch::Tensor target_out = label_tensor(y_out);

  const LossWeights weights{config.alpha, config.consistency_weight};
  const auto in_weights = bcp_weights(m, config.alpha, MixDirection::inward);
  const auto out_weights = bcp_weights(m, config.alpha, MixDirection::outward);

  SslStepRecord record;
  record.losses.inward = branch_losses(preds_in, target_in, in_weights);
  record.losses.outward = branch_losses(preds_out, target_out, out_weights);
  const bool has_aux = preds_in.low || preds_in.high;
  record.losses.consistency_in = has_aux ? consistency_loss(preds_in) : ConsistencyTerms{{}, {}, torch::zeros({})};
  record.losses.consistency_out = has_aux ? consistency_loss(preds_out) : ConsistencyTerms{{}, {}, torch::zeros({})};
  record.losses.total = total_loss(record.losses.inward, record.losses.outward, record.losses.consistency_in,
                                   record.losses.consistency_out, weights);

  record.lr = poly_lr(config.base_lr, session.iteration, config.ssl_iterations, config.lr_power);
  session.optimizer().zero_grad();
  record.losses.total.backward();
  session.optimizer().step(record.lr);

  ema_update(*session.teacher(), *student, config.ema_lambda);
  record.ema_lambda = config.ema_lambda;
  record.iteration = ++session.iteration;
  return record;
}

void sample_ssl_batch(const Dataset& dataset, const TrainConfig& config, Rng& rng, std::vector<LabeledPair>& labeled,
                      std::vector<UnlabeledPair>& unlabeled) {
  const auto n_l = static_cast<int64_t>(dataset.labeled_indices.size());
  const auto n_u = static_cast<int64_t>(dataset.unlabeled_indices.size());
  if (n_l < 2) throw SamplingError("SSL needs at least two labeled samples (i != j)");
  if (n_u < 2) throw SamplingError("SSL needs at least two unlabeled samples (p != q)");
  auto distinct_pair = [&](int64_t n) {
    const int64_t a = uniform_index(rng, n);
    int64_t b = uniform_index(rng, n - 1);
    if (b >= a) ++b;
    return std::pair{a, b};
  };
  labeled.clear();
  unlabeled.clear();
  for (int64_t k = 0; k < config.pairs_per_step; ++k) {
    const auto [i, j] = distinct_pair(n_l);
    const auto [p, q] = distinct_pair(n_u);
    const auto& si = dataset.samples[dataset.labeled_indices[static_cast<size_t>(i)]];
    const auto& sj = dataset.samples[dataset.labeled_indices[static_cast<size_t>(j)]];
    const auto& sp = dataset.samples[dataset.unlabeled_indices[static_cast<size_t>(p)]];
    const auto& sq = dataset.samples[dataset.unlabeled_indices[static_cast<size_t>(q)]];
    auto ci = random_crop(si.image, &*si.label, config.patch, rng);
    auto cj = random_crop(sj.image, &*sj.label, config.patch, rng);
    auto cp = random_crop(sp.image, nullptr, config.patch, rng);
    auto cq = random_crop(sq.image, nullptr, config.patch, rng);
    labeled.push_back(LabeledPair{std::move(ci.image), std::move(*ci.label), std::move(cj.image), std::move(*cj.label)});
    unlabeled.push_back(UnlabeledPair{std::move(cp.image), std::move(cq.image)});
  }
}

void train_ssl(TrainingSession& session, const Dataset& dataset, const Dataset* validation, const LogSink& log,
               std::optional<int64_t> stop_at) {
  check_model_inputs(session.model_config(), session.train_config());
  if (session.phase == TrainingPhase::pretrain) session.start_ssl();
  const TrainConfig& config = session.train_config();
  const Dataset labeled_only = dataset.labeled_subset();
  const Dataset& eval_set = validation ? *validation : labeled_only;

  std::vector<LabeledPair> labeled;
  std::vector<UnlabeledPair> unlabeled;
  const int64_t end = std::min(config.ssl_iterations, stop_at.value_or(config.ssl_iterations));
  while (session.iteration < end) {
    Rng rng = derive_rng(config.seed, kSslStream + static_cast<uint64_t>(session.iteration));
    sample_ssl_batch(dataset, config, rng, labeled, unlabeled);
    const SslStepRecord record = ssl_step(session, labeled, unlabeled, rng);
    const bool last = session.iteration == config.ssl_iterations;
    if (log && (session.iteration % config.log_interval == 0 || last)) log(record.to_json());
    const bool eval_now = (config.eval_interval > 0 && session.iteration % config.eval_interval == 0) || last;
    if (eval_now && !eval_set.labeled_indices.empty()) {
      const json report = evaluate(session.student(), eval_set, config.patch, config.wavelet);
      json entry = {{"iteration", session.iteration}, {"mean", report["mean"]}};
      session.metric_history.push_back(entry);
      if (log) log(json{{"phase", "eval"}, {"iteration", session.iteration}, {"report", report}});
    }
  }
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

torch::Tensor predict_probabilities(XNetPlus& model, const Volume& image, const Shape& patch, WaveletFamily family) {
  const ModelConfig& mc = model->config();
  if (image.spatial_rank() != mc.spatial_rank) {
    throw ConfigError("image has " + std::to_string(image.spatial_rank()) + " spatial dims, model expects " +
                      std::to_string(mc.spatial_rank));
  }
  if (image.channels() != mc.in_channels) throw ConfigError("image channel count does not match the model");
  if (static_cast<int>(patch.size()) != mc.spatial_rank) throw ConfigError("patch rank does not match the model");
  const Shape spatial = image.spatial_shape();
  const int64_t div = mc.size_divisor();

  Shape window(spatial.size()), padded(spatial.size());
  std::vector<std::vector<int64_t>> starts(spatial.size());
  for (size_t a = 0; a < spatial.size(); ++a) {
    const int64_t tile = std::max<int64_t>(div, patch[a] / div * div);
    if (spatial[a] <= tile) {
      window[a] = (spatial[a] + div - 1) / div * div;
      padded[a] = window[a];
      starts[a] = {0};
    } else {
      window[a] = tile;
      padded[a] = spatial[a];
      const int64_t stride = std::max<int64_t>(1, tile / 2);
      for (int64_t s = 0;; s += stride) {
        const int64_t clamped = std::min(s, spatial[a] - tile);
        starts[a].push_back(clamped);
        if (clamped == spatial[a] - tile) break;
      }
    }
  }

  const Volume work = pad_to(image, padded);
  Shape acc_shape{mc.num_classes};
  acc_shape.insert(acc_shape.end(), padded.begin(), padded.end());
  torch::Tensor acc = torch::zeros(acc_shape, torch::kFloat32);
  torch::Tensor counts = torch::zeros(padded, torch::kFloat32);

  torch::NoGradGuard no_grad;
  model->eval();
  Shape n_starts;
  for (const auto& s : starts) n_starts.push_back(static_cast<int64_t>(s.size()));
  Shape offset(spatial.size());
  for_each_index(n_starts, [&](std::span<const int64_t> which, int64_t) {
    for (size_t a = 0; a < which.size(); ++a) offset[a] = starts[a][static_cast<size_t>(which[a])];
    const Volume tile = crop(work, offset, window);
    const auto probs = model->forward(make_triple_batch({tile}, family)).main[0];
    std::vector<torch::indexing::TensorIndex> region{torch::indexing::Slice()};
    std::vector<torch::indexing::TensorIndex> region_counts;
    for (size_t a = 0; a < offset.size(); ++a) {
      region.emplace_back(torch::indexing::Slice(offset[a], offset[a] + window[a]));
      region_counts.emplace_back(torch::indexing::Slice(offset[a], offset[a] + window[a]));
    }
    acc.index(region).add_(probs);
    counts.index(region_counts).add_(1.0);
  });

  torch::Tensor probs = acc / counts.unsqueeze(0);
  std::vector<torch::indexing::TensorIndex> keep{torch::indexing::Slice()};
  for (int64_t d : spatial) keep.emplace_back(torch::indexing::Slice(0, d));
  return probs.index(keep).contiguous();
}

Volume predict(XNetPlus& model, const Volume& image, const Shape& patch, WaveletFamily family) {
  return argmax_labels(predict_probabilities(model, image, patch, family).unsqueeze(0)).front();
}

Volume predict(const Checkpoint& checkpoint, const Volume& image) {
  XNetPlus model = build_model(checkpoint.model);
  restore_state(*model, checkpoint.student);
  return predict(model, image, checkpoint.train.patch, checkpoint.train.wavelet);
}

json metric_report(const std::vector<Volume>& predictions, const std::vector<Volume>& ground_truth, int num_classes) {
  if (predictions.size() != ground_truth.size()) throw ShapeError("prediction and ground-truth counts differ");
  if (ground_truth.empty()) throw ValidationError("metric report needs at least one labeled sample");
  json per_class = json::array();
  double dice_sum = 0.0, jac_sum = 0.0, hd_sum = 0.0, asd_sum = 0.0;
  int hd_classes = 0;
  for (int c = 1; c < num_classes; ++c) {
    double d = 0.0, j = 0.0, h = 0.0, s = 0.0;
    int defined = 0;
    for (size_t n = 0; n < predictions.size(); ++n) {
      const auto pair = region_pair(predictions[n], ground_truth[n], c);
      d += dice(pair);
      j += jaccard(pair);
      try {
        const auto pooled = pooled_surface_distances(pair);
        h += percentile(pooled, 0.95);
        double sum = 0.0;
        for (double x : pooled) sum += x;
        s += sum / static_cast<double>(pooled.size());
        ++defined;
      } catch (const UndefinedMetricError&) {
      }
    }
    const auto count = static_cast<double>(predictions.size());
    json entry = {{"class", c}, {"dice", d / count}, {"jaccard", j / count}, {"distance_count", defined}};
    if (defined > 0) {
      entry["hd95"] = h / defined;
      entry["asd"] = s / defined;
      hd_sum += h / defined;
      asd_sum += s / defined;
      ++hd_classes;
    } else {
      entry["hd95"] = nullptr;
      entry["asd"] = nullptr;
    }
    dice_sum += d / count;
    jac_sum += j / count;
    per_class.push_back(entry);
  }
  const double k = num_classes - 1;
  json mean = {{"dice", dice_sum / k}, {"jaccard", jac_sum / k}};
  mean["hd95"] = hd_classes ? json(hd_sum / hd_classes) : json(nullptr);
  mean["asd"] = hd_classes ? json(asd_sum / hd_classes) : json(nullptr);
  return json{{"num_samples", predictions.size()}, {"num_classes", num_classes}, {"per_class", per_class}, {"mean", mean}};
}

json evaluate(XNetPlus& model, const Dataset& dataset, const Shape& patch, WaveletFamily family) {
  if (dataset.labeled_indices.empty()) throw ValidationError("evaluation needs labeled samples");
  std::vector<Volume> preds, gts;
  for (auto idx : dataset.labeled_indices) {
    const auto& s = dataset.samples[idx];
    preds.push_back(predict(model, s.image, patch, family));
    gts.push_back(*s.label);
  }
  return metric_report(preds, gts, dataset.num_classes);
}

json evaluate(const Checkpoint& checkpoint, const Dataset& dataset) {
  XNetPlus model = build_model(checkpoint.model);
  restore_state(*model, checkpoint.student);
  return evaluate(model, dataset, checkpoint.train.patch, checkpoint.train.wavelet);
}

}  // namespace wtbcp
