// SPDX-License-Identifier: Apache-2.0
#include "softlm/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "softlm/errors.hpp"
#include "softlm/soft_threshold.hpp"

namespace softlm {

std::size_t budget_for_cr(std::size_t dense_total, double cr) {
  if (!(cr >= 0.0 && cr < 1.0)) {
    throw ConfigError("compression ratio must lie in [0, 1), got " + std::to_string(cr));
  }
  return static_cast<std::size_t>(std::llround((1.0 - cr) * static_cast<double>(dense_total)));
}

std::vector<ParamGroup> make_param_groups(Classifier &model, double base_lr, double weight_decay,
                                          double threshold_lr) {
  ParamGroup decay{"decay", {}, base_lr, weight_decay, std::nullopt};
  ParamGroup no_decay{"no_decay", {}, base_lr, 0.0, std::nullopt};
  ParamGroup threshold{"threshold", {}, threshold_lr, 0.0, 0.0};
  for (auto &[path, layer] : model.registry().entries()) {
    std::optional<Tensor> bias;
    switch (layer.kind()) {
      case LinearKind::dense:
        decay.params.push_back(layer.dense().weight());
        bias = layer.dense().bias();
        break;
      case LinearKind::decomposed: {
        auto &d = layer.decomposed();
        decay.params.push_back(d.u());
        decay.params.push_back(d.v());
        no_decay.params.push_back(d.sigma());
        threshold.params.push_back(d.alpha());
        bias = d.bias();
        break;
      }
      case LinearKind::merged:
        if (!layer.merged().degenerate()) {
          decay.params.push_back(layer.merged().u_t());
          decay.params.push_back(layer.merged().vs());
        }
        bias = layer.merged().bias();
        break;
    }
    if (bias) no_decay.params.push_back(*bias);
  }
  for (auto &[name, t] : model.tensors()) no_decay.params.push_back(t);
  return {decay, no_decay, threshold};
}

std::size_t recount_live_params(const Classifier &model, const std::vector<std::string> &paths,
                                const std::vector<std::vector<double>> &sigmas,
                                const std::vector<double> &alphas, double eps) {
  if (sigmas.size() != paths.size() || alphas.size() != paths.size()) {
    throw DimensionError("recount: " + std::to_string(paths.size()) + " layers but " +
                         std::to_string(sigmas.size()) + " sigma and " +
                         std::to_string(alphas.size()) + " alpha snapshots");
  }
  std::size_t total = 0;
  for (const auto &p : model.compressible_paths()) {
    const auto &layer = model.registry().at(p);
    auto it = std::find(paths.begin(), paths.end(), p);
    if (it == paths.end()) {
      total += layer.storage_params(eps);
      continue;
    }
    const auto i = static_cast<std::size_t>(it - paths.begin());
    const auto &d = layer.decomposed();
    SoftThresholdParams tp{alphas[i], d.sharpness(), d.below()};
    const auto th = soft_threshold_forward(sigmas[i], tp);
    const auto k = static_cast<std::size_t>(
        std::count_if(th.begin(), th.end(), [eps](double x) { return std::abs(x) > eps; }));
    total += storage_params(layer.out_features(), layer.in_features(), k);
  }
  return total;
}

std::vector<double> predict_logits(const Classifier &model, const Dataset &ds,
                                   std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<double> out;
  out.reserve(ds.size() * model.n_classes());
  for (const auto &idx : epoch_batches(ds.size(), batch_size)) {
    const auto logits = model.forward(make_batch(ds, idx));
    const auto d = logits.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

std::vector<int> predict(const Classifier &model, const Dataset &ds, std::size_t batch_size) {
  const auto logits = predict_logits(model, ds, batch_size);
  const auto c = model.n_classes();
  std::vector<int> pred(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto row = logits.begin() + static_cast<std::ptrdiff_t>(i * c);
    pred[i] = static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(c)) - row);
  }
  return pred;
}

Metrics evaluate(const Classifier &model, const Dataset &ds) {
  if (ds.empty()) throw DataError("cannot evaluate on an empty dataset");
  if (ds.n_classes > model.n_classes() || ds.vocab_size > model.vocab_size()) {
    throw DataError("dataset (vocab " + std::to_string(ds.vocab_size) + ", classes " +
                    std::to_string(ds.n_classes) + ") does not fit model (vocab " +
                    std::to_string(model.vocab_size()) + ", classes " +
                    std::to_string(model.n_classes()) + ")");
  }
  const auto pred = predict(model, ds);
  std::vector<int> truth;
  truth.reserve(ds.size());
  for (const auto &ex : ds.examples) truth.push_back(ex.label);
  return compute_metrics(pred, truth, model.n_classes());
}

namespace {

// Seed stream for batch order, kept apart from the model-init stream.
constexpr std::uint64_t kShuffleSalt = 0x5f3759df9e3779b9ULL;

class BatchCycler {
 public:
  BatchCycler(const Dataset &ds, std::size_t batch_size, std::uint64_t seed)
      : ds_(ds), bs_(batch_size), rng_(seed ^ kShuffleSalt) {
    if (ds.empty()) throw DataError("training set is empty");
  }

  /// Next batch; `epoch_end` is set when it completes a pass over the data.
  Batch next(bool &epoch_end) {
    if (pos_ == order_.size()) {
      order_ = epoch_batches(ds_.size(), bs_, &rng_);
      pos_ = 0;
    }
    const auto &idx = order_[pos_++];
    epoch_end = pos_ == order_.size();
    return make_batch(ds_, idx);
  }

  std::size_t batches_per_epoch() const { return (ds_.size() + bs_ - 1) / bs_; }

 private:
  const Dataset &ds_;
  std::size_t bs_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::size_t>> order_;
  std::size_t pos_ = 0;
};

std::vector<Tensor> alpha_tensors(const std::vector<DecomposedLinear *> &layers) {
  std::vector<Tensor> out;
  out.reserve(layers.size());
  for (auto *l : layers) out.push_back(l->alpha());
  return out;
}

void check_fits(const Classifier &model, const Dataset &ds) {
  if (ds.n_classes > model.n_classes() || ds.vocab_size > model.vocab_size()) {
    throw DataError("dataset (vocab " + std::to_string(ds.vocab_size) + ", classes " +
                    std::to_string(ds.n_classes) + ") does not fit model (vocab " +
                    std::to_string(model.vocab_size()) + ", classes " +
                    std::to_string(model.n_classes()) + ")");
  }
}

}  // namespace

std::vector<EvalRecord> pretrain(Classifier &model, const Dataset &train, const Dataset *val,
                                 const PretrainConfig &cfg) {
  check_fits(model, train);
  AdamW opt(make_param_groups(model, cfg.lr, cfg.weight_decay, 0.0));
  BatchCycler cycler(train, cfg.batch_size, cfg.seed);
  std::vector<EvalRecord> evals;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    bool end = false;
    while (!end) {
      auto batch = cycler.next(end);
      opt.zero_grad();
      auto loss = cross_entropy(model.forward(batch), batch.labels);
      backward(loss);
      opt.step();
      ++step;
    }
    if (val && !val->empty() && epoch == cfg.epochs) {
      evals.push_back({"pretrain", epoch, step, evaluate(model, *val)});
    }
  }
  return evals;
}

RunTelemetry finetune(Classifier &model, const Dataset &train, const Dataset *val,
                      const TrainConfig &cfg) {
  check_fits(model, train);
  if (!(cfg.gamma >= 0.0)) throw ConfigError("train.gamma must be non-negative");
  RunTelemetry tel;
  auto layers = decomposed_layers(model);
  if (layers.empty()) throw ContractError("finetune: model has no decomposed layers");
  for (const auto &[path, layer] : model.registry().entries()) {
    if (layer.kind() == LinearKind::decomposed) tel.layer_paths.push_back(path);
  }
  tel.dense_params = compressible_dense_params(model);
  tel.target_params = cfg.target_params ? *cfg.target_params : budget_for_cr(tel.dense_params, cfg.cr);
  if (tel.target_params == 0 || tel.target_params > tel.dense_params) {
    throw ConfigError("parameter budget " + std::to_string(tel.target_params) +
                      " must lie in (0, " + std::to_string(tel.dense_params) + "]");
  }
  tel.initial_live_params = compressible_live_params(model, cfg.rank_eps);

  AdamW opt(make_param_groups(model, cfg.base_lr, cfg.weight_decay, cfg.threshold_lr));
  BatchCycler cycler(train, cfg.batch_size, cfg.seed);
  const auto alphas = alpha_tensors(layers);
  bool frozen = false;

  auto one_step = [&](const char *phase) {
    bool epoch_end = false;
    auto batch = cycler.next(epoch_end);
    opt.zero_grad();
    auto l_acc = cross_entropy(model.forward(batch), batch.labels);
    auto lb = total_loss(l_acc, alphas, cfg.gamma, cfg.variant);
    backward(lb.total);
    opt.step();

    StepRecord rec;
    rec.step = ++tel.total_steps;
    rec.phase = phase;
    rec.l_acc = lb.l_acc;
    rec.compression_term = lb.selected_term();
    rec.l_tot = lb.l_tot;
    rec.frozen = frozen;
    for (auto *l : layers) {
      rec.alphas.push_back(l->alpha().item());
      rec.ranks.push_back(l->effective_rank(cfg.rank_eps));
      if (cfg.record_sigmas) {
        const auto s = l->sigma().data();
        rec.sigmas.emplace_back(s.begin(), s.end());
      }
    }
    rec.live_params = compressible_live_params(model, cfg.rank_eps);
    tel.steps.push_back(std::move(rec));
    return epoch_end;
  };

  // Phase 1: learn thresholds until the budget is met; checked before every step.
  for (;;) {
    const auto live = tel.steps.empty() ? tel.initial_live_params : tel.steps.back().live_params;
    if (live <= tel.target_params) {
      tel.freeze_step = tel.total_steps;
      tel.params_at_freeze = live;
      break;
    }
    if (tel.total_steps >= cfg.max_budget_steps) {
      throw BudgetUnreachable(
          "parameter budget " + std::to_string(tel.target_params) + " not reached after " +
          std::to_string(cfg.max_budget_steps) + " steps (live count " + std::to_string(live) +
          "); raise train.gamma or train.threshold_lr, or train.max_budget_steps");
    }
    one_step("budget");
  }
  tel.achieved_cr = 1.0 - static_cast<double>(tel.params_at_freeze) /
                              static_cast<double>(tel.dense_params);

  // Freeze: threshold learning rate to zero.
  frozen = true;
  opt.set_lr("threshold", 0.0);
  for (auto *l : layers) l->set_frozen(true);
  if (val && !val->empty()) tel.evals.push_back({"freeze", 0, tel.total_steps, evaluate(model, *val)});

  // Phase 2: recovery epochs with the same loss.
  const auto per_epoch = cycler.batches_per_epoch();
  for (std::size_t epoch = 1; epoch <= cfg.recovery_epochs; ++epoch) {
    for (std::size_t b = 0; b < per_epoch; ++b) one_step("recovery");
    const bool last = epoch == cfg.recovery_epochs;
    if (val && !val->empty() && (last || (cfg.eval_every && epoch % cfg.eval_every == 0))) {
      tel.evals.push_back({"recovery", epoch, tel.total_steps, evaluate(model, *val)});
    }
  }
  return tel;
}

StaticPlan plan_static_rank(const Classifier &model, std::size_t budget) {
  const auto paths = model.compressible_paths();
  std::size_t max_rank = 0;
  for (const auto &p : paths) {
    const auto &l = model.registry().at(p);
    max_rank = std::max(max_rank, std::min(l.out_features(), l.in_features()));
  }
  auto total = [&](std::size_t k) {
    std::size_t t = 0;
    for (const auto &p : paths) {
      const auto &l = model.registry().at(p);
      t += storage_params(l.out_features(), l.in_features(),
                          std::min(k, std::min(l.out_features(), l.in_features())));
    }
    return t;
  };
  StaticPlan plan;
  plan.budget = budget;
  for (std::size_t k = 1; k <= max_rank; ++k) {
    const auto t = total(k);
    if (t > budget) break;
    plan.rank = k;
    plan.params = t;
  }
  if (plan.rank == 0) {
    throw BudgetUnreachable("no uniform rank fits a budget of " + std::to_string(budget) +
                            " parameters");
  }
  plan.gap = budget - plan.params;
  return plan;
}

void apply_static_rank(Classifier &model, std::size_t rank) {
  for (const auto &p : model.compressible_paths()) {
    auto &slot = model.registry().at(p);
    if (slot.kind() != LinearKind::dense) {
      throw ContractError("static baseline expects dense layers; " + p + " is " +
                          to_string(slot.kind()));
    }
    const auto m = slot.out_features(), n = slot.in_features();
    const auto k = std::min(rank, std::min(m, n));
    if (factored_params(m, n, k) >= dense_params(m, n)) continue;
    const auto &d = slot.dense();
    slot = Linear(MergedLinear::from_svd(svd(d.weight()), k, d.bias()));
  }
}

RunTelemetry train_steps(Classifier &model, const Dataset &train, const Dataset *val,
                         const TrainConfig &cfg, std::size_t steps) {
  check_fits(model, train);
  RunTelemetry tel;
  tel.dense_params = compressible_dense_params(model);
  tel.initial_live_params = compressible_live_params(model, cfg.rank_eps);
  tel.params_at_freeze = tel.initial_live_params;
  tel.target_params = tel.initial_live_params;
  tel.achieved_cr = 1.0 - static_cast<double>(tel.params_at_freeze) /
                              static_cast<double>(tel.dense_params);
  AdamW opt(make_param_groups(model, cfg.base_lr, cfg.weight_decay, 0.0));
  BatchCycler cycler(train, cfg.batch_size, cfg.seed);
  std::size_t epoch = 0;
  while (tel.total_steps < steps) {
    bool epoch_end = false;
    auto batch = cycler.next(epoch_end);
    opt.zero_grad();
    auto loss = cross_entropy(model.forward(batch), batch.labels);
    backward(loss);
    opt.step();
    StepRecord rec;
    rec.step = ++tel.total_steps;
    rec.phase = "static";
    rec.l_acc = rec.l_tot = loss.item();
    rec.live_params = tel.initial_live_params;
    tel.steps.push_back(std::move(rec));
    if (epoch_end) ++epoch;
  }
  if (val && !val->empty()) tel.evals.push_back({"static", epoch, tel.total_steps, evaluate(model, *val)});
  return tel;
}

}  // namespace softlm
