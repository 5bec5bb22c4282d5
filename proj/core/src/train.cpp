#include "laat/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "laat/errors.hpp"

namespace laat {

using nlohmann::json;

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (scheduler_patience < 1 || early_stop_patience < 1)
    throw ConfigError("patience values must be >= 1");
  if (scheduler_factor <= 0.0 || scheduler_factor >= 1.0)
    throw ConfigError("scheduler_factor must lie strictly inside (0,1)");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ConfigError("threshold must lie strictly inside (0,1)");
}

Tensor bce_with_logits(Tape& tape, const Tensor& logits,
                       const std::vector<uint8_t>& targets) {
  if (logits.size() != static_cast<int64_t>(targets.size()))
    throw ShapeError("bce: " + std::to_string(logits.size()) + " logits vs " +
                     std::to_string(targets.size()) + " targets");
  if (targets.empty()) throw ShapeError("bce on zero labels");
  for (uint8_t y : targets)
    if (y > 1) throw ConfigError("bce targets must be 0 or 1");

  const auto& z = logits.data();
  const int n = static_cast<int>(z.size());
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    // max(z,0) - z*y + log(1 + exp(-|z|))
    total += std::max(z[j], 0.0) - z[j] * targets[j] +
             std::log1p(std::exp(-std::abs(z[j])));
  }
  Tensor loss = Tensor::scalar(total / n);

  if (tape.recording() && logits.requires_grad()) {
    loss.set_requires_grad(true);
    Tensor tz = logits, tl = loss;
    auto y = std::make_shared<std::vector<uint8_t>>(targets);
    tape.record([tz, tl, y, n]() mutable {
      if (!tl.has_grad()) return;
      const double g = tl.grad()[0];
      if (g == 0.0 || !tz.requires_grad()) return;
      auto& dz = tz.grad();
      const auto& zv = tz.data();
      for (int j = 0; j < n; ++j) {
        const double s = zv[j] >= 0.0
                             ? 1.0 / (1.0 + std::exp(-zv[j]))
                             : std::exp(zv[j]) / (1.0 + std::exp(zv[j]));
        dz[j] += g * (s - (*y)[j]) / n;
      }
    });
  }
  return loss;
}

Tensor joint_loss(Tape& tape, const ForwardTrace& trace,
                  const std::vector<uint8_t>& gold_raw,
                  const std::vector<uint8_t>& gold_normalized) {
  if (!trace.joint || !trace.logits_l1.defined())
    throw ConfigError("joint_loss requires a joint trace with level-1 outputs");
  Tensor l1 = bce_with_logits(tape, trace.logits_l1, gold_normalized);
  Tensor l2 = bce_with_logits(tape, trace.logits, gold_raw);
  return add(tape, l1, l2);
}

Tensor document_loss(Tape& tape, const ForwardTrace& trace,
                     const ProcessedDocument& doc) {
  if (trace.joint) return joint_loss(tape, trace, doc.gold_raw, doc.gold_normalized);
  return bce_with_logits(tape, trace.logits, doc.gold_raw);
}

// ---- AdamW --------------------------------------------------------------------

AdamW::AdamW(std::vector<NamedParam> params, AdamWConfig config)
    : config_(config) {
  for (auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    Slot s;
    s.param = p.tensor;
    s.m.assign(p.tensor.size(), 0.0);
    s.v.assign(p.tensor.size(), 0.0);
    slots_.push_back(std::move(s));
  }
}

void AdamW::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (auto& s : slots_) {
    auto& p = s.param.data();
    const std::vector<double>* g = s.param.has_grad() ? &s.param.grad() : nullptr;
    for (size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * gi;
      s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * gi * gi;
      const double m_hat = s.m[i] / bc1;
      const double v_hat = s.v[i] / bc2;
      p[i] -= config_.lr * (m_hat / (std::sqrt(v_hat) + config_.epsilon)) +
              config_.lr * config_.weight_decay * p[i];
    }
  }
}

// ---- Schedules -----------------------------------------------------------------

PlateauScheduler::PlateauScheduler(double initial_lr, int patience, double factor)
    : lr_(initial_lr), patience_(patience), factor_(factor),
      best_(-std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::observe(double metric) {
  if (metric > best_) {
    best_ = metric;
    stale_ = 0;
  } else if (++stale_ >= patience_) {
    lr_ *= factor_;
    stale_ = 0;
  }
  return lr_;
}

EarlyStopper::EarlyStopper(int patience)
    : patience_(patience), best_(-std::numeric_limits<double>::infinity()) {}

bool EarlyStopper::observe(double metric) {
  if (metric > best_) {
    best_ = metric;
    stale_ = 0;
    return false;
  }
  return ++stale_ >= patience_;
}

// ---- Epoch loop ------------------------------------------------------------------

double train_epoch(LaatModel& model, const std::vector<ProcessedDocument>& docs,
                   AdamW& optimizer, const TrainConfig& config, int epoch,
                   const Rng& run_rng) {
  if (docs.empty()) throw ConfigError("training split is empty");
  std::vector<size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = run_rng.substream("shuffle", static_cast<uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
  Rng dropout_rng = run_rng.substream("dropout", static_cast<uint64_t>(epoch));

  double total_loss = 0.0;
  size_t cursor = 0;
  while (cursor < order.size()) {
    const size_t batch_end =
        std::min(order.size(), cursor + static_cast<size_t>(config.batch_size));
    model.zero_grad();
    for (; cursor < batch_end; ++cursor) {
      const ProcessedDocument& doc = docs[order[cursor]];
      Tape tape;
      ForwardTrace trace = forward_doc(tape, model, doc, /*training=*/true, dropout_rng);
      Tensor loss = document_loss(tape, trace, doc);
      total_loss += loss.scalar_value();
      tape.backward(loss);
      tape.reset();
    }
    optimizer.step();
  }
  return total_loss / static_cast<double>(docs.size());
}

// ---- Fit -------------------------------------------------------------------------

FitResult fit(LaatModel& model, const std::vector<ProcessedDocument>& train_docs,
              const std::vector<ProcessedDocument>& val_docs,
              const std::vector<std::string>& label_names,
              const TrainConfig& config, std::ostream* log,
              const FitHooks& hooks) {
  config.validate();
  if (config.max_epochs > 0 && train_docs.empty())
    throw ConfigError("training split is empty");
  if (config.max_epochs > 0 && val_docs.empty())
    throw ConfigError("validation split is empty");

  AdamWConfig owc = config.adamw;
  owc.lr = config.lr;
  AdamW optimizer(model.parameters(), owc);
  PlateauScheduler scheduler(config.lr, config.scheduler_patience,
                             config.scheduler_factor);
  EarlyStopper stopper(config.early_stop_patience);
  Rng run_rng(config.seed);

  FitResult result;
  result.best_model = model.clone();
  double best_metric = -std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double epoch_lr = optimizer.lr();
    const double train_loss =
        train_epoch(model, train_docs, optimizer, config, epoch, run_rng);

    MetricReport val = evaluate(model, val_docs, label_names, config.threshold);
    const double metric = hooks.validation_metric
                              ? hooks.validation_metric(epoch, val)
                              : val.micro_f1;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss;
    rec.lr = epoch_lr;
    rec.val_micro_f1 = metric;
    rec.val_report = val;
    result.history.push_back(rec);

    if (log) {
      json j{{"epoch", epoch},
             {"train_loss", train_loss},
             {"lr", epoch_lr},
             {"val_micro_f1", metric},
             {"val_macro_f1", val.macro_f1},
             {"val_micro_auc", val.micro_auc},
             {"val_macro_auc", val.macro_auc}};
      (*log) << j.dump() << '\n';
    }

    if (metric > best_metric) {
      best_metric = metric;
      result.best_epoch = epoch;
      result.best_val_micro_f1 = metric;
      result.best_model = model.clone();
      result.best_val_report = val;
      if (hooks.on_improved) hooks.on_improved(*result.best_model, epoch);
    }

    optimizer.set_lr(scheduler.observe(metric));
    if (stopper.observe(metric)) break;
  }
  return result;
}

}  // namespace laat
