#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "laat/metrics.hpp"
#include "laat/model.hpp"

namespace laat {

struct AdamWConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;  // decoupled
};

struct TrainConfig {
  double lr = 0.001;
  int batch_size = 8;
  int max_epochs = 50;
  int scheduler_patience = 5;     // epochs
  double scheduler_factor = 0.9;  // lr multiplier on plateau
  int early_stop_patience = 6;    // epochs
  double threshold = 0.5;
  uint64_t seed = 1;
  AdamWConfig adamw;  // lr is taken from `lr` above

  void validate() const;
};

// Mean over labels of binary cross-entropy against logits, computed in the
// stabilized logit form (no log of a saturated sigmoid). Targets must be 0/1.
Tensor bce_with_logits(Tape& tape, const Tensor& logits,
                       const std::vector<uint8_t>& targets);

// Sum of the two level losses of a joint trace.
Tensor joint_loss(Tape& tape, const ForwardTrace& trace,
                  const std::vector<uint8_t>& gold_raw,
                  const std::vector<uint8_t>& gold_normalized);

// Loss for any trace: joint traces add the level-1 term.
Tensor document_loss(Tape& tape, const ForwardTrace& trace,
                     const ProcessedDocument& doc);

// Decoupled-weight-decay Adam over a fixed parameter registry. Frozen
// parameters (requires_grad == false) are skipped entirely.
class AdamW {
 public:
  AdamW(std::vector<NamedParam> params, AdamWConfig config);

  // One update from the gradients currently stored on the parameters.
  // Callers zero gradients between steps; grads absent count as zero.
  void step();

  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  int64_t step_count() const { return step_count_; }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  AdamWConfig config_;
  int64_t step_count_ = 0;
};

// Multiplies lr by `factor` after `patience` consecutive epochs without
// strict improvement, then starts counting afresh.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, int patience, double factor);
  double observe(double metric);  // returns the lr for the next epoch
  double lr() const { return lr_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double best_;
  int stale_ = 0;
};

// Signals stop after `patience` consecutive epochs without strict
// improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);
  bool observe(double metric);  // true = stop now

 private:
  int patience_;
  double best_;
  int stale_ = 0;
};

// One pass over the training split: seeded shuffle, gradient accumulation
// over each batch's documents, one optimizer step per batch (the last,
// possibly short, batch included). Returns the mean per-document loss.
double train_epoch(LaatModel& model, const std::vector<ProcessedDocument>& docs,
                   AdamW& optimizer, const TrainConfig& config, int epoch,
                   const Rng& run_rng);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double lr = 0.0;  // lr in effect during this epoch
  double val_micro_f1 = 0.0;
  MetricReport val_report;
};

struct FitResult {
  int best_epoch = 0;  // 0 = never improved / zero epochs
  double best_val_micro_f1 = 0.0;
  std::optional<LaatModel> best_model;
  std::vector<EpochRecord> history;
  MetricReport best_val_report;
};

struct FitHooks {
  // Override of the model-selection metric (protocol tests); default is
  // validation micro-F1.
  std::function<double(int epoch, const MetricReport&)> validation_metric;
  // Called whenever a new best model is found.
  std::function<void(const LaatModel& best, int epoch)> on_improved;
};

// Full training protocol: epoch loop, per-epoch validation, plateau
// scheduler and early stopping driven off the same metric stream, best
// checkpoint by highest validation micro-F1. Appends one JSON line per
// epoch to `log` when given.
FitResult fit(LaatModel& model, const std::vector<ProcessedDocument>& train_docs,
              const std::vector<ProcessedDocument>& val_docs,
              const std::vector<std::string>& label_names,
              const TrainConfig& config, std::ostream* log = nullptr,
              const FitHooks& hooks = {});

}  // namespace laat
