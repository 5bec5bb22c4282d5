#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "laat/metrics.hpp"
#include "laat/model.hpp"
#include "laat/train.hpp"

namespace laat {

// Fully merged run configuration: config file + flag overrides. Serialized
// into the output directory so a run can be reproduced from it.
struct RunConfig {
  LaatConfig model;          // vocab_size / num_labels are derived from data
  TrainConfig training;
  bool joint_model = false;  // JointLAAT
  std::string train_path;
  std::string validation_path;
  std::string test_path;        // optional
  std::string embeddings_path;  // optional; random init fallback otherwise
  int max_len = kDefaultMaxLen;
  std::string output_dir = "out";
  std::vector<uint64_t> seeds;  // empty -> {training.seed}

  void validate() const;
  std::string to_json() const;
  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
};

// LAAT_OUT_DIR overrides any configured output directory.
std::string resolve_output_dir(const std::string& configured);

struct TrainOutcome {
  std::vector<std::string> checkpoint_paths;  // one per seed
  std::vector<double> best_val_micro_f1;      // one per seed
  std::string summary_path;                   // multi-seed aggregate ("" if single)
};

// gen-corpus: synthesize train/validation/test corpus files plus planted
// metadata under out_dir.
void run_gen_corpus(const std::string& spec_path, const std::string& out_dir,
                    uint64_t seed, std::ostream& log);

// train: the full protocol; one run per seed, plus a mean/std summary when
// several seeds are given.
TrainOutcome run_train(const RunConfig& config, std::ostream& log);

// evaluate: load a checkpoint, process the corpus with its vocabulary,
// write and return the metric report.
MetricReport run_evaluate(const std::string& checkpoint_path,
                          const std::string& corpus_path, double threshold,
                          const std::string& out_dir, std::ostream& log);

// predict: rank codes for one text; optionally include per-code attention
// weights over the input tokens (JSON output).
void run_predict(const std::string& checkpoint_path, const std::string& text,
                 int top_k, bool dump_attention, std::ostream& out);

// gradcheck: finite-difference verification of both LAAT and JointLAAT on a
// tiny model; prints one line per parameter group. Returns true when every
// group stays within tolerance.
bool run_gradcheck(uint64_t seed, double tolerance, std::ostream& out);

}  // namespace laat
