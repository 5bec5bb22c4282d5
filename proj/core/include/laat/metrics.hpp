#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "laat/data.hpp"
#include "laat/model.hpp"

namespace laat {

// Scores and gold assignments, documents by labels.
struct PredictionMatrix {
  int num_docs = 0;
  int num_labels = 0;
  std::vector<double> scores;  // num_docs * num_labels, row-major
  std::vector<uint8_t> gold;
  std::vector<std::string> label_names;

  double score(int d, int l) const {
    return scores[static_cast<size_t>(d) * num_labels + l];
  }
  uint8_t gold_at(int d, int l) const {
    return gold[static_cast<size_t>(d) * num_labels + l];
  }
  std::vector<uint8_t> thresholded(double threshold) const;
};

struct BinMat {
  int rows = 0, cols = 0;
  std::vector<uint8_t> data;
  uint8_t at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

struct RealMat {
  int rows = 0, cols = 0;
  std::vector<double> data;
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

// Pooled (document,label) confusion cells. Zero denominators yield zero.
double micro_f1(const BinMat& preds, const BinMat& gold);

// Unweighted mean of per-label F1 over every label in the vocabulary,
// including zero-support ones.
double macro_f1(const BinMat& preds, const BinMat& gold);

// Rank-statistic AUC with midrank tie handling over all pooled cells.
// Throws MetricError when the pool lacks a positive or a negative.
double micro_auc(const RealMat& scores, const BinMat& gold);

struct MacroAucResult {
  double value = 0.0;
  int excluded_labels = 0;  // labels lacking both classes in gold
};
MacroAucResult macro_auc(const RealMat& scores, const BinMat& gold);

// Mean over documents of the hit fraction among the k highest-scoring
// labels; ties break toward the lower label index. When there are fewer
// labels than k, all labels count and the denominator stays k.
double precision_at_k(const RealMat& scores, const BinMat& gold, int k);

struct PerLabelStats {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  int64_t support = 0;
};

struct MetricReport {
  double macro_auc = 0.0, micro_auc = 0.0;
  double macro_f1 = 0.0, micro_f1 = 0.0;
  std::map<int, double> p_at_k;  // k in {5, 8, 15}
  int macro_auc_excluded = 0;
  double threshold = 0.5;
  std::vector<std::string> label_names;
  std::vector<PerLabelStats> per_label;

  // Full precision for machines, four decimals for eyes.
  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
  std::string table_row() const;
  std::string text_report() const;
};

MetricReport compute_report(const PredictionMatrix& pm, double threshold);

// Eval-mode forward over a whole split.
PredictionMatrix collect_predictions(const LaatModel& model,
                                     const std::vector<ProcessedDocument>& docs,
                                     const std::vector<std::string>& label_names);

MetricReport evaluate(const LaatModel& model,
                      const std::vector<ProcessedDocument>& docs,
                      const std::vector<std::string>& label_names,
                      double threshold);

}  // namespace laat
