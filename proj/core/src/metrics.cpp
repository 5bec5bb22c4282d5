#include "laat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "laat/errors.hpp"

namespace laat {

using nlohmann::json;

std::vector<uint8_t> PredictionMatrix::thresholded(double threshold) const {
  std::vector<uint8_t> out(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold;
  return out;
}

namespace {

void check_same_shape(int r1, int c1, int r2, int c2, const char* what) {
  if (r1 != r2 || c1 != c2)
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     std::to_string(r1) + "x" + std::to_string(c1) + " vs " +
                     std::to_string(r2) + "x" + std::to_string(c2));
}

struct Confusion {
  int64_t tp = 0, fp = 0, fn = 0;
};

double f1_of(const Confusion& c) {
  const double p = (c.tp + c.fp) ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  const double r = (c.tp + c.fn) ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
  return (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
}

// Mann-Whitney statistic with midranks; positions index into `scores`.
double rank_auc(const std::vector<double>& scores,
                const std::vector<uint8_t>& labels) {
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  int64_t npos = 0;
  for (uint8_t l : labels) npos += l;
  const int64_t nneg = static_cast<int64_t>(n) - npos;
  if (npos == 0 || nneg == 0)
    throw MetricError("AUC undefined: pool has a single class");
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t t = i; t < j; ++t)
      if (labels[order[t]]) rank_sum_pos += midrank;
    i = j;
  }
  return (rank_sum_pos - 0.5 * static_cast<double>(npos) * (npos + 1)) /
         (static_cast<double>(npos) * static_cast<double>(nneg));
}

}  // namespace

double micro_f1(const BinMat& preds, const BinMat& gold) {
  check_same_shape(preds.rows, preds.cols, gold.rows, gold.cols, "micro_f1");
  Confusion c;
  for (size_t i = 0; i < preds.data.size(); ++i) {
    if (preds.data[i] && gold.data[i]) ++c.tp;
    else if (preds.data[i] && !gold.data[i]) ++c.fp;
    else if (!preds.data[i] && gold.data[i]) ++c.fn;
  }
  return f1_of(c);
}

double macro_f1(const BinMat& preds, const BinMat& gold) {
  check_same_shape(preds.rows, preds.cols, gold.rows, gold.cols, "macro_f1");
  if (preds.cols == 0) throw ShapeError("macro_f1 on zero labels");
  double sum = 0.0;
  for (int l = 0; l < preds.cols; ++l) {
    Confusion c;
    for (int d = 0; d < preds.rows; ++d) {
      if (preds.at(d, l) && gold.at(d, l)) ++c.tp;
      else if (preds.at(d, l) && !gold.at(d, l)) ++c.fp;
      else if (!preds.at(d, l) && gold.at(d, l)) ++c.fn;
    }
    sum += f1_of(c);
  }
  return sum / preds.cols;
}

double micro_auc(const RealMat& scores, const BinMat& gold) {
  check_same_shape(scores.rows, scores.cols, gold.rows, gold.cols, "micro_auc");
  return rank_auc(scores.data, gold.data);
}

MacroAucResult macro_auc(const RealMat& scores, const BinMat& gold) {
  check_same_shape(scores.rows, scores.cols, gold.rows, gold.cols, "macro_auc");
  MacroAucResult res;
  double sum = 0.0;
  int counted = 0;
  std::vector<double> col_scores(scores.rows);
  std::vector<uint8_t> col_gold(scores.rows);
  for (int l = 0; l < scores.cols; ++l) {
    int64_t pos = 0;
    for (int d = 0; d < scores.rows; ++d) {
      col_scores[d] = scores.at(d, l);
      col_gold[d] = gold.at(d, l);
      pos += col_gold[d];
    }
    if (pos == 0 || pos == scores.rows) {
      ++res.excluded_labels;
      continue;
    }
    sum += rank_auc(col_scores, col_gold);
    ++counted;
  }
  if (counted == 0)
    throw MetricError("macro AUC undefined: no label has both classes");
  res.value = sum / counted;
  return res;
}

double precision_at_k(const RealMat& scores, const BinMat& gold, int k) {
  check_same_shape(scores.rows, scores.cols, gold.rows, gold.cols, "precision_at_k");
  if (k < 1) throw ConfigError("precision_at_k requires k >= 1");
  if (scores.rows == 0) throw ShapeError("precision_at_k on zero documents");
  const int take = std::min(k, scores.cols);
  std::vector<int> idx(scores.cols);
  double total = 0.0;
  for (int d = 0; d < scores.rows; ++d) {
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + take, idx.end(),
                      [&](int a, int b) {
                        const double sa = scores.at(d, a), sb = scores.at(d, b);
                        if (sa != sb) return sa > sb;
                        return a < b;  // deterministic tie-break
                      });
    int hits = 0;
    for (int i = 0; i < take; ++i) hits += gold.at(d, idx[i]);
    total += static_cast<double>(hits) / k;
  }
  return total / scores.rows;
}

MetricReport compute_report(const PredictionMatrix& pm, double threshold) {
  if (pm.num_docs == 0) throw ConfigError("cannot evaluate an empty split");
  RealMat scores{pm.num_docs, pm.num_labels, pm.scores};
  BinMat gold{pm.num_docs, pm.num_labels, pm.gold};
  BinMat preds{pm.num_docs, pm.num_labels, pm.thresholded(threshold)};

  MetricReport r;
  r.threshold = threshold;
  r.label_names = pm.label_names;
  r.micro_f1 = micro_f1(preds, gold);
  r.macro_f1 = macro_f1(preds, gold);
  r.micro_auc = micro_auc(scores, gold);
  const auto ma = macro_auc(scores, gold);
  r.macro_auc = ma.value;
  r.macro_auc_excluded = ma.excluded_labels;
  for (int k : {5, 8, 15}) r.p_at_k[k] = precision_at_k(scores, gold, k);

  r.per_label.resize(pm.num_labels);
  for (int l = 0; l < pm.num_labels; ++l) {
    Confusion c;
    int64_t support = 0;
    for (int d = 0; d < pm.num_docs; ++d) {
      support += gold.at(d, l);
      if (preds.at(d, l) && gold.at(d, l)) ++c.tp;
      else if (preds.at(d, l) && !gold.at(d, l)) ++c.fp;
      else if (!preds.at(d, l) && gold.at(d, l)) ++c.fn;
    }
    auto& s = r.per_label[l];
    s.support = support;
    s.precision = (c.tp + c.fp) ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    s.recall = (c.tp + c.fn) ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
    s.f1 = f1_of(c);
  }
  return r;
}

std::string MetricReport::to_json() const {
  json per = json::array();
  for (size_t l = 0; l < per_label.size(); ++l) {
    per.push_back({{"label", l < label_names.size() ? label_names[l] : std::to_string(l)},
                   {"precision", per_label[l].precision},
                   {"recall", per_label[l].recall},
                   {"f1", per_label[l].f1},
                   {"support", per_label[l].support}});
  }
  json j{{"macro_auc", macro_auc},
         {"micro_auc", micro_auc},
         {"macro_f1", macro_f1},
         {"micro_f1", micro_f1},
         {"p_at_5", p_at_k.count(5) ? p_at_k.at(5) : 0.0},
         {"p_at_8", p_at_k.count(8) ? p_at_k.at(8) : 0.0},
         {"p_at_15", p_at_k.count(15) ? p_at_k.at(15) : 0.0},
         {"macro_auc_excluded_labels", macro_auc_excluded},
         {"threshold", threshold},
         {"per_label", per}};
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("metric report: ") + e.what());
  }
  MetricReport r;
  r.macro_auc = j.at("macro_auc").get<double>();
  r.micro_auc = j.at("micro_auc").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.micro_f1 = j.at("micro_f1").get<double>();
  r.p_at_k[5] = j.at("p_at_5").get<double>();
  r.p_at_k[8] = j.at("p_at_8").get<double>();
  r.p_at_k[15] = j.at("p_at_15").get<double>();
  r.macro_auc_excluded = j.at("macro_auc_excluded_labels").get<int>();
  r.threshold = j.at("threshold").get<double>();
  for (const auto& e : j.at("per_label")) {
    r.label_names.push_back(e.at("label").get<std::string>());
    PerLabelStats s;
    s.precision = e.at("precision").get<double>();
    s.recall = e.at("recall").get<double>();
    s.f1 = e.at("f1").get<double>();
    s.support = e.at("support").get<int64_t>();
    r.per_label.push_back(s);
  }
  return r;
}

static std::string fmt4(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << v;
  return os.str();
}

std::string MetricReport::table_row() const {
  std::ostringstream os;
  os << "macro-AUC " << fmt4(macro_auc) << "  micro-AUC " << fmt4(micro_auc)
     << "  macro-F1 " << fmt4(macro_f1) << "  micro-F1 " << fmt4(micro_f1)
     << "  P@5 " << fmt4(p_at_k.count(5) ? p_at_k.at(5) : 0.0)
     << "  P@8 " << fmt4(p_at_k.count(8) ? p_at_k.at(8) : 0.0)
     << "  P@15 " << fmt4(p_at_k.count(15) ? p_at_k.at(15) : 0.0);
  return os.str();
}

std::string MetricReport::text_report() const {
  std::ostringstream os;
  os << table_row() << '\n';
  os << "threshold " << fmt4(threshold) << ", labels " << per_label.size()
     << ", excluded from macro-AUC " << macro_auc_excluded << '\n';
  for (size_t l = 0; l < per_label.size(); ++l) {
    os << "  " << (l < label_names.size() ? label_names[l] : std::to_string(l))
       << "  P " << fmt4(per_label[l].precision) << "  R "
       << fmt4(per_label[l].recall) << "  F1 " << fmt4(per_label[l].f1)
       << "  support " << per_label[l].support << '\n';
  }
  return os.str();
}

PredictionMatrix collect_predictions(const LaatModel& model,
                                     const std::vector<ProcessedDocument>& docs,
                                     const std::vector<std::string>& label_names) {
  PredictionMatrix pm;
  pm.num_docs = static_cast<int>(docs.size());
  pm.num_labels = model.config().num_labels;
  pm.label_names = label_names;
  pm.scores.resize(static_cast<size_t>(pm.num_docs) * pm.num_labels);
  pm.gold.resize(pm.scores.size());
  Rng unused(0);  // eval mode draws nothing
  for (int d = 0; d < pm.num_docs; ++d) {
    Tape tape;
    tape.set_enabled(false);
    ForwardTrace t = forward_doc(tape, model, docs[d], /*training=*/false, unused);
    const auto& probs = t.probabilities.data();
    if (static_cast<int>(probs.size()) != pm.num_labels)
      throw ShapeError("model label count does not match evaluation matrix");
    if (docs[d].gold_raw.size() != probs.size())
      throw ShapeError("document gold vector does not match label count");
    for (int l = 0; l < pm.num_labels; ++l) {
      pm.scores[static_cast<size_t>(d) * pm.num_labels + l] = probs[l];
      pm.gold[static_cast<size_t>(d) * pm.num_labels + l] = docs[d].gold_raw[l];
    }
  }
  return pm;
}

MetricReport evaluate(const LaatModel& model,
                      const std::vector<ProcessedDocument>& docs,
                      const std::vector<std::string>& label_names,
                      double threshold) {
  if (docs.empty()) throw ConfigError("cannot evaluate an empty split");
  return compute_report(collect_predictions(model, docs, label_names), threshold);
}

}  // namespace laat
