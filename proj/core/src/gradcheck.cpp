#include "laat/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "laat/train.hpp"

namespace laat {

namespace {

double loss_value(const LaatModel& model, const ProcessedDocument& doc) {
  Tape tape;
  tape.set_enabled(false);
  Rng unused(0);
  ForwardTrace trace = forward_doc(tape, model, doc, /*training=*/false, unused);
  Tape loss_tape;
  loss_tape.set_enabled(false);
  return document_loss(loss_tape, trace, doc).scalar_value();
}

}  // namespace

GradCheckReport gradcheck_model(const LaatConfig& config, uint64_t seed,
                                int doc_len, const GradCheckOptions& options) {
  // Dropout would randomize the compared losses; the check runs the same
  // graph with it off.
  LaatConfig cfg = config;
  cfg.dropout_p = 0.0;
  cfg.validate();

  Rng rng(seed);
  Rng init = rng.substream("init");
  LaatModel model(cfg, init);

  ProcessedDocument doc;
  doc.doc_id = "gradcheck";
  Rng doc_rng = rng.substream("doc");
  for (int i = 0; i < doc_len; ++i)
    doc.token_ids.push_back(doc_rng.uniform_int(0, cfg.vocab_size - 1));
  doc.valid_len = doc_len;
  doc.gold_raw.resize(cfg.num_labels);
  for (auto& y : doc.gold_raw) y = doc_rng.bernoulli(0.5);
  if (cfg.joint) {
    doc.gold_normalized.resize(cfg.joint->num_normalized_labels);
    for (auto& y : doc.gold_normalized) y = doc_rng.bernoulli(0.5);
  }

  // Analytic pass.
  model.zero_grad();
  {
    Tape tape;
    Rng unused(0);
    ForwardTrace trace = forward_doc(tape, model, doc, /*training=*/false, unused);
    Tensor loss = document_loss(tape, trace, doc);
    tape.backward(loss);
  }

  GradCheckReport report;
  for (auto& p : model.parameters()) {
    if (!p.tensor.requires_grad()) continue;  // frozen groups have no gradient
    GradCheckGroup group;
    group.name = p.name;
    group.entries = p.tensor.size();
    std::vector<double> analytic =
        p.tensor.has_grad() ? p.tensor.grad()
                            : std::vector<double>(p.tensor.size(), 0.0);
    if (p.name == options.perturb_group)
      for (double& a : analytic) a += options.perturb_delta;

    auto& values = p.tensor.data();
    for (int64_t i = 0; i < p.tensor.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.epsilon;
      const double up = loss_value(model, doc);
      values[i] = saved - options.epsilon;
      const double down = loss_value(model, doc);
      values[i] = saved;
      const double fd = (up - down) / (2.0 * options.epsilon);
      const double a = analytic[i];
      const double rel =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
      group.max_rel_error = std::max(group.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace laat
