#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <doctest.h>

#include "laat/synthetic.hpp"
#include "laat/train.hpp"
#include "test_util.hpp"

using namespace laat;

TEST_SUITE_BEGIN("train");

namespace {

LaatConfig small_config(int vocab, int labels) {
  LaatConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 4;
  c.hidden_size = 4;
  c.attention_dim = 4;
  c.num_labels = labels;
  c.dropout_p = 0.0;
  return c;
}

struct MiniTask {
  LaatConfig config;
  std::vector<ProcessedDocument> docs;
  std::vector<std::string> label_names;
};

// Tiny single-trigger task built from the synthetic generator.
MiniTask mini_task(int num_docs, uint64_t seed) {
  SyntheticSpec spec;
  spec.num_documents = num_docs;
  spec.vocab_size = 30;
  spec.doc_len_min = 12;
  spec.doc_len_max = 18;
  spec.num_single_trigger_codes = 3;
  spec.single_trigger_probability = 0.5;
  SyntheticCorpus sc = generate_synthetic_corpus(spec, seed);
  MiniTask task;
  CodeVocabulary codes = build_code_vocabulary(sc.corpus);
  TokenVocab vocab =
      TokenVocab::from_tokens(collect_corpus_tokens(sc.corpus, 100));
  task.docs = process_corpus(sc.corpus, vocab, codes, 100);
  task.config = small_config(vocab.size(), codes.num_raw());
  task.label_names = codes.raw_codes;
  return task;
}

std::vector<double> snapshot(const LaatModel& m) {
  std::vector<double> all;
  for (const auto& p : m.parameters())
    all.insert(all.end(), p.tensor.data().begin(), p.tensor.data().end());
  return all;
}

}  // namespace

TEST_CASE("bce at zero logits is ln 2 regardless of targets") {
  Tape tape;
  Tensor z = Tensor::zeros({3});
  CHECK(bce_with_logits(tape, z, {0, 1, 0}).scalar_value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_with_logits(tape, z, {1, 1, 1}).scalar_value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("bce stays finite and near zero on saturated correct logits") {
  Tape tape;
  Tensor z = Tensor::from({2}, {100.0, -100.0});
  const double loss = bce_with_logits(tape, z, {1, 0}).scalar_value();
  CHECK(std::isfinite(loss));
  CHECK(loss >= 0.0);
  CHECK(loss < 1e-9);
  Tensor extreme = Tensor::from({1}, {-700.0});
  CHECK(std::isfinite(bce_with_logits(tape, extreme, {1}).scalar_value()));
}

TEST_CASE("bce matches the naive sigmoid-then-log oracle for moderate logits") {
  Rng rng(5);
  Tape tape;
  for (int rep = 0; rep < 50; ++rep) {
    const int n = rng.uniform_int(1, 8);
    std::vector<double> z(n);
    std::vector<uint8_t> y(n);
    for (int i = 0; i < n; ++i) {
      z[i] = rng.uniform(-20, 20);
      y[i] = rng.bernoulli(0.5);
    }
    double naive = 0.0;
    for (int i = 0; i < n; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-z[i]));
      naive += -(y[i] * std::log(s) + (1 - y[i]) * std::log(1 - s));
    }
    naive /= n;
    const double got =
        bce_with_logits(tape, Tensor::from({n}, z), y).scalar_value();
    CHECK(std::abs(got - naive) <= 1e-9);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("bce rejects non-binary targets and wrong lengths") {
  Tape tape;
  Tensor z = Tensor::zeros({2});
  CHECK_THROWS_AS(bce_with_logits(tape, z, {0, 2}), ConfigError);
  CHECK_THROWS_AS(bce_with_logits(tape, z, {0}), ShapeError);
}

TEST_CASE("bce gradient is (sigma(z) - y) / n") {
  Tape tape;
  Tensor z = Tensor::from({2}, {0.3, -1.2}, true);
  Tensor loss = bce_with_logits(tape, z, {1, 0});
  tape.backward(loss);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  CHECK(z.grad()[0] == doctest::Approx((sig(0.3) - 1) / 2).epsilon(1e-14));
  CHECK(z.grad()[1] == doctest::Approx(sig(-1.2) / 2).epsilon(1e-14));
}

TEST_CASE("joint loss is exactly the sum of the level losses") {
  Rng rng(9);
  LaatConfig cfg = small_config(10, 4);
  cfg.joint = JointConfig{2, 3};
  LaatModel m(cfg, rng);
  ProcessedDocument doc;
  doc.token_ids = {1, 3, 5};
  doc.valid_len = 3;
  doc.gold_raw = {1, 0, 1, 0};
  doc.gold_normalized = {1, 0};
  Rng fr(0);
  Tape tape;
  ForwardTrace t = forward_joint(tape, m, doc.token_ids, 3, false, fr);
  const double total = joint_loss(tape, t, doc.gold_raw, doc.gold_normalized)
                           .scalar_value();
  Tape side;
  const double l1 =
      bce_with_logits(side, t.logits_l1, doc.gold_normalized).scalar_value();
  const double l2 = bce_with_logits(side, t.logits, doc.gold_raw).scalar_value();
  CHECK(total == l1 + l2);

  // Both levels at zero logits: ln 2 + ln 2.
  LaatModel zeroed(cfg, rng);
  for (auto& p : zeroed.parameters())
    std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
  Tape zt;
  ForwardTrace z = forward_joint(zt, zeroed, doc.token_ids, 3, false, fr);
  CHECK(joint_loss(zt, z, doc.gold_raw, doc.gold_normalized).scalar_value() ==
        doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));

  ForwardTrace flat;  // no level-1 outputs
  flat.joint = false;
  CHECK_THROWS_AS(joint_loss(zt, flat, doc.gold_raw, doc.gold_normalized),
                  ConfigError);
}

TEST_CASE("adamw: zero gradients with zero weight decay change nothing") {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt({{"p", p}}, cfg);
  opt.step();
  opt.step();
  CHECK(p.data() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adamw first step moves by about lr against the gradient sign") {
  Tensor p = Tensor::from({2}, {1.0, 1.0}, true);
  AdamWConfig cfg;
  cfg.lr = 0.001;
  cfg.weight_decay = 0.0;
  AdamW opt({{"p", p}}, cfg);
  p.grad() = {2.0, -0.3};
  opt.step();
  CHECK(p.at(0) == doctest::Approx(1.0 - 0.001).epsilon(1e-6));
  CHECK(p.at(1) == doctest::Approx(1.0 + 0.001).epsilon(1e-6));
}

TEST_CASE("adamw decoupled decay shrinks parameters independently of moments") {
  Tensor p = Tensor::from({1}, {2.0}, true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt({{"p", p}}, cfg);
  opt.step();  // no gradient: only the decay term acts
  CHECK(p.at(0) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-15));
}

TEST_CASE("adamw on f(x)=x^2 matches an independent simulation and converges") {
  Tensor x = Tensor::from({1}, {1.0}, true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt({{"x", x}}, cfg);

  // Independent scalar simulation of the same update rule.
  double sx = 1.0, m = 0.0, v = 0.0;
  double prev_abs = 1.0;
  bool monotone_warmup = true;
  for (int t = 1; t <= 100; ++t) {
    x.zero_grad();
    x.grad()[0] = 2.0 * x.at(0);
    opt.step();

    const double g = 2.0 * sx;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    sx -= 0.1 * mh / (std::sqrt(vh) + 1e-8);

    CHECK(x.at(0) == doctest::Approx(sx).epsilon(1e-12));
    if (t <= 10) {
      if (std::abs(x.at(0)) > prev_abs) monotone_warmup = false;
      prev_abs = std::abs(x.at(0));
    }
  }
  CHECK(monotone_warmup);
  CHECK(std::abs(x.at(0)) < 0.05);
}

TEST_CASE("scheduler cuts lr by 10 percent after five stagnant epochs") {
  PlateauScheduler s(0.001, 5, 0.9);
  CHECK(s.observe(0.5) == 0.001);  // first epoch improves over -inf
  for (int i = 0; i < 4; ++i) CHECK(s.observe(0.5) == 0.001);
  CHECK(s.observe(0.5) == doctest::Approx(0.0009).epsilon(1e-15));
  // Improvement at the window edge leaves lr alone.
  PlateauScheduler s2(0.001, 5, 0.9);
  s2.observe(0.1);
  for (int i = 0; i < 4; ++i) s2.observe(0.1);
  CHECK(s2.observe(0.2) == 0.001);
  // Ten stagnant epochs compose two reductions.
  PlateauScheduler s3(0.001, 5, 0.9);
  s3.observe(0.5);
  double lr = 0.001;
  for (int i = 0; i < 10; ++i) lr = s3.observe(0.5);
  CHECK(lr == doctest::Approx(0.001 * 0.81).epsilon(1e-12));
}

TEST_CASE("scheduler lr sequence is non-increasing") {
  Rng rng(6);
  PlateauScheduler s(0.001, 3, 0.9);
  double prev = s.lr();
  for (int i = 0; i < 50; ++i) {
    const double lr = s.observe(rng.uniform(0, 1));
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("early stopping fires after six stagnant epochs, resets on gains") {
  EarlyStopper e(6);
  CHECK_FALSE(e.observe(0.5));
  for (int i = 0; i < 5; ++i) CHECK_FALSE(e.observe(0.5));
  CHECK(e.observe(0.5));  // sixth consecutive non-improvement

  EarlyStopper e2(6);
  e2.observe(0.1);
  for (int i = 0; i < 5; ++i) e2.observe(0.1);
  CHECK_FALSE(e2.observe(0.2));  // improvement on the edge

  // Alternating improvement never stops.
  EarlyStopper e3(6);
  double v = 0.1;
  for (int i = 0; i < 40; ++i) {
    const bool stop = e3.observe(i % 2 ? v : v += 0.01);
    CHECK_FALSE(stop);
  }
}

TEST_CASE("early stop never triggers before its patience window") {
  EarlyStopper e(6);
  Rng rng(8);
  for (int i = 0; i < 6; ++i) {
    INFO("epoch ", i + 1);
    const bool stop = e.observe(rng.uniform(0, 1));
    if (i + 1 < 6) CHECK_FALSE(stop);
  }
}

TEST_CASE("train_epoch with lr 0 leaves parameters untouched") {
  MiniTask task = mini_task(6, 1);
  Rng init(2);
  LaatModel m(task.config, init);
  const auto before = snapshot(m);
  TrainConfig tc;
  tc.lr = 1e-30;  // optimizer step is numerically zero
  tc.adamw.weight_decay = 0.0;
  tc.batch_size = 4;
  AdamWConfig ocfg = tc.adamw;
  ocfg.lr = 0.0;
  AdamW opt(m.parameters(), ocfg);
  train_epoch(m, task.docs, opt, tc, 1, Rng(3));
  CHECK(snapshot(m) == before);
}

TEST_CASE("train_epoch on one document equals a hand-stepped update") {
  MiniTask task = mini_task(1, 4);
  Rng init(5);
  LaatModel m(task.config, init);
  LaatModel manual = m.clone();

  TrainConfig tc;
  tc.batch_size = 8;
  tc.seed = 12;
  AdamWConfig ocfg = tc.adamw;
  ocfg.lr = tc.lr;
  AdamW opt(m.parameters(), ocfg);
  train_epoch(m, task.docs, opt, tc, 1, Rng(tc.seed));

  // By hand: one forward/backward, one first-step update per entry.
  manual.zero_grad();
  {
    Tape tape;
    Rng dr = Rng(tc.seed).substream("dropout", 1);
    ForwardTrace t = forward_doc(tape, manual, task.docs[0], true, dr);
    Tensor loss = document_loss(tape, t, task.docs[0]);
    tape.backward(loss);
  }
  for (auto& p : manual.parameters()) {
    if (!p.tensor.requires_grad()) continue;
    auto& val = p.tensor.data();
    const auto& g = p.tensor.grad();
    for (size_t i = 0; i < val.size(); ++i) {
      const double mh = (0.1 * g[i]) / (1.0 - 0.9);
      const double vh = (0.001 * g[i] * g[i]) / (1.0 - 0.999);
      val[i] -= tc.lr * (mh / (std::sqrt(vh) + 1e-8)) +
                tc.lr * tc.adamw.weight_decay * val[i];
    }
  }
  const auto got = snapshot(m), want = snapshot(manual);
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("gradient accumulation equals one summed-loss step") {
  MiniTask task = mini_task(3, 6);
  Rng init(7);
  LaatModel a(task.config, init);
  LaatModel b = a.clone();

  TrainConfig tc;
  tc.batch_size = 3;  // one batch holds all documents
  tc.seed = 5;
  AdamWConfig ocfg = tc.adamw;
  ocfg.lr = tc.lr;

  AdamW opt_a(a.parameters(), ocfg);
  train_epoch(a, task.docs, opt_a, tc, 1, Rng(tc.seed));

  // Single graph with the summed loss, one backward, one step. Documents
  // follow the same shuffled order and dropout stream as train_epoch.
  std::vector<size_t> order(task.docs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = Rng(tc.seed).substream("shuffle", 1);
  std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
  Rng dropout_rng = Rng(tc.seed).substream("dropout", 1);

  AdamW opt_b(b.parameters(), ocfg);
  b.zero_grad();
  {
    Tape tape;
    Tensor total;
    for (size_t idx : order) {
      ForwardTrace t = forward_doc(tape, b, task.docs[idx], true, dropout_rng);
      Tensor loss = document_loss(tape, t, task.docs[idx]);
      total = total.defined() ? add(tape, total, loss) : loss;
    }
    tape.backward(total);
  }
  opt_b.step();

  const auto ga = snapshot(a), gb = snapshot(b);
  REQUIRE(ga.size() == gb.size());
  for (size_t i = 0; i < ga.size(); ++i)
    CHECK(ga[i] == doctest::Approx(gb[i]).epsilon(1e-12));
}

TEST_CASE("overfit smoke: ten documents go below 0.01 loss") {
  MiniTask task = mini_task(10, 8);
  Rng init(9);
  LaatModel m(task.config, init);
  TrainConfig tc;
  tc.lr = 0.005;
  tc.batch_size = 8;
  tc.seed = 10;
  AdamWConfig ocfg = tc.adamw;
  ocfg.lr = tc.lr;
  AdamW opt(m.parameters(), ocfg);
  double loss = 1e9;
  for (int epoch = 1; epoch <= 200; ++epoch)
    loss = train_epoch(m, task.docs, opt, tc, epoch, Rng(tc.seed));
  CHECK(loss < 0.01);
}

TEST_CASE("fit with zero epochs returns the initial model and empty history") {
  MiniTask task = mini_task(4, 11);
  Rng init(12);
  LaatModel m(task.config, init);
  const auto before = snapshot(m);
  TrainConfig tc;
  tc.max_epochs = 0;
  FitResult r = fit(m, task.docs, task.docs, task.label_names, tc);
  CHECK(r.history.empty());
  CHECK(r.best_epoch == 0);
  REQUIRE(r.best_model.has_value());
  CHECK(snapshot(*r.best_model) == before);
}

TEST_CASE("fit picks the epoch with the highest validation metric") {
  MiniTask task = mini_task(6, 13);
  Rng init(14);
  LaatModel m(task.config, init);
  TrainConfig tc;
  tc.max_epochs = 6;
  tc.early_stop_patience = 10;
  FitHooks hooks;
  const std::vector<double> scripted{0.3, 0.6, 0.4, 0.9, 0.2, 0.1};
  hooks.validation_metric = [&](int epoch, const MetricReport&) {
    return scripted[epoch - 1];
  };
  FitResult r = fit(m, task.docs, task.docs, task.label_names, tc, nullptr, hooks);
  CHECK(r.best_epoch == 4);
  CHECK(r.best_val_micro_f1 == 0.9);
  // Monotonically improving run: best is the last epoch.
  Rng init2(15);
  LaatModel m2(task.config, init2);
  FitHooks inc;
  inc.validation_metric = [](int epoch, const MetricReport&) {
    return 0.1 * epoch;
  };
  FitResult r2 = fit(m2, task.docs, task.docs, task.label_names, tc, nullptr, inc);
  CHECK(r2.best_epoch == static_cast<int>(r2.history.size()));
}

TEST_CASE("fit protocol: lr drops after 5 stagnant epochs, stop after 6") {
  MiniTask task = mini_task(6, 16);
  Rng init(17);
  LaatModel m(task.config, init);
  TrainConfig tc;
  tc.max_epochs = 50;
  FitHooks hooks;
  // First epoch improves over the empty history; every later tie stagnates.
  hooks.validation_metric = [](int, const MetricReport&) { return 0.5; };
  FitResult r = fit(m, task.docs, task.docs, task.label_names, tc, nullptr, hooks);
  REQUIRE(r.history.size() == 7);  // 1 improving + 6 stagnant epochs
  CHECK(r.best_epoch == 1);
  for (int e = 0; e < 6; ++e) CHECK(r.history[e].lr == 0.001);
  CHECK(r.history[6].lr == doctest::Approx(0.0009).epsilon(1e-15));
}

TEST_CASE("fit is deterministic: same config and seed, identical everything") {
  MiniTask task = mini_task(8, 18);
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.seed = 77;

  Rng i1(20);
  LaatModel m1(task.config, i1);
  std::ostringstream log1;
  FitResult r1 = fit(m1, task.docs, task.docs, task.label_names, tc, &log1);

  Rng i2(20);
  LaatModel m2(task.config, i2);
  std::ostringstream log2;
  FitResult r2 = fit(m2, task.docs, task.docs, task.label_names, tc, &log2);

  CHECK(log1.str() == log2.str());
  REQUIRE(r1.history.size() == r2.history.size());
  for (size_t e = 0; e < r1.history.size(); ++e)
    CHECK(r1.history[e].train_loss == r2.history[e].train_loss);
  CHECK(snapshot(m1) == snapshot(m2));
  CHECK(snapshot(*r1.best_model) == snapshot(*r2.best_model));
}

TEST_SUITE_END();
