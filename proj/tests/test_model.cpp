#include <cmath>

#include <doctest.h>

#include "laat/gradcheck.hpp"
#include "laat/model.hpp"
#include "test_util.hpp"

using namespace laat;
using testutil::random_tensor;

TEST_SUITE_BEGIN("model");

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Independent scalar re-implementation of one LSTM step, reading the fused
// parameter layout directly.
std::pair<std::vector<double>, std::vector<double>> oracle_lstm_step(
    const RecurrentParams& p, const std::vector<double>& x,
    const std::vector<double>& h, const std::vector<double>& c) {
  const int u = static_cast<int>(h.size());
  const int d = static_cast<int>(x.size());
  auto gate = [&](int row) {
    double s = p.bias.at(static_cast<int64_t>(row));
    for (int j = 0; j < d; ++j) s += p.w_input.at(row, j) * x[j];
    for (int j = 0; j < u; ++j) s += p.w_recur.at(row, j) * h[j];
    return s;
  };
  std::vector<double> h_out(u), c_out(u);
  for (int r = 0; r < u; ++r) {
    const double i = sig(gate(r));
    const double f = sig(gate(u + r));
    const double g = std::tanh(gate(2 * u + r));
    const double o = sig(gate(3 * u + r));
    c_out[r] = f * c[r] + i * g;
    h_out[r] = o * std::tanh(c_out[r]);
  }
  return {h_out, c_out};
}

RecurrentParams random_lstm_params(int u, int d, Rng& rng) {
  RecurrentParams p;
  p.w_input = random_tensor({4 * u, d}, rng, -0.5, 0.5);
  p.w_recur = random_tensor({4 * u, u}, rng, -0.5, 0.5);
  p.bias = random_tensor({4 * u}, rng, -0.5, 0.5);
  return p;
}

LaatConfig tiny_config(int labels = 2) {
  LaatConfig c;
  c.vocab_size = 8;
  c.embed_dim = 3;
  c.hidden_size = 2;
  c.attention_dim = 2;
  c.num_labels = labels;
  c.dropout_p = 0.0;
  return c;
}

void zero_params(LaatModel& m) {
  for (auto& p : m.parameters())
    std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
}

void copy_shared_params(const LaatModel& src, LaatModel& dst) {
  dst.embedding.data() = src.embedding.data();
  dst.forward_cell.w_input.data() = src.forward_cell.w_input.data();
  dst.forward_cell.w_recur.data() = src.forward_cell.w_recur.data();
  dst.forward_cell.bias.data() = src.forward_cell.bias.data();
  dst.backward_cell.w_input.data() = src.backward_cell.w_input.data();
  dst.backward_cell.w_recur.data() = src.backward_cell.w_recur.data();
  dst.backward_cell.bias.data() = src.backward_cell.bias.data();
  dst.attn.w.data() = src.attn.w.data();
  dst.attn.u.data() = src.attn.u.data();
}

}  // namespace

TEST_CASE("lstm_cell_step: zeros everywhere stay at zero") {
  const int u = 3, d = 2;
  RecurrentParams p;
  p.w_input = Tensor::zeros({4 * u, d});
  p.w_recur = Tensor::zeros({4 * u, u});
  p.bias = Tensor::zeros({4 * u});
  auto [h, c] = lstm_cell_step(p, {0, 0}, {0, 0, 0}, {0, 0, 0});
  for (double v : h) CHECK(v == 0.0);
  for (double v : c) CHECK(v == 0.0);
}

TEST_CASE("lstm_cell_step: saturated forget gate carries the cell state") {
  const int u = 2, d = 2;
  RecurrentParams p;
  p.w_input = Tensor::zeros({4 * u, d});
  p.w_recur = Tensor::zeros({4 * u, u});
  p.bias = Tensor::zeros({4 * u});
  for (int r = u; r < 2 * u; ++r) p.bias.at(r) = 10.0;  // forget gate wide open
  const std::vector<double> c0{0.7, -0.4};
  auto [h, c] = lstm_cell_step(p, {1, -1}, {0.1, 0.2}, c0);
  CHECK(std::abs(c[0] - c0[0]) <= 1e-4);
  CHECK(std::abs(c[1] - c0[1]) <= 1e-4);
}

TEST_CASE("lstm_cell_step matches the scalar oracle") {
  Rng rng(17);
  const int u = 3, d = 4;
  RecurrentParams p = random_lstm_params(u, d, rng);
  std::vector<double> x{0.3, -0.2, 0.9, 0.05}, h{0.1, -0.3, 0.2}, c{0.0, 0.5, -0.1};
  auto got = lstm_cell_step(p, x, h, c);
  auto want = oracle_lstm_step(p, x, h, c);
  for (int r = 0; r < u; ++r) {
    CHECK(std::abs(got.first[r] - want.first[r]) <= 1e-12);
    CHECK(std::abs(got.second[r] - want.second[r]) <= 1e-12);
  }
}

TEST_CASE("gru_cell_step: zeros stay at zero and state is retained under a saturated update gate") {
  const int u = 2, d = 2;
  RecurrentParams p;
  p.w_input = Tensor::zeros({3 * u, d});
  p.w_recur = Tensor::zeros({3 * u, u});
  p.bias = Tensor::zeros({3 * u});
  auto h = gru_cell_step(p, {0, 0}, {0, 0});
  for (double v : h) CHECK(v == 0.0);
  for (int r = u; r < 2 * u; ++r) p.bias.at(r) = 20.0;  // update gate ~1: keep h_prev
  auto kept = gru_cell_step(p, {1, 1}, {0.4, -0.6});
  CHECK(std::abs(kept[0] - 0.4) <= 1e-6);
  CHECK(std::abs(kept[1] + 0.6) <= 1e-6);
}

TEST_CASE("encode: single token concatenates one forward and one backward step") {
  Rng rng(5);
  LaatConfig cfg = tiny_config();
  LaatModel m(cfg, rng);
  Tape tape;
  Tensor e = random_tensor({cfg.embed_dim, 1}, rng, -1, 1, false);
  Tensor H = encode(tape, m, e, 1);
  std::vector<double> x(cfg.embed_dim);
  for (int i = 0; i < cfg.embed_dim; ++i) x[i] = e.at(i, 0);
  const std::vector<double> zeros(cfg.hidden_size, 0.0);
  auto fwd = oracle_lstm_step(m.forward_cell, x, zeros, zeros);
  auto bwd = oracle_lstm_step(m.backward_cell, x, zeros, zeros);
  for (int r = 0; r < cfg.hidden_size; ++r) {
    CHECK(std::abs(H.at(r, 0) - fwd.first[r]) <= 1e-12);
    CHECK(std::abs(H.at(cfg.hidden_size + r, 0) - bwd.first[r]) <= 1e-12);
  }
}

TEST_CASE("encode: all-zero parameters give a zero H") {
  Rng rng(6);
  LaatConfig cfg = tiny_config();
  LaatModel m(cfg, rng);
  zero_params(m);
  Tape tape;
  Tensor e = random_tensor({cfg.embed_dim, 4}, rng, -1, 1, false);
  Tensor H = encode(tape, m, e, 4);
  for (double v : H.data()) CHECK(v == 0.0);
}

TEST_CASE("encode: padding columns beyond valid_len are exactly zero") {
  Rng rng(61);
  LaatConfig cfg = tiny_config();
  LaatModel m(cfg, rng);
  Tape tape;
  Tensor e = random_tensor({cfg.embed_dim, 5}, rng, -1, 1, false);
  Tensor H = encode(tape, m, e, 3);
  for (int r = 0; r < 2 * cfg.hidden_size; ++r)
    for (int t = 3; t < 5; ++t) CHECK(H.at(r, t) == 0.0);
}

TEST_CASE("encode: reversal with swapped directions flips and swaps H") {
  Rng rng(7);
  LaatConfig cfg = tiny_config();
  LaatModel m(cfg, rng);
  const int n = 3, u = cfg.hidden_size;
  Tape tape;
  Tensor e = random_tensor({cfg.embed_dim, n}, rng, -1, 1, false);
  Tensor H = encode(tape, m, e, n);

  LaatModel swapped(cfg, rng);
  copy_shared_params(m, swapped);
  std::swap(swapped.forward_cell, swapped.backward_cell);
  Tensor rev = Tensor::zeros({cfg.embed_dim, n});
  for (int i = 0; i < cfg.embed_dim; ++i)
    for (int t = 0; t < n; ++t) rev.at(i, t) = e.at(i, n - 1 - t);
  Tensor H2 = encode(tape, swapped, rev, n);

  for (int t = 0; t < n; ++t)
    for (int r = 0; r < u; ++r) {
      CHECK(std::abs(H2.at(r, t) - H.at(u + r, n - 1 - t)) <= 1e-12);
      CHECK(std::abs(H2.at(u + r, t) - H.at(r, n - 1 - t)) <= 1e-12);
    }
}

TEST_CASE("label_attention: single position puts all weight on it") {
  Rng rng(8);
  Tape tape;
  const int two_u = 4, d_a = 3, L = 2;
  Tensor H = random_tensor({two_u, 1}, rng, -1, 1, false);
  Tensor W = random_tensor({d_a, two_u}, rng, -1, 1, false);
  Tensor U = random_tensor({L, d_a}, rng, -1, 1, false);
  auto [A, V] = label_attention(tape, H, W, U, 1);
  for (int l = 0; l < L; ++l) {
    CHECK(A.at(l, 0) == 1.0);
    for (int r = 0; r < two_u; ++r)
      CHECK(std::abs(V.at(r, l) - H.at(r, 0)) <= 1e-15);
  }
}

TEST_CASE("label_attention: duplicate U rows give duplicate attention and vectors") {
  Rng rng(9);
  Tape tape;
  const int two_u = 4, d_a = 3, n = 5;
  Tensor H = random_tensor({two_u, n}, rng, -1, 1, false);
  Tensor W = random_tensor({d_a, two_u}, rng, -1, 1, false);
  Tensor U = Tensor::zeros({2, d_a});
  for (int j = 0; j < d_a; ++j) {
    const double v = rng.uniform(-1, 1);
    U.at(0, j) = v;
    U.at(1, j) = v;
  }
  auto [A, V] = label_attention(tape, H, W, U, n);
  for (int t = 0; t < n; ++t) CHECK(A.at(0, t) == A.at(1, t));
  for (int r = 0; r < two_u; ++r) CHECK(V.at(r, 0) == V.at(r, 1));
}

TEST_CASE("label_attention matches the per-label weighted-sum oracle") {
  Rng rng(10);
  Tape tape;
  const int two_u = 4, d_a = 3, n = 3, L = 2;
  Tensor H = random_tensor({two_u, n}, rng, -1, 1, false);
  Tensor W = random_tensor({d_a, two_u}, rng, -1, 1, false);
  Tensor U = random_tensor({L, d_a}, rng, -1, 1, false);
  auto [A, V] = label_attention(tape, H, W, U, n);
  for (int l = 0; l < L; ++l)
    for (int r = 0; r < two_u; ++r) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += A.at(l, t) * H.at(r, t);
      CHECK(std::abs(V.at(r, l) - s) <= 1e-12);
    }
}

TEST_CASE("caml_attention: zero logits average the valid columns") {
  Rng rng(11);
  Tape tape;
  const int two_u = 4, n = 4, L = 3;
  Tensor H = random_tensor({two_u, n}, rng, -1, 1, false);
  auto [A1, V1] = caml_attention(tape, H, random_tensor({L, two_u}, rng, -1, 1, false), 1);
  for (int l = 0; l < L; ++l)
    for (int r = 0; r < two_u; ++r)
      CHECK(std::abs(V1.at(r, l) - H.at(r, 0)) <= 1e-15);

  Tensor U0 = Tensor::zeros({L, two_u});
  auto [A, V] = caml_attention(tape, H, U0, 3);
  for (int l = 0; l < L; ++l) {
    for (int t = 0; t < 3; ++t) CHECK(A.at(l, t) == doctest::Approx(1.0 / 3).epsilon(1e-15));
    for (int r = 0; r < two_u; ++r) {
      const double mean = (H.at(r, 0) + H.at(r, 1) + H.at(r, 2)) / 3.0;
      CHECK(std::abs(V.at(r, l) - mean) <= 1e-12);
    }
  }
}

TEST_CASE("caml_attention matches its two-line oracle") {
  Rng rng(12);
  Tape tape;
  const int two_u = 4, n = 5, L = 2;
  Tensor H = random_tensor({two_u, n}, rng, -1, 1, false);
  Tensor U = random_tensor({L, two_u}, rng, -1, 1, false);
  auto [A, V] = caml_attention(tape, H, U, n);
  for (int l = 0; l < L; ++l) {
    std::vector<double> logits(n);
    double m = -1e300;
    for (int t = 0; t < n; ++t) {
      double s = 0.0;
      for (int r = 0; r < two_u; ++r) s += U.at(l, r) * H.at(r, t);
      logits[t] = s;
      m = std::max(m, s);
    }
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    for (int t = 0; t < n; ++t)
      CHECK(std::abs(A.at(l, t) - std::exp(logits[t] - m) / z) <= 1e-12);
    for (int r = 0; r < two_u; ++r) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += A.at(l, t) * H.at(r, t);
      CHECK(std::abs(V.at(r, l) - s) <= 1e-12);
    }
  }
}

TEST_CASE("output_scores: zero parameters score one half everywhere") {
  Rng rng(13);
  Tape tape;
  OutputParams out;
  out.weight = Tensor::zeros({3, 4});
  out.bias = Tensor::zeros({3});
  auto [logits, probs] = output_scores(tape, random_tensor({4, 3}, rng, -1, 1, false), out);
  for (double v : probs.data()) CHECK(v == 0.5);
  for (double v : logits.data()) CHECK(v == 0.0);
}

TEST_CASE("output_scores: strong aligned weight saturates the probability") {
  Tape tape;
  OutputParams out;
  out.weight = Tensor::zeros({1, 2});
  out.weight.at(0, 0) = 10.0;
  out.bias = Tensor::zeros({1});
  Tensor V = Tensor::from({2, 1}, {10.0, 0.0});
  auto [logits, probs] = output_scores(tape, V, out);
  CHECK(logits.at(0) == 100.0);
  CHECK(probs.at(0) > 1.0 - 1e-9);
}

TEST_CASE("output_scores matches the per-label dot-product oracle") {
  Rng rng(14);
  Tape tape;
  const int two_u = 5, L = 4;
  Tensor V = random_tensor({two_u, L}, rng, -1, 1, false);
  OutputParams out;
  out.weight = random_tensor({L, two_u}, rng, -1, 1, false);
  out.bias = random_tensor({L}, rng, -1, 1, false);
  auto [logits, probs] = output_scores(tape, V, out);
  for (int l = 0; l < L; ++l) {
    double s = out.bias.at(static_cast<int64_t>(l));
    for (int r = 0; r < two_u; ++r) s += out.weight.at(l, r) * V.at(r, l);
    CHECK(std::abs(logits.at(static_cast<int64_t>(l)) - s) <= 1e-12);
    CHECK(std::abs(probs.at(static_cast<int64_t>(l)) - sig(s)) <= 1e-12);
  }
}

TEST_CASE("forward_laat equals manual chaining of the four stages") {
  Rng rng(15);
  LaatConfig cfg = tiny_config();
  LaatModel m(cfg, rng);
  const std::vector<int> ids{2, 5, 3};
  Rng fwd_rng(0);
  Tape tape;
  ForwardTrace trace = forward_laat(tape, m, ids, 3, false, fwd_rng);

  Tape manual;
  Tensor e = lookup_columns(manual, m.embedding, ids);
  Tensor H = encode(manual, m, e, 3);
  auto [A, V] = label_attention(manual, H, m.attn.w, m.attn.u, 3);
  auto [logits, probs] = output_scores(manual, V, m.output);
  CHECK(trace.logits.data() == logits.data());
  CHECK(trace.probabilities.data() == probs.data());
  CHECK(trace.attention.data() == A.data());
  CHECK(trace.label_vectors.data() == V.data());
}

TEST_CASE("forward_laat in eval mode is deterministic") {
  Rng rng(16);
  LaatConfig cfg = tiny_config();
  cfg.dropout_p = 0.3;  // must not fire in eval mode
  LaatModel m(cfg, rng);
  const std::vector<int> ids{1, 2, 3, 4};
  Rng r1(111), r2(999);
  Tape t1, t2;
  ForwardTrace a = forward_laat(t1, m, ids, 4, false, r1);
  ForwardTrace b = forward_laat(t2, m, ids, 4, false, r2);
  CHECK(a.probabilities.data() == b.probabilities.data());
  CHECK(a.attention.data() == b.attention.data());
}

TEST_CASE("forward_laat matches an end-to-end scalar oracle on a tiny model") {
  Rng rng(17);
  LaatConfig cfg = tiny_config(2);
  LaatModel m(cfg, rng);
  const std::vector<int> ids{4, 1, 6};
  const int n = 3, u = cfg.hidden_size, two_u = 2 * u;
  Rng fwd_rng(0);
  Tape tape;
  ForwardTrace trace = forward_laat(tape, m, ids, n, false, fwd_rng);

  // Oracle: plain loops all the way down.
  std::vector<std::vector<double>> x(n, std::vector<double>(cfg.embed_dim));
  for (int t = 0; t < n; ++t)
    for (int i = 0; i < cfg.embed_dim; ++i) x[t][i] = m.embedding.at(ids[t], i);
  std::vector<double> zeros(u, 0.0);
  std::vector<std::vector<double>> hf(n), hb(n);
  {
    std::vector<double> h = zeros, c = zeros;
    for (int t = 0; t < n; ++t) {
      auto s = oracle_lstm_step(m.forward_cell, x[t], h, c);
      hf[t] = s.first;
      h = s.first;
      c = s.second;
    }
    h = zeros;
    c = zeros;
    for (int t = n - 1; t >= 0; --t) {
      auto s = oracle_lstm_step(m.backward_cell, x[t], h, c);
      hb[t] = s.first;
      h = s.first;
      c = s.second;
    }
  }
  auto H_at = [&](int r, int t) { return r < u ? hf[t][r] : hb[t][r - u]; };
  for (int l = 0; l < cfg.num_labels; ++l) {
    std::vector<double> logits_t(n);
    double mx = -1e300;
    for (int t = 0; t < n; ++t) {
      double s = 0.0;
      for (int a = 0; a < cfg.attention_dim; ++a) {
        double z = 0.0;
        for (int r = 0; r < two_u; ++r) z += m.attn.w.at(a, r) * H_at(r, t);
        s += m.attn.u.at(l, a) * std::tanh(z);
      }
      logits_t[t] = s;
      mx = std::max(mx, s);
    }
    double zsum = 0.0;
    for (double v : logits_t) zsum += std::exp(v - mx);
    double logit = m.output.bias.at(static_cast<int64_t>(l));
    for (int r = 0; r < two_u; ++r) {
      double vr = 0.0;
      for (int t = 0; t < n; ++t)
        vr += std::exp(logits_t[t] - mx) / zsum * H_at(r, t);
      logit += m.output.weight.at(l, r) * vr;
    }
    CHECK(std::abs(trace.logits.at(static_cast<int64_t>(l)) - logit) <= 1e-10);
    CHECK(std::abs(trace.probabilities.at(static_cast<int64_t>(l)) - sig(logit)) <= 1e-10);
  }
}

TEST_CASE("forward_joint: zero projection block reproduces plain LAAT logits") {
  Rng rng(18);
  LaatConfig joint_cfg = tiny_config(4);
  joint_cfg.joint = JointConfig{2, 3};
  LaatModel jm(joint_cfg, rng);
  std::fill(jm.projection.data().begin(), jm.projection.data().end(), 0.0);

  LaatConfig flat_cfg = tiny_config(4);
  Rng rng2(19);
  LaatModel fm(flat_cfg, rng2);
  copy_shared_params(jm, fm);
  // Plain output weights = the H-block of the joint output weights; the
  // context block stays behind (it multiplies a zero context anyway).
  const int two_u = 2 * flat_cfg.hidden_size;
  for (int l = 0; l < flat_cfg.num_labels; ++l) {
    for (int r = 0; r < two_u; ++r)
      fm.output.weight.at(l, r) = jm.output.weight.at(l, r);
    fm.output.bias.at(static_cast<int64_t>(l)) =
        jm.output.bias.at(static_cast<int64_t>(l));
  }

  const std::vector<int> ids{3, 0, 7, 2};
  Rng fr(0);
  Tape t1, t2;
  ForwardTrace jt = forward_joint(t1, jm, ids, 4, false, fr);
  ForwardTrace ft = forward_laat(t2, fm, ids, 4, false, fr);
  for (int l = 0; l < flat_cfg.num_labels; ++l)
    CHECK(jt.logits.at(static_cast<int64_t>(l)) ==
          ft.logits.at(static_cast<int64_t>(l)));
}

TEST_CASE("forward_joint: a forced level-1 prediction passes the projection column through") {
  Rng rng(20);
  LaatConfig cfg = tiny_config(3);
  cfg.joint = JointConfig{1, 3};
  LaatModel m(cfg, rng);
  // Huge level-1 bias saturates q at 1, so context = P q = column of P.
  m.output_l1.bias.at(static_cast<int64_t>(0)) = 1000.0;
  const std::vector<int> ids{1, 5};
  Rng fr(0);
  Tape tape;
  ForwardTrace t = forward_joint(tape, m, ids, 2, false, fr);
  CHECK(t.probabilities_l1.at(static_cast<int64_t>(0)) == 1.0);
  for (int r = 0; r < 3; ++r)
    CHECK(std::abs(t.context.at(r, 0) - m.projection.at(r, 0)) <= 1e-15);
}

TEST_CASE("forward_joint matches a scalar oracle at both levels") {
  Rng rng(21);
  LaatConfig cfg = tiny_config(3);
  cfg.joint = JointConfig{2, 2};
  LaatModel m(cfg, rng);
  const std::vector<int> ids{4, 2, 7};
  Rng fr(0);
  Tape tape;
  ForwardTrace t = forward_joint(tape, m, ids, 3, false, fr);

  // Level-1 probabilities via the plain-LAAT relation on (attn_l1, output_l1).
  Tape t2;
  Tensor e = lookup_columns(t2, m.embedding, ids);
  Tensor H = encode(t2, m, e, 3);
  auto [A1, V1] = label_attention(t2, H, m.attn_l1.w, m.attn_l1.u, 3);
  auto [lg1, pr1] = output_scores(t2, V1, m.output_l1);
  for (int l = 0; l < 2; ++l)
    CHECK(std::abs(t.logits_l1.at(static_cast<int64_t>(l)) -
                   lg1.at(static_cast<int64_t>(l))) <= 1e-10);
  // s_D = P q, level-2 logit = w.(v ++ s_D) + b.
  std::vector<double> sd(2, 0.0);
  for (int r = 0; r < 2; ++r)
    for (int l = 0; l < 2; ++l)
      sd[r] += m.projection.at(r, l) * pr1.at(static_cast<int64_t>(l));
  auto [A2, V2] = label_attention(t2, H, m.attn.w, m.attn.u, 3);
  const int two_u = 2 * cfg.hidden_size;
  for (int l = 0; l < cfg.num_labels; ++l) {
    double s = m.output.bias.at(static_cast<int64_t>(l));
    for (int r = 0; r < two_u; ++r) s += m.output.weight.at(l, r) * V2.at(r, l);
    for (int r = 0; r < 2; ++r) s += m.output.weight.at(l, two_u + r) * sd[r];
    CHECK(std::abs(t.logits.at(static_cast<int64_t>(l)) - s) <= 1e-10);
  }
}

TEST_CASE("forward_joint requires a joint head") {
  Rng rng(22);
  LaatModel m(tiny_config(), rng);
  Rng fr(0);
  Tape tape;
  CHECK_THROWS_AS(forward_joint(tape, m, {1, 2}, 2, false, fr), ConfigError);
}

TEST_CASE("predict applies the threshold with ties counting as positive") {
  CHECK(predict({0.9, 0.1}, 0.5) == std::vector<uint8_t>{1, 0});
  CHECK(predict({0.5}, 0.5) == std::vector<uint8_t>{1});
  CHECK(predict({0.9, 0.8, 0.3}, 0.99) == std::vector<uint8_t>{0, 0, 0});
  CHECK_THROWS_AS(predict({0.5}, 0.0), ConfigError);
  CHECK_THROWS_AS(predict({0.5}, 1.0), ConfigError);
}

TEST_CASE("attention convexity: V components stay inside the valid H range") {
  Rng rng(23);
  LaatConfig cfg = tiny_config(3);
  LaatModel m(cfg, rng);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = rng.uniform_int(2, 7);
    const int valid = rng.uniform_int(1, n);
    std::vector<int> ids(n);
    for (auto& id : ids) id = rng.uniform_int(0, cfg.vocab_size - 1);
    Rng fr(0);
    Tape tape;
    ForwardTrace t = forward_laat(tape, m, ids, valid, false, fr);
    const int two_u = 2 * cfg.hidden_size;
    for (int r = 0; r < two_u; ++r) {
      double lo = 1e300, hi = -1e300;
      for (int c = 0; c < valid; ++c) {
        lo = std::min(lo, t.encoder_out.at(r, c));
        hi = std::max(hi, t.encoder_out.at(r, c));
      }
      for (int l = 0; l < cfg.num_labels; ++l) {
        CHECK(t.label_vectors.at(r, l) >= lo - 1e-12);
        CHECK(t.label_vectors.at(r, l) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("label permutation equivariance is exact") {
  Rng rng(24);
  LaatConfig cfg = tiny_config(3);
  LaatModel m(cfg, rng);
  LaatModel pm(cfg, rng);
  copy_shared_params(m, pm);
  const std::vector<int> perm{2, 0, 1};  // new label l takes old label perm[l]
  for (int l = 0; l < 3; ++l) {
    for (int j = 0; j < cfg.attention_dim; ++j)
      pm.attn.u.at(l, j) = m.attn.u.at(perm[l], j);
    for (int j = 0; j < 2 * cfg.hidden_size; ++j)
      pm.output.weight.at(l, j) = m.output.weight.at(perm[l], j);
    pm.output.bias.at(static_cast<int64_t>(l)) =
        m.output.bias.at(static_cast<int64_t>(perm[l]));
  }
  const std::vector<int> ids{1, 4, 6, 2};
  Rng fr(0);
  Tape t1, t2;
  ForwardTrace a = forward_laat(t1, m, ids, 4, false, fr);
  ForwardTrace b = forward_laat(t2, pm, ids, 4, false, fr);
  for (int l = 0; l < 3; ++l)
    CHECK(b.probabilities.at(static_cast<int64_t>(l)) ==
          a.probabilities.at(static_cast<int64_t>(perm[l])));
}

TEST_CASE("padding invariance: extra PAD tokens change nothing") {
  Rng rng(25);
  LaatConfig cfg = tiny_config(3);
  LaatModel m(cfg, rng);
  const std::vector<int> ids{3, 1, 7};
  std::vector<int> padded = ids;
  padded.insert(padded.end(), {kPadId, kPadId, kPadId});
  Rng fr(0);
  Tape t1, t2;
  ForwardTrace a = forward_laat(t1, m, ids, 3, false, fr);
  ForwardTrace b = forward_laat(t2, m, padded, 3, false, fr);
  CHECK(a.logits.data() == b.logits.data());
  for (int l = 0; l < cfg.num_labels; ++l) {
    for (int t = 0; t < 3; ++t) CHECK(a.attention.at(l, t) == b.attention.at(l, t));
    for (int t = 3; t < 6; ++t) CHECK(b.attention.at(l, t) == 0.0);
  }
  CHECK(a.label_vectors.data() == b.label_vectors.data());
}

TEST_CASE("end-to-end gradients match finite differences on tiny models") {
  LaatConfig cfg = tiny_config(3);
  GradCheckReport flat = gradcheck_model(cfg, 31, 4);
  CHECK(flat.passed(1e-4));
  cfg.joint = JointConfig{2, 2};
  GradCheckReport joint = gradcheck_model(cfg, 32, 4);
  CHECK(joint.passed(1e-4));
}

TEST_CASE("gradcheck reports an injected fault in the right group") {
  GradCheckOptions opt;
  opt.perturb_group = "attention.u";
  GradCheckReport r = gradcheck_model(tiny_config(3), 33, 4, opt);
  CHECK_FALSE(r.passed(1e-4));
  for (const auto& g : r.groups) {
    if (g.name == "attention.u") CHECK(g.max_rel_error > 1e-4);
  }
}

TEST_CASE("parameter count formula matches constructed models") {
  Rng rng(26);
  LaatConfig a = tiny_config(5);
  a.joint = JointConfig{3, 4};

  LaatConfig b;
  b.vocab_size = 12;
  b.embed_dim = 6;
  b.hidden_size = 4;
  b.attention_dim = 3;
  b.num_labels = 7;
  b.encoder = EncoderKind::BiGru;
  b.attention = AttentionKind::Caml;
  b.dropout_p = 0.1;

  LaatConfig c;
  c.vocab_size = 9;
  c.embed_dim = 5;
  c.hidden_size = 3;
  c.attention_dim = 4;
  c.num_labels = 2;
  c.encoder = EncoderKind::Cnn;
  c.cnn_kernel_width = 5;

  for (const LaatConfig& cfg : {a, b, c}) {
    LaatModel m(cfg, rng);
    CHECK(m.parameter_count() == LaatModel::expected_parameter_count(cfg));
  }
}

TEST_CASE("config validation catches bad sizes") {
  LaatConfig c = tiny_config();
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.joint = JointConfig{10, 2};  // more categories than labels
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.cnn_kernel_width = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_SUITE_END();
