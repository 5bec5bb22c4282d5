#include <cmath>
#include <memory>

#include "laat/model.hpp"

// Sequence encoders. The recurrent variants run one fused tape op per
// direction pair: the forward pass caches gate activations and the backward
// step replays them in reverse (backpropagation through time). This keeps
// the tape at O(1) records per document instead of O(n) per cell step.

namespace laat {

namespace {

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// a = W_x x + W_h h + b over all stacked gate rows.
void affine_gates(const RecurrentParams& p, const double* x, int d_in,
                  const double* h, int u, int gate_rows, double* a) {
  const double* wx = p.w_input.data().data();
  const double* wh = p.w_recur.data().data();
  const double* b = p.bias.data().data();
  for (int r = 0; r < gate_rows; ++r) {
    double s = b[r];
    const double* wxr = wx + static_cast<size_t>(r) * d_in;
    for (int j = 0; j < d_in; ++j) s += wxr[j] * x[j];
    const double* whr = wh + static_cast<size_t>(r) * u;
    for (int j = 0; j < u; ++j) s += whr[j] * h[j];
    a[r] = s;
  }
}

void check_recurrent_shapes(const RecurrentParams& p, int d_in, int u,
                            int gates, const char* what) {
  if (p.w_input.rows() != gates * u || p.w_input.cols() != d_in ||
      p.w_recur.rows() != gates * u || p.w_recur.cols() != u ||
      p.bias.dim(0) != gates * u)
    throw ShapeError(std::string(what) + ": parameter shapes do not match d_in=" +
                     std::to_string(d_in) + " u=" + std::to_string(u));
}

// Contiguous copy of the valid columns of a d x n matrix, one row per
// position.
std::vector<double> columns_to_rows(const Tensor& m, int valid_len) {
  const int d = m.rows(), n = m.cols();
  std::vector<double> out(static_cast<size_t>(valid_len) * d);
  const double* src = m.data().data();
  for (int t = 0; t < valid_len; ++t)
    for (int i = 0; i < d; ++i)
      out[static_cast<size_t>(t) * d + i] = src[static_cast<size_t>(i) * n + t];
  return out;
}

struct LstmCache {
  int u = 0, steps = 0;
  // Each buffer holds steps * u values, step-major.
  std::vector<double> ig, fg, gg, og, c, tc, h;
  void init(int u_, int steps_) {
    u = u_;
    steps = steps_;
    const size_t m = static_cast<size_t>(steps) * u;
    ig.resize(m); fg.resize(m); gg.resize(m); og.resize(m);
    c.resize(m); tc.resize(m); h.resize(m);
  }
};

// One LSTM direction over x (steps x d_in, step-major); h states land in the
// cache.
void lstm_run(const RecurrentParams& p, const std::vector<double>& x, int d_in,
              int u, LstmCache& cache) {
  const int steps = cache.steps;
  std::vector<double> a(4 * u);
  std::vector<double> zero(u, 0.0);
  for (int t = 0; t < steps; ++t) {
    const double* xt = x.data() + static_cast<size_t>(t) * d_in;
    const double* h_prev = t ? cache.h.data() + static_cast<size_t>(t - 1) * u : zero.data();
    const double* c_prev = t ? cache.c.data() + static_cast<size_t>(t - 1) * u : zero.data();
    affine_gates(p, xt, d_in, h_prev, u, 4 * u, a.data());
    const size_t off = static_cast<size_t>(t) * u;
    for (int r = 0; r < u; ++r) {
      const double i = sigmoid(a[r]);
      const double f = sigmoid(a[u + r]);
      const double g = std::tanh(a[2 * u + r]);
      const double o = sigmoid(a[3 * u + r]);
      const double cc = f * c_prev[r] + i * g;
      cache.ig[off + r] = i;
      cache.fg[off + r] = f;
      cache.gg[off + r] = g;
      cache.og[off + r] = o;
      cache.c[off + r] = cc;
      cache.tc[off + r] = std::tanh(cc);
      cache.h[off + r] = o * cache.tc[off + r];
    }
  }
}

// Reverse sweep for one direction. dh_out[t*u + r] is dL/dh_t coming from
// the encoder output; gradients accumulate into the parameter buffers and,
// when dx is non-null, into the step-major input gradient.
void lstm_bptt(const RecurrentParams& p, const std::vector<double>& x,
               int d_in, int u, const LstmCache& cache,
               const std::vector<double>& dh_out, std::vector<double>* dwx,
               std::vector<double>* dwh, std::vector<double>* db,
               std::vector<double>* dx) {
  const int steps = cache.steps;
  const double* wx = p.w_input.data().data();
  const double* wh = p.w_recur.data().data();
  std::vector<double> carry_dh(u, 0.0), carry_dc(u, 0.0);
  std::vector<double> da(4 * u), dh(u), dc(u);
  std::vector<double> zero(u, 0.0);
  for (int t = steps - 1; t >= 0; --t) {
    const size_t off = static_cast<size_t>(t) * u;
    const double* c_prev = t ? cache.c.data() + off - u : zero.data();
    const double* h_prev = t ? cache.h.data() + off - u : zero.data();
    for (int r = 0; r < u; ++r) {
      dh[r] = dh_out[off + r] + carry_dh[r];
      const double tau = cache.tc[off + r];
      const double o = cache.og[off + r];
      const double dout = dh[r] * tau;
      dc[r] = carry_dc[r] + dh[r] * o * (1.0 - tau * tau);
      const double i = cache.ig[off + r];
      const double f = cache.fg[off + r];
      const double g = cache.gg[off + r];
      const double di = dc[r] * g;
      const double df = dc[r] * c_prev[r];
      const double dg = dc[r] * i;
      da[r] = di * i * (1.0 - i);
      da[u + r] = df * f * (1.0 - f);
      da[2 * u + r] = dg * (1.0 - g * g);
      da[3 * u + r] = dout * o * (1.0 - o);
    }
    const double* xt = x.data() + static_cast<size_t>(t) * d_in;
    for (int r = 0; r < 4 * u; ++r) {
      const double d = da[r];
      if (d == 0.0) continue;
      if (dwx) {
        double* row = dwx->data() + static_cast<size_t>(r) * d_in;
        for (int j = 0; j < d_in; ++j) row[j] += d * xt[j];
      }
      if (dwh) {
        double* row = dwh->data() + static_cast<size_t>(r) * u;
        for (int j = 0; j < u; ++j) row[j] += d * h_prev[j];
      }
      if (db) (*db)[r] += d;
    }
    std::fill(carry_dh.begin(), carry_dh.end(), 0.0);
    for (int r = 0; r < 4 * u; ++r) {
      const double d = da[r];
      if (d == 0.0) continue;
      const double* whr = wh + static_cast<size_t>(r) * u;
      for (int j = 0; j < u; ++j) carry_dh[j] += whr[j] * d;
    }
    if (dx) {
      double* dxt = dx->data() + static_cast<size_t>(t) * d_in;
      for (int r = 0; r < 4 * u; ++r) {
        const double d = da[r];
        if (d == 0.0) continue;
        const double* wxr = wx + static_cast<size_t>(r) * d_in;
        for (int j = 0; j < d_in; ++j) dxt[j] += wxr[j] * d;
      }
    }
    for (int r = 0; r < u; ++r) carry_dc[r] = dc[r] * cache.fg[off + r];
  }
}

struct GruCache {
  int u = 0, steps = 0;
  std::vector<double> rg, zg, ng, rh, h;  // rh = r * h_prev
  void init(int u_, int steps_) {
    u = u_;
    steps = steps_;
    const size_t m = static_cast<size_t>(steps) * u;
    rg.resize(m); zg.resize(m); ng.resize(m); rh.resize(m); h.resize(m);
  }
};

void gru_run(const RecurrentParams& p, const std::vector<double>& x, int d_in,
             int u, GruCache& cache) {
  const int steps = cache.steps;
  const double* wx = p.w_input.data().data();
  const double* wh = p.w_recur.data().data();
  const double* b = p.bias.data().data();
  std::vector<double> a(3 * u);
  std::vector<double> zero(u, 0.0);
  for (int t = 0; t < steps; ++t) {
    const double* xt = x.data() + static_cast<size_t>(t) * d_in;
    const double* h_prev = t ? cache.h.data() + static_cast<size_t>(t - 1) * u : zero.data();
    const size_t off = static_cast<size_t>(t) * u;
    // Reset and update gates see h_prev directly.
    for (int r = 0; r < 2 * u; ++r) {
      double s = b[r];
      const double* wxr = wx + static_cast<size_t>(r) * d_in;
      for (int j = 0; j < d_in; ++j) s += wxr[j] * xt[j];
      const double* whr = wh + static_cast<size_t>(r) * u;
      for (int j = 0; j < u; ++j) s += whr[j] * h_prev[j];
      a[r] = s;
    }
    for (int r = 0; r < u; ++r) {
      cache.rg[off + r] = sigmoid(a[r]);
      cache.zg[off + r] = sigmoid(a[u + r]);
      cache.rh[off + r] = cache.rg[off + r] * h_prev[r];
    }
    // Candidate sees the reset-gated state.
    for (int r = 0; r < u; ++r) {
      const int row = 2 * u + r;
      double s = b[row];
      const double* wxr = wx + static_cast<size_t>(row) * d_in;
      for (int j = 0; j < d_in; ++j) s += wxr[j] * xt[j];
      const double* whr = wh + static_cast<size_t>(row) * u;
      for (int j = 0; j < u; ++j) s += whr[j] * cache.rh[off + j];
      cache.ng[off + r] = std::tanh(s);
    }
    for (int r = 0; r < u; ++r) {
      const double z = cache.zg[off + r];
      cache.h[off + r] = (1.0 - z) * cache.ng[off + r] + z * h_prev[r];
    }
  }
}

void gru_bptt(const RecurrentParams& p, const std::vector<double>& x, int d_in,
              int u, const GruCache& cache, const std::vector<double>& dh_out,
              std::vector<double>* dwx, std::vector<double>* dwh,
              std::vector<double>* db, std::vector<double>* dx) {
  const int steps = cache.steps;
  const double* wx = p.w_input.data().data();
  const double* wh = p.w_recur.data().data();
  std::vector<double> carry_dh(u, 0.0);
  std::vector<double> da(3 * u), dh(u), drh(u);
  std::vector<double> zero(u, 0.0);
  for (int t = steps - 1; t >= 0; --t) {
    const size_t off = static_cast<size_t>(t) * u;
    const double* h_prev = t ? cache.h.data() + off - u : zero.data();
    std::vector<double> dh_prev(u, 0.0);
    for (int r = 0; r < u; ++r) {
      dh[r] = dh_out[off + r] + carry_dh[r];
      const double z = cache.zg[off + r];
      const double n = cache.ng[off + r];
      const double dn = dh[r] * (1.0 - z);
      const double dz = dh[r] * (h_prev[r] - n);
      dh_prev[r] += dh[r] * z;
      da[2 * u + r] = dn * (1.0 - n * n);
      da[u + r] = dz * z * (1.0 - z);
    }
    // Candidate's recurrent path runs through r*h_prev.
    std::fill(drh.begin(), drh.end(), 0.0);
    for (int r = 0; r < u; ++r) {
      const double d = da[2 * u + r];
      if (d == 0.0) continue;
      const double* whr = wh + static_cast<size_t>(2 * u + r) * u;
      for (int j = 0; j < u; ++j) drh[j] += whr[j] * d;
    }
    for (int r = 0; r < u; ++r) {
      const double rr = cache.rg[off + r];
      const double dr = drh[r] * h_prev[r];
      dh_prev[r] += drh[r] * rr;
      da[r] = dr * rr * (1.0 - rr);
    }
    const double* xt = x.data() + static_cast<size_t>(t) * d_in;
    for (int r = 0; r < 3 * u; ++r) {
      const double d = da[r];
      if (d == 0.0) continue;
      if (dwx) {
        double* row = dwx->data() + static_cast<size_t>(r) * d_in;
        for (int j = 0; j < d_in; ++j) row[j] += d * xt[j];
      }
      if (db) (*db)[r] += d;
      if (dx) {
        const double* wxr = wx + static_cast<size_t>(r) * d_in;
        double* dxt = dx->data() + static_cast<size_t>(t) * d_in;
        for (int j = 0; j < d_in; ++j) dxt[j] += wxr[j] * d;
      }
    }
    if (dwh) {
      for (int r = 0; r < 2 * u; ++r) {
        const double d = da[r];
        if (d == 0.0) continue;
        double* row = dwh->data() + static_cast<size_t>(r) * u;
        for (int j = 0; j < u; ++j) row[j] += d * h_prev[j];
      }
      for (int r = 0; r < u; ++r) {
        const double d = da[2 * u + r];
        if (d == 0.0) continue;
        double* row = dwh->data() + static_cast<size_t>(2 * u + r) * u;
        for (int j = 0; j < u; ++j) row[j] += d * cache.rh[off + j];
      }
    }
    // Reset/update recurrent paths into h_prev.
    for (int r = 0; r < 2 * u; ++r) {
      const double d = da[r];
      if (d == 0.0) continue;
      const double* whr = wh + static_cast<size_t>(r) * u;
      for (int j = 0; j < u; ++j) dh_prev[j] += whr[j] * d;
    }
    carry_dh = dh_prev;
  }
}

void validate_encode_input(const Tensor& embeds, int valid_len) {
  if (embeds.rank() != 2)
    throw ShapeError("encoder expects rank-2 embeddings, got " +
                     shape_str(embeds.shape()));
  if (valid_len == 0) throw EmptySequenceError("encode: valid_len is zero");
  if (valid_len < 0 || valid_len > embeds.cols())
    throw ShapeError("encode: valid_len " + std::to_string(valid_len) +
                     " outside 1.." + std::to_string(embeds.cols()));
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> lstm_cell_step(
    const RecurrentParams& params, const std::vector<double>& x,
    const std::vector<double>& h_prev, const std::vector<double>& c_prev) {
  const int d_in = static_cast<int>(x.size());
  const int u = static_cast<int>(h_prev.size());
  check_recurrent_shapes(params, d_in, u, 4, "lstm_cell_step");
  if (c_prev.size() != h_prev.size())
    throw ShapeError("lstm_cell_step: h_prev and c_prev sizes differ");
  std::vector<double> a(4 * u);
  affine_gates(params, x.data(), d_in, h_prev.data(), u, 4 * u, a.data());
  std::vector<double> h(u), c(u);
  for (int r = 0; r < u; ++r) {
    const double i = sigmoid(a[r]);
    const double f = sigmoid(a[u + r]);
    const double g = std::tanh(a[2 * u + r]);
    const double o = sigmoid(a[3 * u + r]);
    c[r] = f * c_prev[r] + i * g;
    h[r] = o * std::tanh(c[r]);
  }
  return {std::move(h), std::move(c)};
}

std::vector<double> gru_cell_step(const RecurrentParams& params,
                                  const std::vector<double>& x,
                                  const std::vector<double>& h_prev) {
  const int d_in = static_cast<int>(x.size());
  const int u = static_cast<int>(h_prev.size());
  check_recurrent_shapes(params, d_in, u, 3, "gru_cell_step");
  const double* wx = params.w_input.data().data();
  const double* wh = params.w_recur.data().data();
  const double* b = params.bias.data().data();
  std::vector<double> a(3 * u), rh(u), h(u);
  for (int r = 0; r < 2 * u; ++r) {
    double s = b[r];
    const double* wxr = wx + static_cast<size_t>(r) * d_in;
    for (int j = 0; j < d_in; ++j) s += wxr[j] * x[j];
    const double* whr = wh + static_cast<size_t>(r) * u;
    for (int j = 0; j < u; ++j) s += whr[j] * h_prev[j];
    a[r] = s;
  }
  for (int r = 0; r < u; ++r) rh[r] = sigmoid(a[r]) * h_prev[r];
  for (int r = 0; r < u; ++r) {
    const int row = 2 * u + r;
    double s = b[row];
    const double* wxr = wx + static_cast<size_t>(row) * d_in;
    for (int j = 0; j < d_in; ++j) s += wxr[j] * x[j];
    const double* whr = wh + static_cast<size_t>(row) * u;
    for (int j = 0; j < u; ++j) s += whr[j] * rh[j];
    const double z = sigmoid(a[u + r]);
    h[r] = (1.0 - z) * std::tanh(s) + z * h_prev[r];
  }
  return h;
}

Tensor bilstm_encode(Tape& tape, const Tensor& embeds,
                     const RecurrentParams& fw, const RecurrentParams& bw,
                     int hidden_size, int valid_len) {
  validate_encode_input(embeds, valid_len);
  const int d_in = embeds.rows(), n = embeds.cols(), u = hidden_size;
  check_recurrent_shapes(fw, d_in, u, 4, "bilstm_encode(fw)");
  check_recurrent_shapes(bw, d_in, u, 4, "bilstm_encode(bw)");

  auto x_fwd = std::make_shared<std::vector<double>>(columns_to_rows(embeds, valid_len));
  auto x_bwd = std::make_shared<std::vector<double>>(*x_fwd);
  // Backward direction consumes positions right-to-left.
  for (int t = 0; t < valid_len; ++t)
    std::copy(x_fwd->begin() + static_cast<size_t>(valid_len - 1 - t) * d_in,
              x_fwd->begin() + static_cast<size_t>(valid_len - t) * d_in,
              x_bwd->begin() + static_cast<size_t>(t) * d_in);

  auto fc = std::make_shared<LstmCache>();
  auto bc = std::make_shared<LstmCache>();
  fc->init(u, valid_len);
  bc->init(u, valid_len);
  lstm_run(fw, *x_fwd, d_in, u, *fc);
  lstm_run(bw, *x_bwd, d_in, u, *bc);

  Tensor H = Tensor::zeros({2 * u, n});
  for (int t = 0; t < valid_len; ++t)
    for (int r = 0; r < u; ++r) {
      H.at(r, t) = fc->h[static_cast<size_t>(t) * u + r];
      H.at(u + r, t) = bc->h[static_cast<size_t>(valid_len - 1 - t) * u + r];
    }

  const bool needs = tape.recording() &&
                     (fw.w_input.requires_grad() || fw.w_recur.requires_grad() ||
                      fw.bias.requires_grad() || bw.w_input.requires_grad() ||
                      bw.w_recur.requires_grad() || bw.bias.requires_grad() ||
                      embeds.requires_grad());
  if (needs) {
    H.set_requires_grad(true);
    Tensor tH = H, tE = embeds;
    RecurrentParams pf = fw, pb = bw;
    tape.record([tH, tE, pf, pb, x_fwd, x_bwd, fc, bc, d_in, n, u, valid_len]() mutable {
      if (!tH.has_grad()) return;
      const auto& gH = tH.grad();
      std::vector<double> dh_f(static_cast<size_t>(valid_len) * u);
      std::vector<double> dh_b(static_cast<size_t>(valid_len) * u);
      for (int t = 0; t < valid_len; ++t)
        for (int r = 0; r < u; ++r) {
          dh_f[static_cast<size_t>(t) * u + r] = gH[static_cast<size_t>(r) * n + t];
          dh_b[static_cast<size_t>(valid_len - 1 - t) * u + r] =
              gH[static_cast<size_t>(u + r) * n + t];
        }
      const bool want_dx = tE.requires_grad();
      std::vector<double> dx_f, dx_b;
      if (want_dx) {
        dx_f.assign(static_cast<size_t>(valid_len) * d_in, 0.0);
        dx_b.assign(static_cast<size_t>(valid_len) * d_in, 0.0);
      }
      auto run_dir = [&](RecurrentParams& p, const std::vector<double>& x,
                         const LstmCache& cache, const std::vector<double>& dh,
                         std::vector<double>* dx) {
        std::vector<double>* dwx = p.w_input.requires_grad() ? &p.w_input.grad() : nullptr;
        std::vector<double>* dwh = p.w_recur.requires_grad() ? &p.w_recur.grad() : nullptr;
        std::vector<double>* db = p.bias.requires_grad() ? &p.bias.grad() : nullptr;
        lstm_bptt(p, x, d_in, u, cache, dh, dwx, dwh, db, dx);
      };
      run_dir(pf, *x_fwd, *fc, dh_f, want_dx ? &dx_f : nullptr);
      run_dir(pb, *x_bwd, *bc, dh_b, want_dx ? &dx_b : nullptr);
      if (want_dx) {
        auto& gE = tE.grad();
        for (int t = 0; t < valid_len; ++t)
          for (int i = 0; i < d_in; ++i) {
            gE[static_cast<size_t>(i) * n + t] +=
                dx_f[static_cast<size_t>(t) * d_in + i] +
                dx_b[static_cast<size_t>(valid_len - 1 - t) * d_in + i];
          }
      }
    });
  }
  return H;
}

Tensor bigru_encode(Tape& tape, const Tensor& embeds,
                    const RecurrentParams& fw, const RecurrentParams& bw,
                    int hidden_size, int valid_len) {
  validate_encode_input(embeds, valid_len);
  const int d_in = embeds.rows(), n = embeds.cols(), u = hidden_size;
  check_recurrent_shapes(fw, d_in, u, 3, "bigru_encode(fw)");
  check_recurrent_shapes(bw, d_in, u, 3, "bigru_encode(bw)");

  auto x_fwd = std::make_shared<std::vector<double>>(columns_to_rows(embeds, valid_len));
  auto x_bwd = std::make_shared<std::vector<double>>(*x_fwd);
  for (int t = 0; t < valid_len; ++t)
    std::copy(x_fwd->begin() + static_cast<size_t>(valid_len - 1 - t) * d_in,
              x_fwd->begin() + static_cast<size_t>(valid_len - t) * d_in,
              x_bwd->begin() + static_cast<size_t>(t) * d_in);

  auto fc = std::make_shared<GruCache>();
  auto bc = std::make_shared<GruCache>();
  fc->init(u, valid_len);
  bc->init(u, valid_len);
  gru_run(fw, *x_fwd, d_in, u, *fc);
  gru_run(bw, *x_bwd, d_in, u, *bc);

  Tensor H = Tensor::zeros({2 * u, n});
  for (int t = 0; t < valid_len; ++t)
    for (int r = 0; r < u; ++r) {
      H.at(r, t) = fc->h[static_cast<size_t>(t) * u + r];
      H.at(u + r, t) = bc->h[static_cast<size_t>(valid_len - 1 - t) * u + r];
    }

  const bool needs = tape.recording() &&
                     (fw.w_input.requires_grad() || fw.w_recur.requires_grad() ||
                      fw.bias.requires_grad() || bw.w_input.requires_grad() ||
                      bw.w_recur.requires_grad() || bw.bias.requires_grad() ||
                      embeds.requires_grad());
  if (needs) {
    H.set_requires_grad(true);
    Tensor tH = H, tE = embeds;
    RecurrentParams pf = fw, pb = bw;
    tape.record([tH, tE, pf, pb, x_fwd, x_bwd, fc, bc, d_in, n, u, valid_len]() mutable {
      if (!tH.has_grad()) return;
      const auto& gH = tH.grad();
      std::vector<double> dh_f(static_cast<size_t>(valid_len) * u);
      std::vector<double> dh_b(static_cast<size_t>(valid_len) * u);
      for (int t = 0; t < valid_len; ++t)
        for (int r = 0; r < u; ++r) {
          dh_f[static_cast<size_t>(t) * u + r] = gH[static_cast<size_t>(r) * n + t];
          dh_b[static_cast<size_t>(valid_len - 1 - t) * u + r] =
              gH[static_cast<size_t>(u + r) * n + t];
        }
      const bool want_dx = tE.requires_grad();
      std::vector<double> dx_f, dx_b;
      if (want_dx) {
        dx_f.assign(static_cast<size_t>(valid_len) * d_in, 0.0);
        dx_b.assign(static_cast<size_t>(valid_len) * d_in, 0.0);
      }
      auto run_dir = [&](RecurrentParams& p, const std::vector<double>& x,
                         const GruCache& cache, const std::vector<double>& dh,
                         std::vector<double>* dx) {
        std::vector<double>* dwx = p.w_input.requires_grad() ? &p.w_input.grad() : nullptr;
        std::vector<double>* dwh = p.w_recur.requires_grad() ? &p.w_recur.grad() : nullptr;
        std::vector<double>* db = p.bias.requires_grad() ? &p.bias.grad() : nullptr;
        gru_bptt(p, x, d_in, u, cache, dh, dwx, dwh, db, dx);
      };
      run_dir(pf, *x_fwd, *fc, dh_f, want_dx ? &dx_f : nullptr);
      run_dir(pb, *x_bwd, *bc, dh_b, want_dx ? &dx_b : nullptr);
      if (want_dx) {
        auto& gE = tE.grad();
        for (int t = 0; t < valid_len; ++t)
          for (int i = 0; i < d_in; ++i) {
            gE[static_cast<size_t>(i) * n + t] +=
                dx_f[static_cast<size_t>(t) * d_in + i] +
                dx_b[static_cast<size_t>(valid_len - 1 - t) * d_in + i];
          }
      }
    });
  }
  return H;
}

Tensor cnn_encode(Tape& tape, const Tensor& embeds, const ConvParams& conv,
                  int valid_len) {
  validate_encode_input(embeds, valid_len);
  const int d_in = embeds.rows(), n = embeds.cols();
  const int out_ch = conv.kernel.rows();
  if (conv.kernel.cols() % d_in != 0)
    throw ShapeError("cnn_encode: kernel width does not divide evenly");
  const int width = conv.kernel.cols() / d_in;
  if (width % 2 == 0) throw ShapeError("cnn_encode: kernel width must be odd");
  if (conv.bias.dim(0) != out_ch)
    throw ShapeError("cnn_encode: bias size mismatch");
  const int half = width / 2;

  Tensor H = Tensor::zeros({out_ch, n});
  const double* X = embeds.data().data();
  const double* K = conv.kernel.data().data();
  const double* B = conv.bias.data().data();
  for (int ch = 0; ch < out_ch; ++ch) {
    const double* kk = K + static_cast<size_t>(ch) * d_in * width;
    for (int t = 0; t < valid_len; ++t) {
      double s = B[ch];
      for (int w = 0; w < width; ++w) {
        const int pos = t + w - half;
        if (pos < 0 || pos >= valid_len) continue;  // zero outside valid text
        for (int d = 0; d < d_in; ++d)
          s += kk[static_cast<size_t>(d) * width + w] * X[static_cast<size_t>(d) * n + pos];
      }
      H.at(ch, t) = std::tanh(s);
    }
  }

  const bool needs = tape.recording() &&
                     (conv.kernel.requires_grad() || conv.bias.requires_grad() ||
                      embeds.requires_grad());
  if (needs) {
    H.set_requires_grad(true);
    Tensor tH = H, tE = embeds;
    ConvParams pc = conv;
    tape.record([tH, tE, pc, d_in, n, out_ch, width, half, valid_len]() mutable {
      if (!tH.has_grad()) return;
      const auto& gH = tH.grad();
      const auto& Hv = tH.data();
      const double* X = tE.data().data();
      const double* K = pc.kernel.data().data();
      std::vector<double>* dK = pc.kernel.requires_grad() ? &pc.kernel.grad() : nullptr;
      std::vector<double>* dB = pc.bias.requires_grad() ? &pc.bias.grad() : nullptr;
      std::vector<double>* dX = tE.requires_grad() ? &tE.grad() : nullptr;
      for (int ch = 0; ch < out_ch; ++ch) {
        const double* kk = K + static_cast<size_t>(ch) * d_in * width;
        for (int t = 0; t < valid_len; ++t) {
          const size_t idx = static_cast<size_t>(ch) * n + t;
          const double y = Hv[idx];
          const double ds = gH[idx] * (1.0 - y * y);
          if (ds == 0.0) continue;
          if (dB) (*dB)[ch] += ds;
          for (int w = 0; w < width; ++w) {
            const int pos = t + w - half;
            if (pos < 0 || pos >= valid_len) continue;
            for (int d = 0; d < d_in; ++d) {
              const size_t xi = static_cast<size_t>(d) * n + pos;
              if (dK) (*dK)[static_cast<size_t>(ch) * d_in * width + d * width + w] += ds * X[xi];
              if (dX) (*dX)[xi] += ds * kk[static_cast<size_t>(d) * width + w];
            }
          }
        }
      }
    });
  }
  return H;
}

Tensor encode(Tape& tape, const LaatModel& model, const Tensor& embeds,
              int valid_len) {
  switch (model.config().encoder) {
    case EncoderKind::BiLstm:
      return bilstm_encode(tape, embeds, model.forward_cell, model.backward_cell,
                           model.config().hidden_size, valid_len);
    case EncoderKind::BiGru:
      return bigru_encode(tape, embeds, model.forward_cell, model.backward_cell,
                          model.config().hidden_size, valid_len);
    case EncoderKind::Cnn:
      return cnn_encode(tape, embeds, model.conv, valid_len);
  }
  throw ConfigError("unknown encoder kind");
}

}  // namespace laat
