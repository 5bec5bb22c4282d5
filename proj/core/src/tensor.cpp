#include "laat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace laat {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_shape(const std::vector<int>& shape) {
  if (shape.empty() || shape.size() > 3)
    throw ShapeError("tensor rank must be 1..3, got " + shape_str(shape));
  for (int d : shape)
    if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  check_shape(shape);
  auto n = std::make_shared<Node>();
  n->data.assign(shape_size(shape), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values,
                    bool requires_grad) {
  check_shape(shape);
  if (shape_size(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not fill shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::identity(int n) {
  Tensor t = zeros({n, n});
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

static void require_defined(const std::shared_ptr<void>& p) {
  if (!p) throw std::logic_error("use of undefined Tensor");
}

const std::vector<int>& Tensor::shape() const {
  require_defined(node_);
  return node_->shape;
}
int Tensor::rank() const { return static_cast<int>(shape().size()); }
int64_t Tensor::size() const { return static_cast<int64_t>(data().size()); }

int Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  return s[axis];
}

std::vector<double>& Tensor::data() {
  require_defined(node_);
  return node_->data;
}
const std::vector<double>& Tensor::data() const {
  require_defined(node_);
  return node_->data;
}

double& Tensor::at(int64_t i) { return data()[static_cast<size_t>(i)]; }
double Tensor::at(int64_t i) const { return data()[static_cast<size_t>(i)]; }

double& Tensor::at(int r, int c) {
  if (rank() != 2) throw ShapeError("2-index access on rank-" + std::to_string(rank()) + " tensor");
  return node_->data[static_cast<size_t>(r) * node_->shape[1] + c];
}
double Tensor::at(int r, int c) const {
  if (rank() != 2) throw ShapeError("2-index access on rank-" + std::to_string(rank()) + " tensor");
  return node_->data[static_cast<size_t>(r) * node_->shape[1] + c];
}

double Tensor::scalar_value() const {
  if (size() != 1) throw ShapeError("scalar_value on tensor of size " + std::to_string(size()));
  return data()[0];
}

bool Tensor::requires_grad() const {
  require_defined(node_);
  return node_->requires_grad;
}
void Tensor::set_requires_grad(bool v) {
  require_defined(node_);
  node_->requires_grad = v;
}

bool Tensor::has_grad() const {
  require_defined(node_);
  return !node_->grad.empty();
}

std::vector<double>& Tensor::grad() {
  require_defined(node_);
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  require_defined(node_);
  if (node_->grad.empty())
    throw std::logic_error("gradient not populated; call backward first");
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  require_defined(node_);
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->requires_grad = node_->requires_grad;
  return Tensor(std::move(n));
}

// ---- Tape ------------------------------------------------------------------

void Tape::record(std::function<void()> step) {
  steps_.push_back(std::move(step));
}

void Tape::backward(const Tensor& root) {
  if (root.size() != 1)
    throw ShapeError("backward requires a scalar root, got shape " +
                     shape_str(root.shape()));
  if (backward_called_)
    throw std::logic_error("backward already ran on this tape; reset() first");
  backward_called_ = true;
  Tensor r = root;
  r.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void Tape::reset() {
  steps_.clear();
  backward_called_ = false;
}

// ---- Op helpers --------------------------------------------------------------

namespace {

bool track(Tape& tape, const Tensor& a) {
  return tape.recording() && a.requires_grad();
}
bool track(Tape& tape, const Tensor& a, const Tensor& b) {
  return tape.recording() && (a.requires_grad() || b.requires_grad());
}

// Output grad may be absent when the output never reached the root.
const std::vector<double>* out_grad(const Tensor& out) {
  return out.has_grad() ? &out.grad() : nullptr;
}

}  // namespace

// ---- Ops ---------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros({m, n});
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = c.data().data();
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const double aip = pa[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = pb + p * n;
        double* crow = pc + i * n;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
  }
  if (track(tape, a, b)) {
    c.set_requires_grad(true);
    Tensor ta = a, tb = b, tc = c;
    tape.record([ta, tb, tc, m, k, n]() mutable {
      const std::vector<double>* g = out_grad(tc);
      if (!g) return;
      const double* pg = g->data();
      if (ta.requires_grad()) {
        // dA = dC . B^T
        double* da = ta.grad().data();
        const double* pb = tb.data().data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < k; ++j) {
            double s = 0.0;
            for (int p = 0; p < n; ++p) s += pg[i * n + p] * pb[j * n + p];
            da[i * k + j] += s;
          }
      }
      if (tb.requires_grad()) {
        // dB = A^T . dC
        double* db = tb.grad().data();
        const double* pa = ta.data().data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < k; ++j) {
            const double aij = pa[i * k + j];
            if (aij == 0.0) continue;
            for (int p = 0; p < n; ++p) db[j * n + p] += aij * pg[i * n + p];
          }
      }
    });
  }
  return c;
}

Tensor tanh_elem(Tape& tape, const Tensor& x) {
  Tensor y = Tensor::zeros(x.shape());
  const auto& xs = x.data();
  auto& ys = y.data();
  for (size_t i = 0; i < xs.size(); ++i) ys[i] = std::tanh(xs[i]);
  if (track(tape, x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    tape.record([tx, ty]() mutable {
      const std::vector<double>* g = out_grad(ty);
      if (!g || !tx.requires_grad()) return;
      auto& dx = tx.grad();
      const auto& yv = ty.data();
      for (size_t i = 0; i < dx.size(); ++i)
        dx[i] += (*g)[i] * (1.0 - yv[i] * yv[i]);
    });
  }
  return y;
}

// Stable logistic: never exponentiates a positive argument.
static double stable_sigmoid(double v) {
  if (v >= 0.0) {
    return 1.0 / (1.0 + std::exp(-v));
  }
  const double e = std::exp(v);  // underflows to 0 for very negative v
  return e / (1.0 + e);
}

Tensor sigmoid_elem(Tape& tape, const Tensor& x) {
  Tensor y = Tensor::zeros(x.shape());
  const auto& xs = x.data();
  auto& ys = y.data();
  for (size_t i = 0; i < xs.size(); ++i) ys[i] = stable_sigmoid(xs[i]);
  if (track(tape, x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    tape.record([tx, ty]() mutable {
      const std::vector<double>* g = out_grad(ty);
      if (!g || !tx.requires_grad()) return;
      auto& dx = tx.grad();
      const auto& yv = ty.data();
      for (size_t i = 0; i < dx.size(); ++i)
        dx[i] += (*g)[i] * yv[i] * (1.0 - yv[i]);
    });
  }
  return y;
}

Tensor masked_softmax_rows(Tape& tape, const Tensor& x, int valid_len) {
  if (x.rank() != 2)
    throw ShapeError("masked_softmax_rows expects rank 2, got " +
                     shape_str(x.shape()));
  if (valid_len == 0)
    throw EmptySequenceError("masked_softmax_rows: valid_len is zero");
  const int r = x.rows(), n = x.cols();
  if (valid_len < 0 || valid_len > n)
    throw ShapeError("valid_len " + std::to_string(valid_len) +
                     " outside 1.." + std::to_string(n));
  Tensor y = Tensor::zeros({r, n});
  const double* px = x.data().data();
  double* py = y.data().data();
  for (int i = 0; i < r; ++i) {
    const double* row = px + static_cast<size_t>(i) * n;
    double* out = py + static_cast<size_t>(i) * n;
    double m = detail::kNegInfSurrogate;
    for (int j = 0; j < valid_len; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (int j = 0; j < valid_len; ++j) {
      out[j] = std::exp(row[j] - m);
      sum += out[j];
    }
    for (int j = 0; j < valid_len; ++j) out[j] /= sum;
    // Masked positions stay the exact 0.0 they were initialized to; the
    // -1e30 surrogate underflows to the same value.
  }
  if (track(tape, x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    tape.record([tx, ty, r, n, valid_len]() mutable {
      const std::vector<double>* g = out_grad(ty);
      if (!g || !tx.requires_grad()) return;
      auto& dx = tx.grad();
      const auto& yv = ty.data();
      for (int i = 0; i < r; ++i) {
        const size_t off = static_cast<size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < valid_len; ++j) dot += (*g)[off + j] * yv[off + j];
        for (int j = 0; j < valid_len; ++j)
          dx[off + j] += yv[off + j] * ((*g)[off + j] - dot);
      }
    });
  }
  return y;
}

Tensor concat(Tape& tape, const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank())
    throw ShapeError("concat rank mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  if (axis < 0 || axis >= a.rank())
    throw ShapeError("concat axis " + std::to_string(axis) + " out of range");
  for (int d = 0; d < a.rank(); ++d)
    if (d != axis && a.dim(d) != b.dim(d))
      throw ShapeError("concat shape mismatch on axis " + std::to_string(d) +
                       ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.rank() > 2) throw ShapeError("concat supports rank 1 and 2 only");

  std::vector<int> out_shape = a.shape();
  out_shape[axis] += b.dim(axis);
  Tensor c = Tensor::zeros(out_shape);

  // Copy helpers shared by forward and backward.
  const int rank = a.rank();
  auto copy_into = [rank, axis](const Tensor& src, Tensor& dst, int offset) {
    if (rank == 1 || axis == 0) {
      std::copy(src.data().begin(), src.data().end(),
                dst.data().begin() + (rank == 1 ? offset
                                                : static_cast<int64_t>(offset) * dst.cols()));
    } else {
      for (int i = 0; i < src.rows(); ++i)
        for (int j = 0; j < src.cols(); ++j) dst.at(i, offset + j) = src.at(i, j);
    }
  };
  copy_into(a, c, 0);
  copy_into(b, c, a.dim(axis));

  if (track(tape, a, b)) {
    c.set_requires_grad(true);
    Tensor ta = a, tb = b, tc = c;
    const int split = a.dim(axis);
    tape.record([ta, tb, tc, axis, split, rank]() mutable {
      const std::vector<double>* g = out_grad(tc);
      if (!g) return;
      auto slice_add = [&](Tensor& dst, int offset) {
        if (!dst.requires_grad()) return;
        auto& d = dst.grad();
        if (rank == 1 || axis == 0) {
          const int64_t start = (rank == 1)
                                    ? offset
                                    : static_cast<int64_t>(offset) * tc.cols();
          for (size_t i = 0; i < d.size(); ++i) d[i] += (*g)[start + i];
        } else {
          const int nc = tc.cols();
          for (int i = 0; i < dst.rows(); ++i)
            for (int j = 0; j < dst.cols(); ++j)
              d[static_cast<size_t>(i) * dst.cols() + j] +=
                  (*g)[static_cast<size_t>(i) * nc + offset + j];
        }
      };
      slice_add(ta, 0);
      slice_add(tb, split);
    });
  }
  return c;
}

Tensor dropout(Tape& tape, const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout probability must be in [0,1), got " +
                      std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor y = Tensor::zeros(x.shape());
  auto mask = std::make_shared<std::vector<uint8_t>>(x.size());
  const auto& xs = x.data();
  auto& ys = y.data();
  for (size_t i = 0; i < xs.size(); ++i) {
    const bool kept = !rng.bernoulli(p);
    (*mask)[i] = kept;
    ys[i] = kept ? xs[i] * keep_scale : 0.0;
  }
  if (track(tape, x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    tape.record([tx, ty, mask, keep_scale]() mutable {
      const std::vector<double>* g = out_grad(ty);
      if (!g || !tx.requires_grad()) return;
      auto& dx = tx.grad();
      for (size_t i = 0; i < dx.size(); ++i)
        if ((*mask)[i]) dx[i] += (*g)[i] * keep_scale;
    });
  }
  return y;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor c = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) c.at(i) = a.at(i) + b.at(i);
  if (track(tape, a, b)) {
    c.set_requires_grad(true);
    Tensor ta = a, tb = b, tc = c;
    tape.record([ta, tb, tc]() mutable {
      const std::vector<double>* g = out_grad(tc);
      if (!g) return;
      if (ta.requires_grad()) {
        auto& d = ta.grad();
        for (size_t i = 0; i < d.size(); ++i) d[i] += (*g)[i];
      }
      if (tb.requires_grad()) {
        auto& d = tb.grad();
        for (size_t i = 0; i < d.size(); ++i) d[i] += (*g)[i];
      }
    });
  }
  return c;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor c = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) c.at(i) = a.at(i) * b.at(i);
  if (track(tape, a, b)) {
    c.set_requires_grad(true);
    Tensor ta = a, tb = b, tc = c;
    tape.record([ta, tb, tc]() mutable {
      const std::vector<double>* g = out_grad(tc);
      if (!g) return;
      if (ta.requires_grad()) {
        auto& d = ta.grad();
        const auto& bv = tb.data();
        for (size_t i = 0; i < d.size(); ++i) d[i] += (*g)[i] * bv[i];
      }
      if (tb.requires_grad()) {
        auto& d = tb.grad();
        const auto& av = ta.data();
        for (size_t i = 0; i < d.size(); ++i) d[i] += (*g)[i] * av[i];
      }
    });
  }
  return c;
}

Tensor scale(Tape& tape, const Tensor& x, double c) {
  Tensor y = Tensor::zeros(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) y.at(i) = x.at(i) * c;
  if (track(tape, x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    tape.record([tx, ty, c]() mutable {
      const std::vector<double>* g = out_grad(ty);
      if (!g || !tx.requires_grad()) return;
      auto& d = tx.grad();
      for (size_t i = 0; i < d.size(); ++i) d[i] += (*g)[i] * c;
    });
  }
  return y;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = Tensor::scalar(s);
  if (track(tape, x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    tape.record([tx, ty]() mutable {
      const std::vector<double>* g = out_grad(ty);
      if (!g || !tx.requires_grad()) return;
      auto& d = tx.grad();
      for (size_t i = 0; i < d.size(); ++i) d[i] += (*g)[0];
    });
  }
  return y;
}

Tensor transpose(Tape& tape, const Tensor& x) {
  if (x.rank() != 2)
    throw ShapeError("transpose expects rank 2, got " + shape_str(x.shape()));
  const int r = x.rows(), c = x.cols();
  Tensor y = Tensor::zeros({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) y.at(j, i) = x.at(i, j);
  if (track(tape, x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    tape.record([tx, ty, r, c]() mutable {
      const std::vector<double>* g = out_grad(ty);
      if (!g || !tx.requires_grad()) return;
      auto& d = tx.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          d[static_cast<size_t>(i) * c + j] += (*g)[static_cast<size_t>(j) * r + i];
    });
  }
  return y;
}

Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> new_shape) {
  if (shape_size(new_shape) != x.size())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape) + " changes element count");
  Tensor y = Tensor::from(std::move(new_shape), x.data());
  if (track(tape, x)) {
    y.set_requires_grad(true);
    Tensor tx = x, ty = y;
    tape.record([tx, ty]() mutable {
      const std::vector<double>* g = out_grad(ty);
      if (!g || !tx.requires_grad()) return;
      auto& d = tx.grad();
      for (size_t i = 0; i < d.size(); ++i) d[i] += (*g)[i];
    });
  }
  return y;
}

Tensor lookup_columns(Tape& tape, const Tensor& table,
                      const std::vector<int>& ids) {
  if (table.rank() != 2)
    throw ShapeError("lookup_columns expects a rank-2 table, got " +
                     shape_str(table.shape()));
  if (ids.empty()) throw EmptySequenceError("lookup_columns: empty id sequence");
  const int v = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || id >= v)
      throw IndexError("token id " + std::to_string(id) +
                       " outside table of " + std::to_string(v) + " rows");
  const int n = static_cast<int>(ids.size());
  Tensor y = Tensor::zeros({d, n});
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < d; ++i) y.at(i, j) = table.at(ids[j], i);
  if (track(tape, table)) {
    y.set_requires_grad(true);
    Tensor tt = table, ty = y;
    auto idv = std::make_shared<std::vector<int>>(ids);
    tape.record([tt, ty, idv, d, n]() mutable {
      const std::vector<double>* g = out_grad(ty);
      if (!g || !tt.requires_grad()) return;
      auto& dt = tt.grad();
      const int cols = tt.cols();
      for (int j = 0; j < n; ++j) {
        double* row = dt.data() + static_cast<size_t>((*idv)[j]) * cols;
        for (int i = 0; i < d; ++i) row[i] += (*g)[static_cast<size_t>(i) * n + j];
      }
    });
  }
  return y;
}

}  // namespace laat
