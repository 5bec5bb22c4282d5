#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "laat/errors.hpp"
#include "laat/rng.hpp"

namespace laat {

// Dense tensor of 64-bit floats, row-major, rank <= 3. A Tensor is a
// handle: copies alias the same storage and gradient buffer, which is what
// lets backward steps recorded on a Tape accumulate into the right place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor identity(int n);
  static Tensor uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const std::vector<int>& shape() const;
  int rank() const;
  int64_t size() const;
  int dim(int axis) const;
  // Rank-2 helpers.
  int rows() const { return dim(0); }
  int cols() const { return dim(1); }

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double& at(int64_t i);
  double at(int64_t i) const;
  double& at(int r, int c);
  double at(int r, int c) const;
  double scalar_value() const;

  bool requires_grad() const;
  void set_requires_grad(bool v);

  // Gradient buffer, same length as data. Allocated (zero-filled) on first
  // access; absent until then.
  bool has_grad() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Deep copy with its own storage; gradient buffer is not copied.
  Tensor clone() const;

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

int64_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Reverse-mode tape: an ordered record of executed operations. Each op
// appends one backward step; backward() replays the steps in exact reverse
// execution order, exactly once. A second backward() without reset()
// throws — higher-order gradients are unsupported.
class Tape {
 public:
  void record(std::function<void()> step);

  // False once disabled: ops stop recording and their outputs drop grad
  // tracking. Used for pure evaluation passes.
  bool recording() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }

  void backward(const Tensor& root);
  void reset();

  std::size_t recorded_ops() const { return steps_.size(); }
  bool backward_called() const { return backward_called_; }

 private:
  std::vector<std::function<void()>> steps_;
  bool enabled_ = true;
  bool backward_called_ = false;
};

// ---- Differentiable operations -------------------------------------------
// Every op computes its forward result eagerly and, when the tape is
// recording and any input requires grad, pushes one backward step.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor tanh_elem(Tape& tape, const Tensor& x);
Tensor sigmoid_elem(Tape& tape, const Tensor& x);

// Per-row softmax over columns [0, valid_len); columns beyond valid_len come
// out exactly zero. Invalid logits are taken as the -1e30 surrogate for
// -inf, and the whole row is stabilized by max subtraction.
Tensor masked_softmax_rows(Tape& tape, const Tensor& x, int valid_len);

Tensor concat(Tape& tape, const Tensor& a, const Tensor& b, int axis);

// Inverted dropout: training mode zeroes entries with probability p and
// scales survivors by 1/(1-p); eval mode is the identity.
Tensor dropout(Tape& tape, const Tensor& x, double p, bool training, Rng& rng);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double c);
Tensor sum_all(Tape& tape, const Tensor& x);
Tensor transpose(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> new_shape);

// Column i of the result is row ids[i] of table (an embedding lookup);
// gradients scatter-add back into the looked-up rows.
Tensor lookup_columns(Tape& tape, const Tensor& table,
                      const std::vector<int>& ids);

namespace detail {
// Nonzero surrogate used for masked logits.
inline constexpr double kNegInfSurrogate = -1e30;
}  // namespace detail

}  // namespace laat
