#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace iin {

using Shape = std::vector<std::size_t>;

// Dense float64 tensor. Handles share storage (copying a Tensor is cheap and
// aliases the same buffer); clone() makes a deep copy of the values. The grad
// buffer is optional and allocated lazily during backpropagation.
class Tensor {
 public:
  Tensor() : st_(std::make_shared<Storage>()) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  const Shape& shape() const { return st_->shape; }
  std::size_t rank() const { return st_->shape.size(); }
  std::size_t size() const { return st_->data.size(); }
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only
  bool same_shape(const Tensor& other) const { return st_->shape == other.st_->shape; }

  double* data() { return st_->data.data(); }
  const double* data() const { return st_->data.data(); }
  std::span<const double> values() const { return st_->data; }

  double item() const;  // single-element tensors
  double at(std::size_t i) const { return st_->data[i]; }
  double& at(std::size_t i) { return st_->data[i]; }
  double at(std::size_t i, std::size_t j) const { return st_->data[i * cols() + j]; }
  double& at(std::size_t i, std::size_t j) { return st_->data[i * cols() + j]; }

  void set_requires_grad(bool b) { st_->requires_grad = b; }
  bool requires_grad() const { return st_->requires_grad; }
  bool has_grad() const { return !st_->grad.empty(); }
  double* grad() { return st_->grad.data(); }
  const double* grad() const { return st_->grad.data(); }
  void ensure_grad();
  void zero_grad();

  Tensor clone() const;
  bool shares_storage(const Tensor& other) const { return st_ == other.st_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> st_;
};

// Record of executed differentiable ops. Each op pushes its output tensor and
// one backward step; backward() resets the transient grads of all op outputs,
// seeds d(loss)/d(loss) = 1 and replays the steps in exact reverse execution
// order. Gradients therefore accumulate only into leaves (tensors the tape
// did not produce), so repeated backward calls add the same contribution
// again. Clearing the tape releases every saved intermediate.
class Tape {
 public:
  void record(const Tensor& output, std::function<void()> step) {
    outputs_.push_back(output);
    steps_.push_back(std::move(step));
  }
  std::size_t size() const { return steps_.size(); }
  void clear() {
    steps_.clear();
    outputs_.clear();
  }

  void backward(const Tensor& loss);

 private:
  std::vector<Tensor> outputs_;
  std::vector<std::function<void()>> steps_;
};

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

enum class Unary { Tanh, LeakyRelu, Exp, Log, LogAbs, Square };

// All ops run eagerly; pass a Tape to make the call differentiable. A null
// tape gives a plain forward evaluation.
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);
Tensor elementwise(const Tensor& x, Unary f, double alpha = 0.01, Tape* tape = nullptr);
Tensor tanh(const Tensor& x, Tape* tape = nullptr);
Tensor leaky_relu(const Tensor& x, double alpha = 0.01, Tape* tape = nullptr);
Tensor exp(const Tensor& x, Tape* tape = nullptr);
Tensor log(const Tensor& x, Tape* tape = nullptr);
Tensor log_abs(const Tensor& x, Tape* tape = nullptr);
Tensor square(const Tensor& x, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor div(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& x, double c, Tape* tape = nullptr);

// Per-column broadcast of a length-cols vector over a rank-2 tensor.
Tensor scale_cols(const Tensor& x, const Tensor& v, Tape* tape = nullptr);
Tensor shift_cols(const Tensor& x, const Tensor& v, Tape* tape = nullptr);

Tensor reduce_sum(const Tensor& x, std::span<const std::size_t> axes, Tape* tape = nullptr);
Tensor reduce_sum_all(const Tensor& x, Tape* tape = nullptr);
Tensor row_sum(const Tensor& x, Tape* tape = nullptr);  // rank-2 -> {rows}

Tensor slice_cols(const Tensor& x, std::size_t offset, std::size_t width, Tape* tape = nullptr);
Tensor concat_cols(std::span<const Tensor> parts, Tape* tape = nullptr);
Tensor permute_cols(const Tensor& x, std::span<const std::uint32_t> perm, Tape* tape = nullptr);
Tensor broadcast_scalar(const Tensor& s, std::size_t n, Tape* tape = nullptr);  // -> {n}

bool all_finite(const Tensor& x);

// Central finite-difference check of d f / d theta. Runs f once on a tape for
// the analytic gradient, then perturbs each component of theta in place by
// +/- h. Returns max over components of
// |analytic - central difference| / max(1, |analytic|).
double gradient_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                      Tensor theta, double h);

}  // namespace iin
