#include "iin/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "iin/errors.hpp"

namespace iin {

namespace {

std::size_t shape_product(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                shape_str(t.shape()));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : st_(std::make_shared<Storage>()) {
  st_->shape = std::move(shape);
  st_->data.assign(shape_product(st_->shape), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : st_(std::make_shared<Storage>()) {
  if (shape_product(shape) != values.size())
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " incompatible with " +
                                std::to_string(values.size()) + " values");
  st_->shape = std::move(shape);
  st_->data = std::move(values);
}

Tensor Tensor::vector(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("Tensor::rows: not rank-2");
  return st_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("Tensor::cols: not rank-2");
  return st_->shape[1];
}

double Tensor::item() const {
  if (size() != 1)
    throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(size()) +
                                " elements, expected 1");
  return st_->data[0];
}

void Tensor::ensure_grad() {
  if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor out;
  out.st_->shape = st_->shape;
  out.st_->data = st_->data;
  out.st_->requires_grad = st_->requires_grad;
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must hold exactly one element, got " +
                                std::to_string(loss.size()));
  for (Tensor& t : outputs_) t.zero_grad();
  Tensor l = loss;
  l.ensure_grad();
  l.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ, " + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c(Shape{m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  if (tape) {
    Tensor ta = a, tb = b;
    tape->record(c, [ta, tb, c, m, k, n]() mutable {
      if (!c.has_grad()) return;
      ta.ensure_grad();
      tb.ensure_grad();
      const double* gc = c.grad();
      const double* pa = ta.data();
      const double* pb = tb.data();
      double* ga = ta.grad();
      double* gb = tb.grad();
      // dA += dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* gcrow = gc + i * n;
          const double* brow = pb + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += gcrow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      // dB += A^T * dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          const double* gcrow = gc + i * n;
          double* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * gcrow[j];
        }
    });
  }
  return c;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  require_rank2(x, "affine");
  require_rank2(w, "affine");
  if (b.rank() != 1)
    throw std::invalid_argument("affine: bias must be rank-1, got " + shape_str(b.shape()));
  if (b.size() != w.cols())
    throw std::invalid_argument("affine: bias length " + std::to_string(b.size()) +
                                " does not match output width " + std::to_string(w.cols()));
  Tensor y = matmul(x, w, tape);
  const std::size_t m = y.rows(), n = y.cols();
  double* py = y.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) py[i * n + j] += pb[j];
  if (tape) {
    Tensor bias = b;
    tape->record(y, [y, bias, m, n]() mutable {
      if (!y.has_grad()) return;
      bias.ensure_grad();
      const double* gy = y.grad();
      double* gb = bias.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
    });
  }
  return y;
}

Tensor elementwise(const Tensor& x, Unary f, double alpha, Tape* tape) {
  Tensor y(x.shape());
  const std::size_t n = x.size();
  const double* px = x.data();
  double* py = y.data();
  switch (f) {
    case Unary::Tanh:
      for (std::size_t i = 0; i < n; ++i) py[i] = std::tanh(px[i]);
      break;
    case Unary::LeakyRelu:
      for (std::size_t i = 0; i < n; ++i) py[i] = px[i] > 0.0 ? px[i] : alpha * px[i];
      break;
    case Unary::Exp:
      for (std::size_t i = 0; i < n; ++i) py[i] = std::exp(px[i]);
      break;
    case Unary::Log:
      for (std::size_t i = 0; i < n; ++i) {
        if (px[i] <= 0.0)
          throw std::domain_error("log: non-positive input " + std::to_string(px[i]));
        py[i] = std::log(px[i]);
      }
      break;
    case Unary::LogAbs:
      for (std::size_t i = 0; i < n; ++i) {
        if (px[i] == 0.0) throw std::domain_error("log_abs: zero input");
        py[i] = std::log(std::abs(px[i]));
      }
      break;
    case Unary::Square:
      for (std::size_t i = 0; i < n; ++i) py[i] = px[i] * px[i];
      break;
  }
  if (tape) {
    Tensor in = x;
    tape->record(y, [in, y, f, alpha, n]() mutable {
      if (!y.has_grad()) return;
      in.ensure_grad();
      const double* gy = y.grad();
      const double* px = in.data();
      const double* py = y.data();
      double* gx = in.grad();
      switch (f) {
        case Unary::Tanh:
          for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * (1.0 - py[i] * py[i]);
          break;
        case Unary::LeakyRelu:
          for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * (px[i] > 0.0 ? 1.0 : alpha);
          break;
        case Unary::Exp:
          for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * py[i];
          break;
        case Unary::Log:
        case Unary::LogAbs:
          for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] / px[i];
          break;
        case Unary::Square:
          for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * 2.0 * px[i];
          break;
      }
    });
  }
  return y;
}

Tensor tanh(const Tensor& x, Tape* tape) { return elementwise(x, Unary::Tanh, 0.0, tape); }
Tensor leaky_relu(const Tensor& x, double alpha, Tape* tape) {
  return elementwise(x, Unary::LeakyRelu, alpha, tape);
}
Tensor exp(const Tensor& x, Tape* tape) { return elementwise(x, Unary::Exp, 0.0, tape); }
Tensor log(const Tensor& x, Tape* tape) { return elementwise(x, Unary::Log, 0.0, tape); }
Tensor log_abs(const Tensor& x, Tape* tape) { return elementwise(x, Unary::LogAbs, 0.0, tape); }
Tensor square(const Tensor& x, Tape* tape) { return elementwise(x, Unary::Square, 0.0, tape); }

namespace {

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, Tape* tape, const char* name) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  Tensor y(a.shape());
  const std::size_t n = a.size();
  const double* pa = a.data();
  const double* pb = b.data();
  double* py = y.data();
  switch (op) {
    case BinOp::Add:
      for (std::size_t i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
      break;
    case BinOp::Sub:
      for (std::size_t i = 0; i < n; ++i) py[i] = pa[i] - pb[i];
      break;
    case BinOp::Mul:
      for (std::size_t i = 0; i < n; ++i) py[i] = pa[i] * pb[i];
      break;
    case BinOp::Div:
      for (std::size_t i = 0; i < n; ++i) py[i] = pa[i] / pb[i];
      break;
  }
  if (tape) {
    Tensor ta = a, tb = b;
    tape->record(y, [ta, tb, y, op, n]() mutable {
      if (!y.has_grad()) return;
      ta.ensure_grad();
      tb.ensure_grad();
      const double* gy = y.grad();
      const double* pa = ta.data();
      const double* pb = tb.data();
      double* ga = ta.grad();
      double* gb = tb.grad();
      switch (op) {
        case BinOp::Add:
          for (std::size_t i = 0; i < n; ++i) {
            ga[i] += gy[i];
            gb[i] += gy[i];
          }
          break;
        case BinOp::Sub:
          for (std::size_t i = 0; i < n; ++i) {
            ga[i] += gy[i];
            gb[i] -= gy[i];
          }
          break;
        case BinOp::Mul:
          for (std::size_t i = 0; i < n; ++i) {
            ga[i] += gy[i] * pb[i];
            gb[i] += gy[i] * pa[i];
          }
          break;
        case BinOp::Div:
          for (std::size_t i = 0; i < n; ++i) {
            ga[i] += gy[i] / pb[i];
            gb[i] -= gy[i] * pa[i] / (pb[i] * pb[i]);
          }
          break;
      }
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) { return binary(a, b, BinOp::Add, tape, "add"); }
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) { return binary(a, b, BinOp::Sub, tape, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) { return binary(a, b, BinOp::Mul, tape, "mul"); }
Tensor div(const Tensor& a, const Tensor& b, Tape* tape) { return binary(a, b, BinOp::Div, tape, "div"); }

Tensor scale(const Tensor& x, double c, Tape* tape) {
  Tensor y(x.shape());
  const std::size_t n = x.size();
  const double* px = x.data();
  double* py = y.data();
  for (std::size_t i = 0; i < n; ++i) py[i] = c * px[i];
  if (tape) {
    Tensor in = x;
    tape->record(y, [in, y, c, n]() mutable {
      if (!y.has_grad()) return;
      in.ensure_grad();
      const double* gy = y.grad();
      double* gx = in.grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += c * gy[i];
    });
  }
  return y;
}

Tensor scale_cols(const Tensor& x, const Tensor& v, Tape* tape) {
  require_rank2(x, "scale_cols");
  if (v.rank() != 1 || v.size() != x.cols())
    throw std::invalid_argument("scale_cols: vector shape " + shape_str(v.shape()) +
                                " does not match columns of " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y(x.shape());
  const double* px = x.data();
  const double* pv = v.data();
  double* py = y.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) py[i * n + j] = px[i * n + j] * pv[j];
  if (tape) {
    Tensor in = x, vec = v;
    tape->record(y, [in, vec, y, m, n]() mutable {
      if (!y.has_grad()) return;
      in.ensure_grad();
      vec.ensure_grad();
      const double* gy = y.grad();
      const double* px = in.data();
      const double* pv = vec.data();
      double* gx = in.grad();
      double* gv = vec.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          gx[i * n + j] += gy[i * n + j] * pv[j];
          gv[j] += gy[i * n + j] * px[i * n + j];
        }
    });
  }
  return y;
}

Tensor shift_cols(const Tensor& x, const Tensor& v, Tape* tape) {
  require_rank2(x, "shift_cols");
  if (v.rank() != 1 || v.size() != x.cols())
    throw std::invalid_argument("shift_cols: vector shape " + shape_str(v.shape()) +
                                " does not match columns of " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y(x.shape());
  const double* px = x.data();
  const double* pv = v.data();
  double* py = y.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) py[i * n + j] = px[i * n + j] + pv[j];
  if (tape) {
    Tensor in = x, vec = v;
    tape->record(y, [in, vec, y, m, n]() mutable {
      if (!y.has_grad()) return;
      in.ensure_grad();
      vec.ensure_grad();
      const double* gy = y.grad();
      double* gx = in.grad();
      double* gv = vec.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          gx[i * n + j] += gy[i * n + j];
          gv[j] += gy[i * n + j];
        }
    });
  }
  return y;
}

Tensor reduce_sum(const Tensor& x, std::span<const std::size_t> axes, Tape* tape) {
  const std::size_t r = x.rank();
  std::vector<bool> reduced(r, false);
  for (std::size_t ax : axes) {
    if (ax >= r)
      throw std::invalid_argument("reduce_sum: axis " + std::to_string(ax) +
                                  " invalid for rank-" + std::to_string(r) + " tensor");
    if (reduced[ax]) throw std::invalid_argument("reduce_sum: duplicate axis");
    reduced[ax] = true;
  }
  Shape out_shape;
  for (std::size_t d = 0; d < r; ++d)
    if (!reduced[d]) out_shape.push_back(x.shape()[d]);
  Tensor y(out_shape);

  // Strides of the input, and the output stride carried by each input axis.
  std::vector<std::size_t> in_stride(r, 1), out_stride(r, 0);
  for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * x.shape()[d];
  std::size_t acc = 1;
  for (std::size_t d = r; d-- > 0;)
    if (!reduced[d]) {
      out_stride[d] = acc;
      acc *= x.shape()[d];
    }

  const std::size_t n = x.size();
  const double* px = x.data();
  double* py = y.data();
  auto out_index = [&](std::size_t flat) {
    std::size_t idx = 0;
    for (std::size_t d = 0; d < r; ++d) {
      const std::size_t coord = (flat / in_stride[d]) % x.shape()[d];
      idx += coord * out_stride[d];
    }
    return idx;
  };
  for (std::size_t i = 0; i < n; ++i) py[out_index(i)] += px[i];

  if (tape) {
    Tensor in = x;
    tape->record(y, [in, y, in_stride, out_stride, r, n, shape = in.shape()]() mutable {
      if (!y.has_grad()) return;
      in.ensure_grad();
      const double* gy = y.grad();
      double* gx = in.grad();
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t idx = 0;
        for (std::size_t d = 0; d < r; ++d) {
          const std::size_t coord = (i / in_stride[d]) % shape[d];
          idx += coord * out_stride[d];
        }
        gx[i] += gy[idx];
      }
    });
  }
  return y;
}

Tensor reduce_sum_all(const Tensor& x, Tape* tape) {
  Tensor y(Shape{});
  const std::size_t n = x.size();
  const double* px = x.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += px[i];
  y.data()[0] = acc;
  if (tape) {
    Tensor in = x;
    tape->record(y, [in, y, n]() mutable {
      if (!y.has_grad()) return;
      in.ensure_grad();
      const double g = y.grad()[0];
      double* gx = in.grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return y;
}

Tensor row_sum(const Tensor& x, Tape* tape) {
  require_rank2(x, "row_sum");
  const std::size_t axes[1] = {1};
  return reduce_sum(x, axes, tape);
}

Tensor slice_cols(const Tensor& x, std::size_t offset, std::size_t width, Tape* tape) {
  require_rank2(x, "slice_cols");
  if (offset + width > x.cols())
    throw std::invalid_argument("slice_cols: range [" + std::to_string(offset) + ", " +
                                std::to_string(offset + width) + ") exceeds " +
                                std::to_string(x.cols()) + " columns");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y(Shape{m, width});
  const double* px = x.data();
  double* py = y.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < width; ++j) py[i * width + j] = px[i * n + offset + j];
  if (tape) {
    Tensor in = x;
    tape->record(y, [in, y, offset, width, m, n]() mutable {
      if (!y.has_grad()) return;
      in.ensure_grad();
      const double* gy = y.grad();
      double* gx = in.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < width; ++j) gx[i * n + offset + j] += gy[i * width + j];
    });
  }
  return y;
}

Tensor concat_cols(std::span<const Tensor> parts, Tape* tape) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.rows() != m)
      throw std::invalid_argument("concat_cols: parts must be rank-2 with equal row counts");
    n += p.cols();
  }
  Tensor y(Shape{m, n});
  double* py = y.data();
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    const double* pp = p.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) py[i * n + off + j] = pp[i * w + j];
    off += w;
  }
  if (tape) {
    std::vector<Tensor> ins(parts.begin(), parts.end());
    tape->record(y, [ins, y, m, n]() mutable {
      if (!y.has_grad()) return;
      const double* gy = y.grad();
      std::size_t off = 0;
      for (Tensor& p : ins) {
        p.ensure_grad();
        const std::size_t w = p.cols();
        double* gp = p.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += gy[i * n + off + j];
        off += w;
      }
    });
  }
  return y;
}

Tensor permute_cols(const Tensor& x, std::span<const std::uint32_t> perm, Tape* tape) {
  require_rank2(x, "permute_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (perm.size() != n)
    throw std::invalid_argument("permute_cols: permutation length " +
                                std::to_string(perm.size()) + " does not match " +
                                std::to_string(n) + " columns");
  Tensor y(x.shape());
  const double* px = x.data();
  double* py = y.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) py[i * n + j] = px[i * n + perm[j]];
  if (tape) {
    Tensor in = x;
    std::vector<std::uint32_t> p(perm.begin(), perm.end());
    tape->record(y, [in, y, p, m, n]() mutable {
      if (!y.has_grad()) return;
      in.ensure_grad();
      const double* gy = y.grad();
      double* gx = in.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + p[j]] += gy[i * n + j];
    });
  }
  return y;
}

Tensor broadcast_scalar(const Tensor& s, std::size_t n, Tape* tape) {
  if (s.size() != 1) throw std::invalid_argument("broadcast_scalar: input must hold one element");
  Tensor y(Shape{n}, s.item());
  if (tape) {
    Tensor in = s;
    tape->record(y, [in, y, n]() mutable {
      if (!y.has_grad()) return;
      in.ensure_grad();
      const double* gy = y.grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += gy[i];
      in.grad()[0] += acc;
    });
  }
  return y;
}

bool all_finite(const Tensor& x) {
  const double* p = x.data();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

double gradient_check(const std::function<Tensor(Tape&, const Tensor&)>& f, Tensor theta,
                      double h) {
  if (h <= 0.0) throw std::invalid_argument("gradient_check: h must be positive");
  Tape tape;
  Tensor out = f(tape, theta);
  if (out.size() != 1)
    throw std::invalid_argument("gradient_check: f must return a scalar");
  theta.ensure_grad();
  theta.zero_grad();
  tape.backward(out);
  std::vector<double> analytic(theta.grad(), theta.grad() + theta.size());

  double worst = 0.0;
  double* p = theta.data();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    Tape t_plus;
    const double fp = f(t_plus, theta).item();
    p[i] = saved - h;
    Tape t_minus;
    const double fm = f(t_minus, theta).item();
    p[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic[i]))
      throw NumericError("gradient_check: non-finite value encountered");
    const double fd = (fp - fm) / (2.0 * h);
    const double rel = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace iin
