#include "iin/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace iin {

// ---------------------------------------------------------------------------
// FactorLayout
// ---------------------------------------------------------------------------

std::size_t FactorLayout::total() const {
  std::size_t n = 0;
  for (std::size_t d : dims) n += d;
  return n;
}

std::size_t FactorLayout::offset(std::size_t k) const {
  if (k >= dims.size()) throw std::invalid_argument("FactorLayout: factor index out of range");
  std::size_t off = 0;
  for (std::size_t i = 0; i < k; ++i) off += dims[i];
  return off;
}

void FactorLayout::validate() const {
  if (dims.empty()) throw std::invalid_argument("FactorLayout: empty");
  for (std::size_t d : dims)
    if (d < 1) throw std::invalid_argument("FactorLayout: every factor needs at least 1 dim");
}

FactorLayout FactorLayout::parse(const std::string& text) {
  std::vector<std::size_t> dims;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(',', pos);
    if (next == std::string::npos) next = text.size();
    const std::string tok = text.substr(pos, next - pos);
    try {
      const long v = std::stol(tok);
      if (v < 1) throw std::invalid_argument("non-positive");
      dims.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw std::invalid_argument("FactorLayout: bad dimension '" + tok + "'");
    }
    pos = next + 1;
  }
  return FactorLayout(std::move(dims));
}

std::string FactorLayout::str() const {
  std::string out;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims[i]);
  }
  return out;
}

std::vector<Tensor> split(const Tensor& code, const FactorLayout& layout) {
  if (code.rank() != 2 || code.cols() != layout.total())
    throw std::invalid_argument("split: code width does not match layout total " +
                                std::to_string(layout.total()));
  std::vector<Tensor> out;
  out.reserve(layout.factors());
  std::size_t off = 0;
  for (std::size_t d : layout.dims) {
    out.push_back(slice_cols(code, off, d));
    off += d;
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& factors, const FactorLayout& layout) {
  if (factors.size() != layout.factors())
    throw std::invalid_argument("concat: factor count does not match layout");
  for (std::size_t k = 0; k < factors.size(); ++k)
    if (factors[k].rank() != 2 || factors[k].cols() != layout.dims[k])
      throw std::invalid_argument("concat: factor " + std::to_string(k) + " has wrong width");
  return concat_cols(factors);
}

// ---------------------------------------------------------------------------
// ActNorm
// ---------------------------------------------------------------------------

ActNorm::ActNorm(std::size_t n) : scale_(Shape{n}, 1.0), shift_(Shape{n}, 0.0) {
  scale_.set_requires_grad(true);
  shift_.set_requires_grad(true);
}

void ActNorm::init_from_batch(const Tensor& batch) {
  if (initialized_) throw std::invalid_argument("ActNorm: already initialized");
  if (batch.rank() != 2 || batch.cols() != scale_.size())
    throw std::invalid_argument("ActNorm: batch width mismatch");
  const std::size_t b = batch.rows();
  if (b < 2) throw std::invalid_argument("ActNorm: need at least 2 samples to initialize");
  const std::size_t n = batch.cols();
  for (std::size_t j = 0; j < n; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < b; ++i) mean += batch.at(i, j);
    mean /= static_cast<double>(b);
    double var = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      const double d = batch.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(b);
    const double sd = std::max(std::sqrt(var), kStdFloor);
    scale_.at(j) = 1.0 / sd;
    shift_.at(j) = -mean / sd;
  }
  initialized_ = true;
}

void ActNorm::set_params(std::vector<double> scale, std::vector<double> shift) {
  if (scale.size() != scale_.size() || shift.size() != shift_.size())
    throw std::invalid_argument("ActNorm: parameter length mismatch");
  for (double s : scale)
    if (s == 0.0) throw std::invalid_argument("ActNorm: zero scale");
  std::copy(scale.begin(), scale.end(), scale_.data());
  std::copy(shift.begin(), shift.end(), shift_.data());
  initialized_ = true;
}

LayerOut ActNorm::forward(const Tensor& x, Tape* tape) const {
  if (!initialized_) throw std::invalid_argument("ActNorm: forward before initialization");
  Tensor y = shift_cols(scale_cols(x, scale_, tape), shift_, tape);
  Tensor ld = broadcast_scalar(reduce_sum_all(log_abs(scale_, tape), tape), x.rows(), tape);
  return {y, ld};
}

Tensor ActNorm::inverse(const Tensor& y) const {
  if (!initialized_) throw std::invalid_argument("ActNorm: inverse before initialization");
  const std::size_t m = y.rows(), n = y.cols();
  Tensor x(y.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) x.at(i, j) = (y.at(i, j) - shift_.at(j)) / scale_.at(j);
  return x;
}

// ---------------------------------------------------------------------------
// Subnet
// ---------------------------------------------------------------------------

Subnet Subnet::make(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t out,
                    double alpha, Rng& rng) {
  if (depth < 1) throw std::invalid_argument("Subnet: depth must be >= 1");
  Subnet net;
  net.alpha = alpha;
  std::size_t prev = in;
  for (std::size_t l = 0; l < depth; ++l) {
    Tensor w(Shape{prev, hidden});
    const double sd = std::sqrt(2.0 / static_cast<double>(prev));
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = sd * rng.normal();
    w.set_requires_grad(true);
    Tensor b(Shape{hidden}, 0.0);
    b.set_requires_grad(true);
    net.weights.push_back(w);
    net.biases.push_back(b);
    prev = hidden;
  }
  Tensor w(Shape{prev, out}, 0.0);  // zero output layer: coupling starts as identity
  w.set_requires_grad(true);
  Tensor b(Shape{out}, 0.0);
  b.set_requires_grad(true);
  net.weights.push_back(w);
  net.biases.push_back(b);
  return net;
}

Tensor Subnet::apply(const Tensor& x, Tape* tape) const {
  Tensor h = x;
  for (std::size_t l = 0; l + 1 < weights.size(); ++l)
    h = leaky_relu(affine(h, weights[l], biases[l], tape), alpha, tape);
  return affine(h, weights.back(), biases.back(), tape);
}

void Subnet::collect_params(std::vector<Tensor>& out) const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
}

// ---------------------------------------------------------------------------
// Coupling
// ---------------------------------------------------------------------------

Coupling::Coupling(std::size_t n, std::size_t hidden, std::size_t depth, double clamp_c,
                   double alpha, Rng& rng) {
  if (n % 2 != 0) throw std::invalid_argument("Coupling: input dimension must be even");
  half = n / 2;
  clamp = clamp_c;
  s1 = Subnet::make(half, hidden, depth, half, alpha, rng);
  t1 = Subnet::make(half, hidden, depth, half, alpha, rng);
  s2 = Subnet::make(half, hidden, depth, half, alpha, rng);
  t2 = Subnet::make(half, hidden, depth, half, alpha, rng);
}

Tensor Coupling::scale_from_raw(const Tensor& r, Tape* tape) const {
  return exp(scale(tanh(r, tape), clamp, tape), tape);
}

LayerOut Coupling::forward(const Tensor& x, Tape* tape) const {
  if (x.rank() != 2 || x.cols() != 2 * half)
    throw std::invalid_argument("Coupling: input width mismatch");
  Tensor h1 = slice_cols(x, 0, half, tape);
  Tensor h2 = slice_cols(x, half, half, tape);

  Tensor ls1 = scale(tanh(s1.apply(h2, tape), tape), clamp, tape);  // log s1
  Tensor y1 = add(mul(h1, exp(ls1, tape), tape), t1.apply(h2, tape), tape);
  Tensor ls2 = scale(tanh(s2.apply(y1, tape), tape), clamp, tape);  // log s2
  Tensor y2 = add(mul(h2, exp(ls2, tape), tape), t2.apply(y1, tape), tape);

  const Tensor parts[2] = {y1, y2};
  Tensor y = concat_cols(parts, tape);
  Tensor ld = add(row_sum(ls1, tape), row_sum(ls2, tape), tape);
  return {y, ld};
}

Tensor Coupling::inverse(const Tensor& y) const {
  if (y.rank() != 2 || y.cols() != 2 * half)
    throw std::invalid_argument("Coupling: input width mismatch");
  Tensor y1 = slice_cols(y, 0, half);
  Tensor y2 = slice_cols(y, half, half);

  // Second half first: h2 = (y2 - t2(y1)) / s2(y1), then h1 from h2.
  Tensor h2 = div(sub(y2, t2.apply(y1)), scale_from_raw(s2.apply(y1), nullptr));
  Tensor h1 = div(sub(y1, t1.apply(h2)), scale_from_raw(s1.apply(h2), nullptr));

  const Tensor parts[2] = {h1, h2};
  return concat_cols(parts);
}

void Coupling::collect_params(std::vector<Tensor>& out) const {
  s1.collect_params(out);
  t1.collect_params(out);
  s2.collect_params(out);
  t2.collect_params(out);
}

// ---------------------------------------------------------------------------
// Shuffle
// ---------------------------------------------------------------------------

Shuffle Shuffle::random(std::size_t n, Rng& rng) {
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  for (std::size_t i = n; i > 1; --i)
    std::swap(perm[i - 1], perm[rng.below(i)]);
  Shuffle s;
  s.set_perm(std::move(perm));
  return s;
}

Shuffle Shuffle::identity(std::size_t n) {
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  Shuffle s;
  s.set_perm(std::move(perm));
  return s;
}

void Shuffle::set_perm(std::vector<std::uint32_t> perm) {
  const std::size_t n = perm.size();
  std::vector<std::uint32_t> inv(n, 0);
  std::vector<bool> seen(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (perm[i] >= n || seen[perm[i]])
      throw std::invalid_argument("Shuffle: not a permutation");
    seen[perm[i]] = true;
    inv[perm[i]] = static_cast<std::uint32_t>(i);
  }
  perm_ = std::move(perm);
  inv_ = std::move(inv);
}

Tensor Shuffle::forward(const Tensor& x, Tape* tape) const {
  return permute_cols(x, perm_, tape);
}

Tensor Shuffle::inverse(const Tensor& y) const { return permute_cols(y, inv_); }

// ---------------------------------------------------------------------------
// InterpretationNetwork
// ---------------------------------------------------------------------------

void FlowConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("FlowConfig: depth must be >= 1");
  if (hidden < 1) throw std::invalid_argument("FlowConfig: hidden width must be >= 1");
  if (scale_clamp <= 0.0) throw std::invalid_argument("FlowConfig: scale clamp must be > 0");
}

InterpretationNetwork::InterpretationNetwork(FactorLayout layout, FlowConfig cfg, Rng& rng)
    : layout_(std::move(layout)), cfg_(cfg) {
  layout_.validate();
  cfg_.validate();
  const std::size_t n = layout_.total();
  if (n % 2 != 0)
    throw std::invalid_argument("InterpretationNetwork: total dimension must be even");
  blocks_.reserve(cfg_.n_flow);
  for (std::size_t i = 0; i < cfg_.n_flow; ++i) {
    Block b;
    b.shuffle = Shuffle::random(n, rng);
    b.coupling = Coupling(n, cfg_.hidden, cfg_.depth, cfg_.scale_clamp, cfg_.leaky_alpha, rng);
    b.actnorm = ActNorm(n);
    blocks_.push_back(std::move(b));
  }
}

FlowOut InterpretationNetwork::forward(const Tensor& z, Tape* tape) const {
  if (z.rank() != 2 || z.cols() != dim())
    throw std::invalid_argument("forward: input width does not match network dimension");
  Tensor x = z;
  Tensor ld(Shape{z.rows()}, 0.0);
  for (const Block& b : blocks_) {
    x = b.shuffle.forward(x, tape);
    LayerOut c = b.coupling.forward(x, tape);
    x = c.y;
    ld = add(ld, c.logdet, tape);
    LayerOut a = b.actnorm.forward(x, tape);
    x = a.y;
    ld = add(ld, a.logdet, tape);
  }
  return {x, ld};
}

Tensor InterpretationNetwork::inverse(const Tensor& code) const {
  if (code.rank() != 2 || code.cols() != dim())
    throw std::invalid_argument("inverse: input width does not match network dimension");
  Tensor x = code;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    x = it->actnorm.inverse(x);
    x = it->coupling.inverse(x);
    x = it->shuffle.inverse(x);
  }
  return x;
}

InverseOut InterpretationNetwork::inverse_with_logdet(const Tensor& code) const {
  if (code.rank() != 2 || code.cols() != dim())
    throw std::invalid_argument("inverse: input width does not match network dimension");
  Tensor x = code;
  Tensor ld(Shape{code.rows()}, 0.0);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    x = it->actnorm.inverse(x);
    {
      // Inverse-direction log-det of the actnorm: -sum log|scale|.
      double s = 0.0;
      const Tensor& sc = it->actnorm.scale_param();
      for (std::size_t j = 0; j < sc.size(); ++j) s -= std::log(std::abs(sc.at(j)));
      for (std::size_t i = 0; i < ld.size(); ++i) ld.at(i) += s;
    }
    {
      // Coupling inverse log-det: -(sum log s1 + sum log s2) at the preimage.
      Tensor pre = it->coupling.inverse(x);
      LayerOut fwd = it->coupling.forward(pre);
      for (std::size_t i = 0; i < ld.size(); ++i) ld.at(i) -= fwd.logdet.at(i);
      x = pre;
    }
    x = it->shuffle.inverse(x);
  }
  return {x, ld};
}

void InterpretationNetwork::init_actnorm(const Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != dim())
    throw std::invalid_argument("init_actnorm: batch width mismatch");
  Tensor x = batch;
  for (Block& b : blocks_) {
    x = b.shuffle.forward(x);
    x = b.coupling.forward(x).y;
    if (!b.actnorm.initialized()) b.actnorm.init_from_batch(x);
    x = b.actnorm.forward(x).y;
  }
}

bool InterpretationNetwork::actnorm_ready() const {
  for (const Block& b : blocks_)
    if (!b.actnorm.initialized()) return false;
  return true;
}

void InterpretationNetwork::set_actnorm_identity() {
  for (Block& b : blocks_) b.actnorm.mark_initialized(true);
}

std::vector<Tensor> InterpretationNetwork::parameters() const {
  std::vector<Tensor> out;
  for (const Block& b : blocks_) {
    b.coupling.collect_params(out);
    out.push_back(b.actnorm.scale_param());
    out.push_back(b.actnorm.shift_param());
  }
  return out;
}

}  // namespace iin
