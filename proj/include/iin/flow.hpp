#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "iin/rng.hpp"
#include "iin/tensor.hpp"

namespace iin {

// Partition of the N-dimensional code into a residual factor (index 0) and K
// semantic factors. Widths must sum to the code dimension.
struct FactorLayout {
  std::vector<std::size_t> dims;

  FactorLayout() = default;
  explicit FactorLayout(std::vector<std::size_t> d) : dims(std::move(d)) { validate(); }

  std::size_t total() const;
  std::size_t factors() const { return dims.size(); }       // K + 1
  std::size_t semantic() const { return dims.size() - 1; }  // K
  std::size_t offset(std::size_t k) const;
  void validate() const;

  static FactorLayout parse(const std::string& text);  // "8,4,4"
  std::string str() const;

  bool operator==(const FactorLayout&) const = default;
};

std::vector<Tensor> split(const Tensor& code, const FactorLayout& layout);
Tensor concat(const std::vector<Tensor>& factors, const FactorLayout& layout);

struct LayerOut {
  Tensor y;
  Tensor logdet;  // per-sample, shape {B}
};

// Per-channel learnable affine y = x * scale + shift with data-dependent
// initialization to zero mean / unit variance on the first batch.
class ActNorm {
 public:
  ActNorm() = default;
  explicit ActNorm(std::size_t n);

  // shift = -mean/std', scale = 1/std' with std' = max(population std, 1e-6).
  void init_from_batch(const Tensor& batch);
  void set_params(std::vector<double> scale, std::vector<double> shift);
  bool initialized() const { return initialized_; }

  LayerOut forward(const Tensor& x, Tape* tape = nullptr) const;
  Tensor inverse(const Tensor& y) const;

  Tensor& scale_param() { return scale_; }
  Tensor& shift_param() { return shift_; }
  const Tensor& scale_param() const { return scale_; }
  const Tensor& shift_param() const { return shift_; }
  void mark_initialized(bool b) { initialized_ = b; }

  static constexpr double kStdFloor = 1e-6;

 private:
  Tensor scale_, shift_;
  bool initialized_ = false;
};

// Fully connected subnetwork: depth hidden layers of the given width with
// leaky-relu activations and a linear output layer. Output layers start at
// zero so a fresh coupling layer is the identity map.
struct Subnet {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  double alpha = 0.01;

  static Subnet make(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t out,
                     double alpha, Rng& rng);
  Tensor apply(const Tensor& x, Tape* tape = nullptr) const;
  void collect_params(std::vector<Tensor>& out) const;
};

// Affine coupling over an even split (h1, h2):
//   y1 = h1 * s1(h2) + t1(h2)
//   y2 = h2 * s2(y1) + t2(y1)
// Raw subnet outputs r are mapped to strictly positive bounded scales
// s = exp(clamp * tanh(r)), so the per-sample log-det is the sum of
// clamp * tanh(r) over both halves.
class Coupling {
 public:
  Coupling() = default;
  Coupling(std::size_t n, std::size_t hidden, std::size_t depth, double clamp, double alpha,
           Rng& rng);

  LayerOut forward(const Tensor& x, Tape* tape = nullptr) const;
  Tensor inverse(const Tensor& y) const;

  Subnet s1, t1, s2, t2;
  std::size_t half = 0;
  double clamp = 1.5;

  void collect_params(std::vector<Tensor>& out) const;

 private:
  Tensor scale_from_raw(const Tensor& r, Tape* tape) const;  // exp(clamp * tanh(r))
};

// Fixed random permutation of the channels.
class Shuffle {
 public:
  Shuffle() = default;
  static Shuffle random(std::size_t n, Rng& rng);
  static Shuffle identity(std::size_t n);
  void set_perm(std::vector<std::uint32_t> perm);

  Tensor forward(const Tensor& x, Tape* tape = nullptr) const;
  Tensor inverse(const Tensor& y) const;

  const std::vector<std::uint32_t>& perm() const { return perm_; }

 private:
  std::vector<std::uint32_t> perm_, inv_;
};

struct FlowConfig {
  std::size_t n_flow = 6;
  std::size_t hidden = 512;
  std::size_t depth = 2;
  double scale_clamp = 1.5;
  double leaky_alpha = 0.01;

  void validate() const;
  bool operator==(const FlowConfig&) const = default;
};

struct Block {
  Shuffle shuffle;
  Coupling coupling;
  ActNorm actnorm;
};

struct FlowOut {
  Tensor code;    // z-tilde, shape {B, N}
  Tensor logdet;  // shape {B}
};

struct InverseOut {
  Tensor z;
  Tensor logdet;  // analytic log-det of the inverse direction, shape {B}
};

// The invertible interpretation network: n_flow blocks of
// shuffle -> coupling -> actnorm, then an implicit split into factors.
class InterpretationNetwork {
 public:
  InterpretationNetwork() = default;
  InterpretationNetwork(FactorLayout layout, FlowConfig cfg, Rng& rng);

  FlowOut forward(const Tensor& z, Tape* tape = nullptr) const;
  Tensor inverse(const Tensor& code) const;
  InverseOut inverse_with_logdet(const Tensor& code) const;

  // Runs the first batch through the stack, initializing each uninitialized
  // ActNorm from the activations that reach it.
  void init_actnorm(const Tensor& batch);
  bool actnorm_ready() const;
  // Marks every ActNorm initialized with its current (identity) parameters.
  void set_actnorm_identity();

  std::vector<Tensor> parameters() const;  // stable order, shared handles

  const FactorLayout& layout() const { return layout_; }
  const FlowConfig& config() const { return cfg_; }
  std::size_t dim() const { return layout_.total(); }
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  FactorLayout layout_;
  FlowConfig cfg_;
  std::vector<Block> blocks_;
};

}  // namespace iin
