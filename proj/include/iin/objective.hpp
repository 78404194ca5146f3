#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "iin/flow.hpp"
#include "iin/tensor.hpp"

namespace iin {

enum class PairMode : std::uint8_t { share = 0, differ = 1 };

// A batch of latent pairs tagged with the semantic factor they exercise.
// In share mode the pair agrees in factor F; in differ mode it agrees in
// everything except factor F.
struct PairBatch {
  Tensor za;
  Tensor zb;
  std::size_t factor = 1;  // F in 1..K; the residual factor has no pairs
  PairMode mode = PairMode::share;

  void validate(const FactorLayout& layout) const;
};

struct CorrelationConfig {
  double sigma_ab = 0.9;
  void validate() const;
};

// Per-batch means of the pieces of the pair loss, for metric logging.
struct PairLossTerms {
  Tensor total;      // scalar, on tape
  double quad_a = 0;    // mean ||T(za)||^2
  double logdet_a = 0;  // mean log|T'(za)|
  double quad_b = 0;    // mean of the unconditioned quadratic on zb
  double logdet_b = 0;  // mean log|T'(zb)|
  double cond = 0;      // mean conditional quadratic / (1 - sigma^2)
};

// Mean over the batch of
//   sum_k ||T(za)_k||^2 - log|T'(za)|
//   + sum_{k != F} ||T(zb)_k||^2 - log|T'(zb)|
//   + ||T(zb)_F - sigma * T(za)_F||^2 / (1 - sigma^2).
// In differ mode the roles of factor F and its complement swap.
PairLossTerms pair_loss_terms(const InterpretationNetwork& net, const PairBatch& batch,
                              double sigma_ab, Tape* tape = nullptr);
Tensor pair_loss(const InterpretationNetwork& net, const PairBatch& batch, double sigma_ab,
                 Tape* tape = nullptr);

// Sum of pair losses over exactly one batch per semantic factor 1..K.
Tensor objective(const InterpretationNetwork& net, const std::vector<PairBatch>& batches,
                 double sigma_ab, Tape* tape = nullptr);

// Mean over the batch of ||T(z)||^2 - log|T'(z)|.
Tensor unsup_loss(const InterpretationNetwork& net, const Tensor& z, Tape* tape = nullptr);

// Calibrated Gaussian negative log-likelihood, mean of
// 0.5 * ||T(z)||^2 - log|T'(z)|; the objective minimized by unsupervised
// training so the learned code has unit variance under the prior.
Tensor unsup_train_loss(const InterpretationNetwork& net, const Tensor& z, Tape* tape = nullptr);

struct UnsupLossTerms {
  Tensor total;      // scalar, on tape (calibrated objective)
  double quad = 0;   // mean ||T(z)||^2
  double logdet = 0; // mean log|T'(z)|
};

UnsupLossTerms unsup_train_terms(const InterpretationNetwork& net, const Tensor& z,
                                 Tape* tape = nullptr);

// Batch-mean bits per dimension under the standard-normal prior:
// (0.5 ||T(z)||^2 + (N/2) log 2pi - log|T'(z)|) / (N log 2).
double nll_bits(const InterpretationNetwork& net, const Tensor& z);
double nll_bits_from_terms(double quad, double logdet, std::size_t n);

}  // namespace iin
