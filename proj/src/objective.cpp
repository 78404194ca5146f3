#include "iin/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "iin/errors.hpp"

namespace iin {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kLog2 = 0.6931471805599453;

double mean_of(const Tensor& per_sample) {
  double acc = 0.0;
  for (std::size_t i = 0; i < per_sample.size(); ++i) acc += per_sample.at(i);
  return acc / static_cast<double>(per_sample.size());
}

// Column ranges of the factors in the given set (F itself, or its complement).
std::vector<std::pair<std::size_t, std::size_t>> factor_ranges(const FactorLayout& layout,
                                                               std::size_t f, bool complement) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t k = 0; k < layout.factors(); ++k) {
    if ((k == f) == complement) continue;
    out.emplace_back(layout.offset(k), layout.dims[k]);
  }
  return out;
}

}  // namespace

void PairBatch::validate(const FactorLayout& layout) const {
  if (za.rank() != 2 || zb.rank() != 2 || !za.same_shape(zb))
    throw std::invalid_argument("PairBatch: za and zb must be rank-2 with identical shape");
  if (za.cols() != layout.total())
    throw std::invalid_argument("PairBatch: width does not match layout total");
  if (factor == 0) throw std::invalid_argument("PairBatch: residual factor has no pairs");
  if (factor >= layout.factors())
    throw std::invalid_argument("PairBatch: factor " + std::to_string(factor) +
                                " outside layout with K=" + std::to_string(layout.semantic()));
}

void CorrelationConfig::validate() const {
  if (!(sigma_ab > 0.0 && sigma_ab < 1.0))
    throw std::invalid_argument("CorrelationConfig: sigma_ab must lie in (0,1)");
}

PairLossTerms pair_loss_terms(const InterpretationNetwork& net, const PairBatch& batch,
                              double sigma_ab, Tape* tape) {
  batch.validate(net.layout());
  CorrelationConfig{sigma_ab}.validate();

  const std::size_t b = batch.za.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  const double cond_scale = 1.0 / (1.0 - sigma_ab * sigma_ab);

  FlowOut fa = net.forward(batch.za, tape);
  FlowOut fb = net.forward(batch.zb, tape);

  // za: quadratic over every factor, i.e. the full vector.
  Tensor quad_a = row_sum(square(fa.code, tape), tape);

  // zb: quadratic on the uncorrelated factors, conditional term on the rest.
  const bool differ = batch.mode == PairMode::differ;
  const auto plain = factor_ranges(net.layout(), batch.factor, /*complement=*/!differ);
  const auto correlated = factor_ranges(net.layout(), batch.factor, /*complement=*/differ);

  Tensor quad_b(Shape{b}, 0.0);
  for (const auto& [off, w] : plain)
    quad_b = add(quad_b, row_sum(square(slice_cols(fb.code, off, w, tape), tape), tape), tape);

  Tensor cond(Shape{b}, 0.0);
  for (const auto& [off, w] : correlated) {
    Tensor diff = sub(slice_cols(fb.code, off, w, tape),
                      scale(slice_cols(fa.code, off, w, tape), sigma_ab, tape), tape);
    cond = add(cond, row_sum(square(diff, tape), tape), tape);
  }
  cond = scale(cond, cond_scale, tape);

  Tensor per_sample = add(sub(quad_a, fa.logdet, tape), sub(quad_b, fb.logdet, tape), tape);
  per_sample = add(per_sample, cond, tape);
  Tensor total = scale(reduce_sum_all(per_sample, tape), inv_b, tape);

  PairLossTerms terms;
  terms.total = total;
  terms.quad_a = mean_of(quad_a);
  terms.logdet_a = mean_of(fa.logdet);
  terms.quad_b = mean_of(quad_b);
  terms.logdet_b = mean_of(fb.logdet);
  terms.cond = mean_of(cond);
  return terms;
}

Tensor pair_loss(const InterpretationNetwork& net, const PairBatch& batch, double sigma_ab,
                 Tape* tape) {
  return pair_loss_terms(net, batch, sigma_ab, tape).total;
}

Tensor objective(const InterpretationNetwork& net, const std::vector<PairBatch>& batches,
                 double sigma_ab, Tape* tape) {
  const std::size_t k = net.layout().semantic();
  if (batches.empty()) throw std::invalid_argument("objective: no batches");
  std::vector<bool> seen(k + 1, false);
  for (const PairBatch& pb : batches) {
    pb.validate(net.layout());
    if (seen[pb.factor])
      throw std::invalid_argument("objective: duplicate batch for factor " +
                                  std::to_string(pb.factor));
    seen[pb.factor] = true;
  }
  for (std::size_t f = 1; f <= k; ++f)
    if (!seen[f])
      throw std::invalid_argument("objective: missing batch for factor " + std::to_string(f));

  Tensor total = Tensor::scalar(0.0);
  for (const PairBatch& pb : batches) total = add(total, pair_loss(net, pb, sigma_ab, tape), tape);
  return total;
}

namespace {

Tensor unsup_core(const InterpretationNetwork& net, const Tensor& z, double quad_coeff,
                  Tape* tape) {
  if (z.rank() != 2 || z.cols() != net.dim())
    throw std::invalid_argument("unsup_loss: input width does not match network");
  FlowOut f = net.forward(z, tape);
  Tensor quad = scale(row_sum(square(f.code, tape), tape), quad_coeff, tape);
  Tensor per_sample = sub(quad, f.logdet, tape);
  return scale(reduce_sum_all(per_sample, tape), 1.0 / static_cast<double>(z.rows()), tape);
}

}  // namespace

Tensor unsup_loss(const InterpretationNetwork& net, const Tensor& z, Tape* tape) {
  return unsup_core(net, z, 1.0, tape);
}

Tensor unsup_train_loss(const InterpretationNetwork& net, const Tensor& z, Tape* tape) {
  return unsup_core(net, z, 0.5, tape);
}

UnsupLossTerms unsup_train_terms(const InterpretationNetwork& net, const Tensor& z, Tape* tape) {
  if (z.rank() != 2 || z.cols() != net.dim())
    throw std::invalid_argument("unsup_loss: input width does not match network");
  FlowOut f = net.forward(z, tape);
  Tensor quad = row_sum(square(f.code, tape), tape);
  Tensor per_sample = sub(scale(quad, 0.5, tape), f.logdet, tape);
  UnsupLossTerms terms;
  terms.total = scale(reduce_sum_all(per_sample, tape), 1.0 / static_cast<double>(z.rows()), tape);
  terms.quad = mean_of(quad);
  terms.logdet = mean_of(f.logdet);
  return terms;
}

double nll_bits_from_terms(double quad, double logdet, std::size_t n) {
  const double nd = static_cast<double>(n);
  return (0.5 * quad + 0.5 * nd * kLog2Pi - logdet) / (nd * kLog2);
}

double nll_bits(const InterpretationNetwork& net, const Tensor& z) {
  if (z.rank() != 2 || z.cols() != net.dim())
    throw std::invalid_argument("nll_bits: input width does not match network");
  FlowOut f = net.forward(z);
  double quad = 0.0, ld = 0.0;
  const std::size_t b = z.rows();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) quad += f.code.at(i, j) * f.code.at(i, j);
    ld += f.logdet.at(i);
  }
  quad /= static_cast<double>(b);
  ld /= static_cast<double>(b);
  return nll_bits_from_terms(quad, ld, net.dim());
}

}  // namespace iin
