#include "iin/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "iin/errors.hpp"
#include "iin/linalg.hpp"

namespace iin {

namespace {

Tensor as_row(const Tensor& z) {
  if (z.rank() == 1) return Tensor(Shape{1, z.size()}, std::vector<double>(z.data(), z.data() + z.size()));
  if (z.rank() == 2 && z.rows() == 1) return z;
  throw std::invalid_argument("expected a single latent vector");
}

Tensor row_to_vector(const Tensor& row) {
  return Tensor(Shape{row.size()}, std::vector<double>(row.data(), row.data() + row.size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Factor surgery
// ---------------------------------------------------------------------------

Tensor swap_factor(const InterpretationNetwork& net, const Tensor& z_src, const Tensor& z_donor,
                   std::size_t k) {
  const FactorLayout& layout = net.layout();
  if (k >= layout.factors())
    throw std::invalid_argument("swap_factor: factor index out of range");
  Tensor code_src = net.forward(as_row(z_src)).code;
  Tensor code_donor = net.forward(as_row(z_donor)).code;
  const std::size_t off = layout.offset(k), w = layout.dims[k];
  for (std::size_t j = 0; j < w; ++j) code_src.at(0, off + j) = code_donor.at(0, off + j);
  return row_to_vector(net.inverse(code_src));
}

std::vector<Tensor> interpolate(const InterpretationNetwork& net, const Tensor& z1,
                                const Tensor& z2, std::size_t steps) {
  if (steps < 2) throw std::invalid_argument("interpolate: need at least 2 steps");
  Tensor c1 = net.forward(as_row(z1)).code;
  Tensor c2 = net.forward(as_row(z2)).code;
  const std::size_t n = c1.cols();
  std::vector<Tensor> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps - 1);
    Tensor blend(Shape{1, n});
    for (std::size_t j = 0; j < n; ++j)
      blend.at(0, j) = (1.0 - t) * c1.at(0, j) + t * c2.at(0, j);
    out.push_back(row_to_vector(net.inverse(blend)));
  }
  return out;
}

Tensor attribute_vector(const std::vector<Tensor>& codes_with,
                        const std::vector<Tensor>& codes_without) {
  if (codes_with.empty() || codes_without.empty())
    throw std::invalid_argument("attribute_vector: both sets must be non-empty");
  const std::size_t n = codes_with.front().size();
  auto mean = [n](const std::vector<Tensor>& set) {
    std::vector<double> m(n, 0.0);
    for (const Tensor& c : set) {
      if (c.size() != n) throw std::invalid_argument("attribute_vector: inconsistent widths");
      for (std::size_t j = 0; j < n; ++j) m[j] += c.at(j);
    }
    for (double& v : m) v /= static_cast<double>(set.size());
    return m;
  };
  std::vector<double> mw = mean(codes_with);
  std::vector<double> mo = mean(codes_without);
  std::vector<double> dir(n);
  for (std::size_t j = 0; j < n; ++j) dir[j] = mo[j] - mw[j];
  return Tensor(Shape{n}, std::move(dir));
}

Tensor apply_attribute(const InterpretationNetwork& net, const Tensor& z, const Tensor& direction,
                       double alpha, std::optional<std::size_t> factor) {
  if (direction.size() != net.dim())
    throw std::invalid_argument("apply_attribute: direction width mismatch");
  Tensor code = net.forward(as_row(z)).code;
  std::size_t lo = 0, hi = net.dim();
  if (factor) {
    lo = net.layout().offset(*factor);
    hi = lo + net.layout().dims[*factor];
  }
  for (std::size_t j = lo; j < hi; ++j) code.at(0, j) += alpha * direction.at(j);
  return row_to_vector(net.inverse(code));
}

Tensor sample(const InterpretationNetwork& net, std::size_t count, std::uint64_t seed) {
  Rng rng(Rng::mix(seed, 0x73616d70ULL));
  Tensor codes(Shape{count, net.dim()});
  for (std::size_t i = 0; i < codes.size(); ++i) codes.data()[i] = rng.normal();
  return net.inverse(codes);
}

// ---------------------------------------------------------------------------
// OU walks
// ---------------------------------------------------------------------------

OUConfig OUConfig::defaults(std::size_t steps, double gamma) {
  OUConfig cfg;
  cfg.gamma = gamma;
  cfg.sigma = std::sqrt(1.0 - (1.0 - gamma) * (1.0 - gamma));
  cfg.steps = steps;
  cfg.literal = false;
  return cfg;
}

void OUConfig::validate() const {
  if (sigma < 0.0) throw std::invalid_argument("OUConfig: sigma must be >= 0");
  if (literal) {
    if (!(std::abs(gamma) < 1.0))
      throw std::invalid_argument("OUConfig: literal mode needs |gamma| < 1 for stationarity");
  } else {
    // gamma = 0 freezes the walk (useful as a null perturbation); gamma >= 1
    // would overshoot the mean every step.
    if (!(gamma >= 0.0 && gamma < 1.0))
      throw std::invalid_argument("OUConfig: mean-reverting mode needs gamma in [0,1)");
  }
}

std::vector<Tensor> ou_walk(const Tensor& start, const OUConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::mix(seed, 0x6f757761ULL));
  const std::size_t d = start.size();
  const double coef = cfg.literal ? -cfg.gamma : (1.0 - cfg.gamma);
  std::vector<double> state(start.data(), start.data() + d);
  std::vector<Tensor> out;
  out.reserve(cfg.steps);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    for (std::size_t j = 0; j < d; ++j) state[j] = coef * state[j] + cfg.sigma * rng.normal();
    out.push_back(Tensor(Shape{d}, state));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Response analysis
// ---------------------------------------------------------------------------

WorldLinearHead::WorldLinearHead(const SyntheticWorld& world, std::size_t factor,
                                 std::size_t classes, std::uint64_t seed)
    : world_(&world), factor_(factor), classes_(classes) {
  if (factor >= world.dims().factors())
    throw std::invalid_argument("WorldLinearHead: factor index out of range");
  if (classes < 2) throw std::invalid_argument("WorldLinearHead: need at least 2 classes");
  const std::size_t w = world.dims().dims[factor];
  Rng rng(Rng::mix(seed, 0x68656164ULL));
  weights_ = Tensor(Shape{w, classes});
  for (std::size_t i = 0; i < weights_.size(); ++i) weights_.data()[i] = rng.normal();
}

std::vector<double> WorldLinearHead::logits(const Tensor& z_row) const {
  Tensor g = world_->unmix(as_row(z_row));
  const std::size_t off = world_->dims().offset(factor_);
  const std::size_t w = world_->dims().dims[factor_];
  std::vector<double> out(classes_, 0.0);
  for (std::size_t c = 0; c < classes_; ++c)
    for (std::size_t j = 0; j < w; ++j) out[c] += g.at(0, off + j) * weights_.at(j, c);
  return out;
}

namespace {

std::vector<double> log_softmax_of(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  const double lse = m + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

int argmax_of(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

ResponseReport response_analysis(const InterpretationNetwork& net, const HeadOracle& head,
                                 const Tensor& z, std::size_t k, const OUConfig& cfg,
                                 std::uint64_t seed) {
  const FactorLayout& layout = net.layout();
  if (k >= layout.factors())
    throw std::invalid_argument("response_analysis: factor index out of range");
  Tensor code = net.forward(as_row(z)).code;
  const std::size_t off = layout.offset(k), w = layout.dims[k];

  Tensor factor_start(Shape{w});
  for (std::size_t j = 0; j < w; ++j) factor_start.at(j) = code.at(0, off + j);
  const std::vector<Tensor> walk = ou_walk(factor_start, cfg, seed);

  ResponseReport report;
  report.base_prediction = argmax_of(head.logits(as_row(z)));
  report.logit_variance.assign(head.classes(), 0.0);
  std::vector<double> logit_mean(head.classes(), 0.0);

  std::size_t changed = 0;
  for (const Tensor& step : walk) {
    Tensor modified = code.clone();
    for (std::size_t j = 0; j < w; ++j) modified.at(0, off + j) = step.at(j);
    Tensor z_step = net.inverse(modified);
    const std::vector<double> lg = head.logits(z_step);
    const int pred = argmax_of(lg);
    if (pred != report.base_prediction) ++changed;
    report.predictions.push_back(pred);
    report.log_softmax.push_back(log_softmax_of(lg));
    for (std::size_t c = 0; c < lg.size(); ++c) logit_mean[c] += lg[c];
    report.logits.push_back(lg);
  }
  const double n = static_cast<double>(walk.size());
  report.change_rate = changed / n;
  for (double& m : logit_mean) m /= n;
  for (const auto& lg : report.logits)
    for (std::size_t c = 0; c < lg.size(); ++c) {
      const double d = lg[c] - logit_mean[c];
      report.logit_variance[c] += d * d / n;
    }
  return report;
}

void write_response_csv(const std::string& path, const ResponseReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  const std::size_t classes = report.logit_variance.size();
  out << "step,prediction,max_log_softmax";
  for (std::size_t c = 0; c < classes; ++c) out << ",logit_" << c;
  out << "\n";
  char buf[32];
  for (std::size_t s = 0; s < report.predictions.size(); ++s) {
    const double best = *std::max_element(report.log_softmax[s].begin(),
                                          report.log_softmax[s].end());
    std::snprintf(buf, sizeof(buf), "%.17g", best);
    out << s << "," << report.predictions[s] << "," << buf;
    for (double v : report.logits[s]) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << "," << buf;
    }
    out << "\n";
  }
}

void write_response_summary_csv(const std::string& path, const ResponseReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  char buf[32];
  out << "base_prediction,change_rate";
  for (std::size_t c = 0; c < report.logit_variance.size(); ++c) out << ",logit_var_" << c;
  out << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", report.change_rate);
  out << report.base_prediction << "," << buf;
  for (double v : report.logit_variance) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << "," << buf;
  }
  out << "\n";
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

PcaResult pca(const Tensor& data, std::size_t out_dims) {
  if (data.rank() != 2) throw std::invalid_argument("pca: rank-2 data expected");
  if (out_dims < 1 || out_dims > 2) throw std::invalid_argument("pca: out_dims must be 1 or 2");
  const std::size_t b = data.rows(), n = data.cols();
  if (b <= out_dims) throw std::invalid_argument("pca: need more samples than output dims");

  std::vector<double> mean(n, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < n; ++j) mean[j] += data.at(i, j);
  for (double& m : mean) m /= static_cast<double>(b);

  Tensor cov(Shape{n, n});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t p = 0; p < n; ++p) {
      const double dp = data.at(i, p) - mean[p];
      for (std::size_t q = p; q < n; ++q)
        cov.at(p, q) += dp * (data.at(i, q) - mean[q]);
    }
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = p; q < n; ++q) {
      const double v = cov.at(p, q) / static_cast<double>(b - 1) + (p == q ? 1e-12 : 0.0);
      cov.at(p, q) = v;
      cov.at(q, p) = v;
    }

  SymEig eig = sym_eig(cov);
  double trace = 0.0;
  for (double v : eig.values) trace += std::max(v, 0.0);

  PcaResult out;
  out.explained_ratio.reserve(eig.values.size());
  for (double v : eig.values)
    out.explained_ratio.push_back(trace > 0.0 ? std::max(v, 0.0) / trace : 0.0);

  out.components = Tensor(Shape{out_dims, n});
  for (std::size_t d = 0; d < out_dims; ++d) {
    // Deterministic sign: largest-magnitude loading is positive.
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (std::abs(eig.vectors.at(j, d)) > std::abs(eig.vectors.at(best, d))) best = j;
    const double flip = eig.vectors.at(best, d) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < n; ++j) out.components.at(d, j) = flip * eig.vectors.at(j, d);
  }

  out.projections = Tensor(Shape{b, out_dims});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t d = 0; d < out_dims; ++d) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        acc += (data.at(i, j) - mean[j]) * out.components.at(d, j);
      out.projections.at(i, d) = acc;
    }
  return out;
}

Tensor pca_embed(const Tensor& data, std::size_t out_dims) { return pca(data, out_dims).projections; }

}  // namespace iin
