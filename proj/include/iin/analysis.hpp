#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iin/concepts.hpp"
#include "iin/flow.hpp"
#include "iin/tensor.hpp"

namespace iin {

// ---------------------------------------------------------------------------
// Factor surgery
// ---------------------------------------------------------------------------

// z* = T^-1 of the source code with factor k replaced by the donor's.
Tensor swap_factor(const InterpretationNetwork& net, const Tensor& z_src, const Tensor& z_donor,
                   std::size_t k);

// z(t) = T^-1((1-t) T(z1) + t T(z2)) for `steps` uniform t in [0,1],
// endpoints included. Needs steps >= 2.
std::vector<Tensor> interpolate(const InterpretationNetwork& net, const Tensor& z1,
                                const Tensor& z2, std::size_t steps);

// mean(codes_without) - mean(codes_with), on factorized codes.
Tensor attribute_vector(const std::vector<Tensor>& codes_with,
                        const std::vector<Tensor>& codes_without);

// Walk z-tilde + alpha * direction (optionally masked to one factor's
// coordinates) and map back. z is a latent, not a code.
Tensor apply_attribute(const InterpretationNetwork& net, const Tensor& z, const Tensor& direction,
                       double alpha, std::optional<std::size_t> factor = std::nullopt);

// Inverse-mapped standard-normal draws, deterministic given the seed.
Tensor sample(const InterpretationNetwork& net, std::size_t count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ornstein-Uhlenbeck walks and response analysis
// ---------------------------------------------------------------------------

struct OUConfig {
  double gamma = 0.05;
  double sigma = 0.0;
  std::size_t steps = 100;
  // literal applies x_{t+1} = -gamma x_t + sigma W_t; otherwise the
  // mean-reverting reading x_{t+1} = (1-gamma) x_t + sigma W_t.
  bool literal = false;

  // Mean-reverting defaults with unit stationary variance.
  static OUConfig defaults(std::size_t steps = 100, double gamma = 0.05);
  void validate() const;
};

// Sequence of n iterates starting from (but not including) the given state.
std::vector<Tensor> ou_walk(const Tensor& start, const OUConfig& cfg, std::uint64_t seed);

// Deterministic map from latent to class logits.
class HeadOracle {
 public:
  virtual ~HeadOracle() = default;
  virtual std::vector<double> logits(const Tensor& z_row) const = 0;
  virtual std::size_t classes() const = 0;
};

// Synthetic-world head: a fixed seeded linear readout of one ground-truth
// factor, reached through the world's analytic inverse mixing.
class WorldLinearHead : public HeadOracle {
 public:
  WorldLinearHead(const SyntheticWorld& world, std::size_t factor, std::size_t classes,
                  std::uint64_t seed);
  std::vector<double> logits(const Tensor& z_row) const override;
  std::size_t classes() const override { return classes_; }

 private:
  const SyntheticWorld* world_;
  std::size_t factor_;
  std::size_t classes_;
  Tensor weights_;  // {factor_width, classes}
};

struct ResponseReport {
  int base_prediction = 0;
  std::vector<int> predictions;                  // per step
  std::vector<std::vector<double>> logits;       // step x classes
  std::vector<std::vector<double>> log_softmax;  // step x classes
  double change_rate = 0.0;                      // fraction of steps whose argmax leaves base
  std::vector<double> logit_variance;            // per class, over steps
};

// Runs an OU walk on factor k of T(z), re-embeds every step through T^-1 and
// applies the head.
ResponseReport response_analysis(const InterpretationNetwork& net, const HeadOracle& head,
                                 const Tensor& z, std::size_t k, const OUConfig& cfg,
                                 std::uint64_t seed);

void write_response_csv(const std::string& path, const ResponseReport& report);
void write_response_summary_csv(const std::string& path, const ResponseReport& report);

// ---------------------------------------------------------------------------
// PCA projections for reporting
// ---------------------------------------------------------------------------

struct PcaResult {
  Tensor projections;                    // {B, out_dims}
  Tensor components;                     // {out_dims, N}
  std::vector<double> explained_ratio;   // all N ratios, descending
};

PcaResult pca(const Tensor& data, std::size_t out_dims);
Tensor pca_embed(const Tensor& data, std::size_t out_dims);

}  // namespace iin
