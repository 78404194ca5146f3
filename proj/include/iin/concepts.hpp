#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "iin/flow.hpp"
#include "iin/objective.hpp"
#include "iin/rng.hpp"
#include "iin/tensor.hpp"

namespace iin {

// ---------------------------------------------------------------------------
// Concept scores and dimensionality allocation
// ---------------------------------------------------------------------------

// Streaming accumulator of the per-component pair correlation score
//   s = sum_i corr(za_i, zb_i),
// using unbiased (n-1) sample statistics. Components that are constant on
// either side score 0; bitwise-identical (or bitwise-negated) streams score
// exactly +1 (or -1) per component.
class ScoreAccumulator {
 public:
  explicit ScoreAccumulator(std::size_t n);
  void add(const Tensor& za, const Tensor& zb);  // rank-2 row batches
  void add_pair(const double* a, const double* b);
  std::size_t pairs() const { return count_; }
  std::size_t dim() const { return identical_.size(); }
  double score() const;  // throws if fewer than 2 pairs

  static constexpr double kVarEps = 1e-12;

 private:
  std::size_t count_ = 0;
  std::vector<double> mean_a_, mean_b_, m2_a_, m2_b_, co_;
  std::vector<bool> identical_, negated_;
};

double score_concept(const std::vector<PairBatch>& batches);
double score_concept(const Tensor& za, const Tensor& zb);

// Relative scores s_F for F = 1..K plus s_0 = N for the residual factor.
struct ConceptScores {
  std::size_t total_dim = 0;           // N
  std::vector<double> semantic;        // s_1..s_K
  double residual() const { return static_cast<double>(total_dim); }
  std::vector<double> all() const;     // s_0, s_1, ..., s_K
};

// Softmax allocation N_F = floor(exp s_F / sum_k exp s_k * N), computed with
// max subtraction. Flooring leftovers go to the residual factor; any semantic
// factor floored to zero is bumped to one dim taken from the residual.
FactorLayout allocate_dims(const ConceptScores& scores, std::size_t n);

// ---------------------------------------------------------------------------
// Synthetic ground-truth world
// ---------------------------------------------------------------------------

struct WorldConfig {
  std::uint64_t seed = 0;
  FactorLayout dims;        // ground-truth factor widths, index 0 = residual
  double sigma_true = 0.9;  // pair correlation used for generation

  void validate() const;
};

// Verification scaffold: ground-truth factors g with known widths are pushed
// through a fixed, seeded, invertible nonlinear mixing (orthogonal maps
// alternating with x + a*tanh(x)) to produce latents z. Pairs correlate the
// chosen factor with coefficient sigma_true and draw everything else fresh.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(WorldConfig cfg);

  Tensor mix(const Tensor& g) const;
  Tensor unmix(const Tensor& z) const;

  PairBatch sample_pairs(std::size_t factor, std::size_t batch, std::uint64_t counter) const;
  Tensor sample_ground_truth(std::size_t batch, std::uint64_t counter) const;
  Tensor sample_latents(std::size_t batch, std::uint64_t counter) const;

  const WorldConfig& config() const { return cfg_; }
  const FactorLayout& dims() const { return cfg_.dims; }
  std::size_t dim() const { return cfg_.dims.total(); }

  static constexpr double kNonlinearGain = 0.5;   // a in x + a*tanh(x)
  static constexpr double kNewtonTol = 1e-12;

 private:
  WorldConfig cfg_;
  std::vector<Tensor> orth_;  // applied in order on the forward pass
};

// ---------------------------------------------------------------------------
// Latent pair files
// ---------------------------------------------------------------------------

// Binary format: magic "ILP1", u32 version=1, u32 N, u64 rows, u16 concept id,
// u8 mode (0=share, 1=differ), then rows*N float64 little-endian for stream a
// followed by stream b.
struct PairFileHeader {
  std::uint32_t n = 0;
  std::uint64_t rows = 0;
  std::uint16_t factor = 0;
  PairMode mode = PairMode::share;
};

void write_pairs(const std::string& path, const std::vector<PairBatch>& batches);

// Streaming reader; never loads the whole file.
class PairFileReader {
 public:
  explicit PairFileReader(const std::string& path);
  const PairFileHeader& header() const { return header_; }
  // Reads up to max_rows more pairs; returns an empty optional at the end.
  std::optional<PairBatch> next(std::size_t max_rows);

 private:
  std::ifstream in_;
  std::string path_;
  PairFileHeader header_;
  std::uint64_t cursor_ = 0;
  std::uint64_t offset_a_ = 0, offset_b_ = 0;
};

std::vector<PairBatch> read_pairs(const std::string& path, std::size_t batch_rows = 1024);

// CSV import: a sidecar .meta file (key=value lines: a, b, factor, mode) that
// names two CSV files holding one pair stream each, one row of N values per
// line. Relative paths resolve against the meta file's directory.
PairBatch read_pairs_csv(const std::string& meta_path);

// Entry point used by the CLI: dispatches on the .meta extension.
std::vector<PairBatch> load_pairs(const std::string& path, std::size_t batch_rows = 1024);

// Plain CSV helpers for latent row files.
Tensor read_csv_matrix(const std::string& path);
void write_csv_matrix(const std::string& path, const Tensor& m);

}  // namespace iin
