#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "iin/concepts.hpp"
#include "iin/flow.hpp"
#include "iin/objective.hpp"
#include "iin/rng.hpp"
#include "iin/tensor.hpp"

namespace iin {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const std::vector<Tensor>& params, double beta1 = 0.9,
                              double beta2 = 0.999, double eps = 1e-8);
};

// Standard bias-corrected Adam update in place, reading each parameter's grad.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class LossMode : std::uint8_t { supervised = 0, unsupervised = 1 };

struct TrainConfig {
  LossMode mode = LossMode::supervised;
  std::uint64_t seed = 1;
  std::size_t steps = 0;
  std::size_t batch = 25;
  double lr = 1e-4;
  double sigma_ab = 0.9;
  std::size_t n_flow = 6;
  std::size_t hidden = 512;
  std::size_t depth = 2;
  double scale_clamp = 1.5;
  double leaky_alpha = 0.01;
  std::size_t checkpoint_interval = 0;  // 0: no rolling checkpoints
  double clip_norm = 0.0;               // 0: no gradient clipping

  FlowConfig flow() const;
  void validate() const;
  // Structural digest; resume refuses a checkpoint whose digest differs.
  // Step count and checkpoint interval are not part of it.
  std::uint64_t digest(const FactorLayout& layout) const;
};

// ---------------------------------------------------------------------------
// Data sources (deterministic: batch content is a pure function of the step)
// ---------------------------------------------------------------------------

class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual std::size_t concepts() const = 0;
  virtual PairBatch batch(std::uint64_t step, std::size_t rows) = 0;
};

class WorldPairSource : public PairSource {
 public:
  explicit WorldPairSource(SyntheticWorld world) : world_(std::move(world)) {}
  std::size_t concepts() const override { return world_.dims().semantic(); }
  PairBatch batch(std::uint64_t step, std::size_t rows) override;

 private:
  SyntheticWorld world_;
};

// In-memory pairs, e.g. loaded from pair files; one entry per concept 1..K.
// Batches cycle through the stored rows.
class MemoryPairSource : public PairSource {
 public:
  explicit MemoryPairSource(std::vector<PairBatch> per_concept);
  std::size_t concepts() const override { return data_.size(); }
  PairBatch batch(std::uint64_t step, std::size_t rows) override;

 private:
  std::vector<PairBatch> data_;  // index f-1 holds the merged rows of concept f
};

class LatentSource {
 public:
  virtual ~LatentSource() = default;
  virtual Tensor batch(std::uint64_t step, std::size_t rows) = 0;
};

class WorldLatentSource : public LatentSource {
 public:
  explicit WorldLatentSource(SyntheticWorld world) : world_(std::move(world)) {}
  Tensor batch(std::uint64_t step, std::size_t rows) override {
    return world_.sample_latents(rows, step);
  }

 private:
  SyntheticWorld world_;
};

class MemoryLatentSource : public LatentSource {
 public:
  explicit MemoryLatentSource(Tensor rows);
  Tensor batch(std::uint64_t step, std::size_t rows) override;

 private:
  Tensor data_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StepMetrics {
  std::uint64_t step = 0;
  double loss = 0.0;
  double nll_bits = 0.0;
  double quad_a = 0.0;
  double logdet_a = 0.0;
  double quad_b = 0.0;
  double logdet_b = 0.0;
  double cond = 0.0;
  std::uint32_t factor = 0;  // concept trained this step; 0 for unsupervised
};

struct TrainState {
  InterpretationNetwork net;
  AdamState adam;
  Rng rng;
  std::uint64_t next_step = 0;
};

TrainState make_train_state(const FactorLayout& layout, const TrainConfig& cfg);

struct TrainOptions {
  // When non-empty and checkpoint_interval > 0, a rolling checkpoint is
  // written here (atomically) every interval steps.
  std::string checkpoint_path;
};

struct TrainResult {
  enum class Status { ok, nan_abort };
  Status status = Status::ok;
  std::vector<StepMetrics> metrics;
  std::string diagnostic;
};

// Runs steps [state.next_step, cfg.steps). ActNorm layers are initialized
// from the first batch if needed. A non-finite loss aborts before the update,
// leaving the last checkpoint intact.
TrainResult train(TrainState& state, PairSource& source, const TrainConfig& cfg,
                  const TrainOptions& opt = {});
TrainResult train_unsup(TrainState& state, LatentSource& source, const TrainConfig& cfg,
                        const TrainOptions& opt = {});

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& metrics);

// ---------------------------------------------------------------------------
// Checkpoints: magic "IIN1", versioned, bitwise round trip
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t digest = 0;
  FactorLayout layout;
  FlowConfig flow;
  std::uint8_t mode = 0;
  double lr = 1e-4;
  double sigma_ab = 0.9;
  double clip_norm = 0.0;
  std::uint32_t batch = 25;
  std::uint64_t seed = 0;
  std::uint64_t next_step = 0;
  std::array<std::uint64_t, 4> rng_state{};
  std::vector<std::vector<std::uint32_t>> perms;
  std::vector<std::uint8_t> actnorm_initialized;
  std::vector<std::vector<double>> params;
  AdamState adam;
};

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);  // atomic write
Checkpoint load_checkpoint(const std::string& path);
InterpretationNetwork network_from_checkpoint(const Checkpoint& ckpt);
// Digest-checked resume.
TrainState state_from_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg);

}  // namespace iin
