#include "iin/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "iin/errors.hpp"

namespace iin {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState AdamState::for_params(const std::vector<Tensor>& params, double b1, double b2,
                                double epsilon) {
  AdamState st;
  st.beta1 = b1;
  st.beta2 = b2;
  st.eps = epsilon;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor& p : params) {
    st.m.emplace_back(p.size(), 0.0);
    st.v.emplace_back(p.size(), 0.0);
  }
  return st;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state tracks a different parameter count");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& par = params[p];
    if (par.size() != state.m[p].size())
      throw std::invalid_argument("adam_step: parameter shape changed under the optimizer");
    if (!par.has_grad()) continue;
    const double* g = par.grad();
    double* m = state.m[p].data();
    double* v = state.v[p].data();
    double* x = par.data();
    for (std::size_t i = 0; i < par.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

FlowConfig TrainConfig::flow() const {
  FlowConfig f;
  f.n_flow = n_flow;
  f.hidden = hidden;
  f.depth = depth;
  f.scale_clamp = scale_clamp;
  f.leaky_alpha = leaky_alpha;
  return f;
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (batch < 2) throw std::invalid_argument("TrainConfig: batch must be >= 2");
  if (!(sigma_ab > 0.0 && sigma_ab < 1.0))
    throw std::invalid_argument("TrainConfig: sigma_ab must lie in (0,1)");
  if (clip_norm < 0.0) throw std::invalid_argument("TrainConfig: clip_norm must be >= 0");
  flow().validate();
}

std::uint64_t TrainConfig::digest(const FactorLayout& layout) const {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%u|%llu|%zu|%.17g|%.17g|%zu|%zu|%zu|%.17g|%.17g|%.17g|%s",
                static_cast<unsigned>(mode), static_cast<unsigned long long>(seed), batch, lr,
                sigma_ab, n_flow, hidden, depth, scale_clamp, leaky_alpha, clip_norm,
                layout.str().c_str());
  // FNV-1a
  std::uint64_t h = 1469598103934665603ULL;
  for (const char* p = buf; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Sources
// ---------------------------------------------------------------------------

PairBatch WorldPairSource::batch(std::uint64_t step, std::size_t rows) {
  const std::size_t k = concepts();
  const std::size_t factor = 1 + static_cast<std::size_t>(step % k);
  return world_.sample_pairs(factor, rows, step);
}

MemoryPairSource::MemoryPairSource(std::vector<PairBatch> per_concept) {
  if (per_concept.empty()) throw std::invalid_argument("MemoryPairSource: no concepts");
  data_.resize(per_concept.size());
  std::vector<bool> seen(per_concept.size() + 1, false);
  for (PairBatch& pb : per_concept) {
    if (pb.factor == 0 || pb.factor > per_concept.size())
      throw std::invalid_argument("MemoryPairSource: concepts must be numbered 1..K, got " +
                                  std::to_string(pb.factor));
    if (seen[pb.factor])
      throw std::invalid_argument("MemoryPairSource: duplicate concept " +
                                  std::to_string(pb.factor));
    seen[pb.factor] = true;
    data_[pb.factor - 1] = std::move(pb);
  }
  for (std::size_t f = 1; f <= data_.size(); ++f)
    if (!seen[f])
      throw std::invalid_argument("MemoryPairSource: missing pairs for concept " +
                                  std::to_string(f));
}

PairBatch MemoryPairSource::batch(std::uint64_t step, std::size_t rows) {
  const std::size_t k = data_.size();
  const std::size_t idx = static_cast<std::size_t>(step % k);
  const PairBatch& src = data_[idx];
  const std::size_t total = src.za.rows();
  const std::size_t n = src.za.cols();
  const std::uint64_t start = (step / k) * rows % total;
  PairBatch out;
  out.za = Tensor(Shape{rows, n});
  out.zb = Tensor(Shape{rows, n});
  out.factor = src.factor;
  out.mode = src.mode;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t r = static_cast<std::size_t>((start + i) % total);
    std::memcpy(out.za.data() + i * n, src.za.data() + r * n, n * sizeof(double));
    std::memcpy(out.zb.data() + i * n, src.zb.data() + r * n, n * sizeof(double));
  }
  return out;
}

MemoryLatentSource::MemoryLatentSource(Tensor rows) : data_(std::move(rows)) {
  if (data_.rank() != 2 || data_.rows() == 0)
    throw std::invalid_argument("MemoryLatentSource: need a non-empty row matrix");
}

Tensor MemoryLatentSource::batch(std::uint64_t step, std::size_t rows) {
  const std::size_t total = data_.rows();
  const std::size_t n = data_.cols();
  const std::uint64_t start = step * rows % total;
  Tensor out(Shape{rows, n});
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t r = static_cast<std::size_t>((start + i) % total);
    std::memcpy(out.data() + i * n, data_.data() + r * n, n * sizeof(double));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainState make_train_state(const FactorLayout& layout, const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.rng = Rng(cfg.seed);
  st.net = InterpretationNetwork(layout, cfg.flow(), st.rng);
  auto params = st.net.parameters();
  st.adam = AdamState::for_params(params);
  st.next_step = 0;
  return st;
}

namespace {

void clip_gradients(std::vector<Tensor>& params, double clip_norm) {
  if (clip_norm <= 0.0) return;
  double sq = 0.0;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    const double* g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) sq += g[i] * g[i];
  }
  const double norm = std::sqrt(sq);
  if (norm <= clip_norm) return;
  const double f = clip_norm / norm;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    double* g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) g[i] *= f;
  }
}

void maybe_checkpoint(const TrainState& state, const TrainConfig& cfg, const TrainOptions& opt,
                      std::uint64_t completed_step) {
  if (opt.checkpoint_path.empty() || cfg.checkpoint_interval == 0) return;
  if ((completed_step + 1) % cfg.checkpoint_interval != 0) return;
  save_checkpoint(opt.checkpoint_path, make_checkpoint(state, cfg));
}

}  // namespace

TrainResult train(TrainState& state, PairSource& source, const TrainConfig& cfg,
                  const TrainOptions& opt) {
  cfg.validate();
  if (cfg.mode != LossMode::supervised)
    throw std::invalid_argument("train: config mode is not supervised");
  if (source.concepts() != state.net.layout().semantic())
    throw std::invalid_argument("train: source provides " + std::to_string(source.concepts()) +
                                " concepts, layout needs " +
                                std::to_string(state.net.layout().semantic()));
  TrainResult result;
  if (cfg.steps <= state.next_step) return result;

  std::vector<Tensor> params = state.net.parameters();
  for (std::uint64_t step = state.next_step; step < cfg.steps; ++step) {
    PairBatch pb = source.batch(step, cfg.batch);
    if (step == state.next_step && !state.net.actnorm_ready()) state.net.init_actnorm(pb.za);

    Tape tape;
    PairLossTerms terms = pair_loss_terms(state.net, pb, cfg.sigma_ab, &tape);
    const double loss = terms.total.item();
    if (!std::isfinite(loss)) {
      result.status = TrainResult::Status::nan_abort;
      result.diagnostic = "non-finite loss at step " + std::to_string(step);
      return result;
    }
    for (Tensor& p : params) p.zero_grad();
    tape.backward(terms.total);
    clip_gradients(params, cfg.clip_norm);
    adam_step(params, state.adam, cfg.lr);

    StepMetrics met;
    met.step = step;
    met.loss = loss;
    met.nll_bits = nll_bits_from_terms(terms.quad_a, terms.logdet_a, state.net.dim());
    met.quad_a = terms.quad_a;
    met.logdet_a = terms.logdet_a;
    met.quad_b = terms.quad_b;
    met.logdet_b = terms.logdet_b;
    met.cond = terms.cond;
    met.factor = static_cast<std::uint32_t>(pb.factor);
    result.metrics.push_back(met);

    state.next_step = step + 1;
    maybe_checkpoint(state, cfg, opt, step);
  }
  return result;
}

TrainResult train_unsup(TrainState& state, LatentSource& source, const TrainConfig& cfg,
                        const TrainOptions& opt) {
  cfg.validate();
  if (cfg.mode != LossMode::unsupervised)
    throw std::invalid_argument("train_unsup: config mode is not unsupervised");
  TrainResult result;
  if (cfg.steps <= state.next_step) return result;

  std::vector<Tensor> params = state.net.parameters();
  for (std::uint64_t step = state.next_step; step < cfg.steps; ++step) {
    Tensor z = source.batch(step, cfg.batch);
    if (step == state.next_step && !state.net.actnorm_ready()) state.net.init_actnorm(z);

    Tape tape;
    UnsupLossTerms terms = unsup_train_terms(state.net, z, &tape);
    const double loss = terms.total.item();
    if (!std::isfinite(loss)) {
      result.status = TrainResult::Status::nan_abort;
      result.diagnostic = "non-finite loss at step " + std::to_string(step);
      return result;
    }
    for (Tensor& p : params) p.zero_grad();
    tape.backward(terms.total);
    clip_gradients(params, cfg.clip_norm);
    adam_step(params, state.adam, cfg.lr);

    StepMetrics met;
    met.step = step;
    met.loss = loss;
    met.nll_bits = nll_bits_from_terms(terms.quad, terms.logdet, state.net.dim());
    met.quad_a = terms.quad;
    met.logdet_a = terms.logdet;
    result.metrics.push_back(met);

    state.next_step = step + 1;
    maybe_checkpoint(state, cfg, opt, step);
  }
  return result;
}

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& metrics) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "step,loss,nll_bits,quad_a,logdet_a,quad_b,logdet_b,cond,factor\n";
  char buf[64];
  for (const StepMetrics& m : metrics) {
    out << m.step;
    const double cols[7] = {m.loss, m.nll_bits, m.quad_a, m.logdet_a, m.quad_b, m.logdet_b, m.cond};
    for (double v : cols) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << "," << buf;
    }
    out << "," << m.factor << "\n";
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'I', 'I', 'N', '1'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void wpod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T rpod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError(path + ": truncated checkpoint");
  return v;
}

void wdoubles(std::ostream& out, const std::vector<double>& v) {
  wpod(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> rdoubles(std::istream& in, const std::string& path) {
  const auto n = rpod<std::uint64_t>(in, path);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw FormatError(path + ": truncated checkpoint");
  return v;
}

}  // namespace

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg) {
  Checkpoint c;
  c.version = kCkptVersion;
  c.layout = state.net.layout();
  c.flow = state.net.config();
  c.mode = static_cast<std::uint8_t>(cfg.mode);
  c.lr = cfg.lr;
  c.sigma_ab = cfg.sigma_ab;
  c.clip_norm = cfg.clip_norm;
  c.batch = static_cast<std::uint32_t>(cfg.batch);
  c.seed = cfg.seed;
  c.digest = cfg.digest(c.layout);
  c.next_step = state.next_step;
  c.rng_state = state.rng.state();
  for (const Block& b : state.net.blocks()) {
    c.perms.push_back(b.shuffle.perm());
    c.actnorm_initialized.push_back(b.actnorm.initialized() ? 1 : 0);
  }
  for (const Tensor& p : state.net.parameters())
    c.params.emplace_back(p.data(), p.data() + p.size());
  c.adam = state.adam;
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(tmp + ": cannot open for writing");
    out.write(kCkptMagic, 4);
    wpod(out, c.version);
    wpod(out, c.digest);
    wpod(out, static_cast<std::uint32_t>(c.layout.total()));
    wpod(out, static_cast<std::uint32_t>(c.layout.factors()));
    for (std::size_t d : c.layout.dims) wpod(out, static_cast<std::uint32_t>(d));
    wpod(out, static_cast<std::uint32_t>(c.flow.n_flow));
    wpod(out, static_cast<std::uint32_t>(c.flow.hidden));
    wpod(out, static_cast<std::uint32_t>(c.flow.depth));
    wpod(out, c.flow.scale_clamp);
    wpod(out, c.flow.leaky_alpha);
    wpod(out, c.mode);
    wpod(out, c.lr);
    wpod(out, c.sigma_ab);
    wpod(out, c.clip_norm);
    wpod(out, c.batch);
    wpod(out, c.seed);
    wpod(out, c.next_step);
    for (std::uint64_t w : c.rng_state) wpod(out, w);
    wpod(out, static_cast<std::uint32_t>(c.perms.size()));
    for (const auto& perm : c.perms) {
      wpod(out, static_cast<std::uint32_t>(perm.size()));
      out.write(reinterpret_cast<const char*>(perm.data()),
                static_cast<std::streamsize>(perm.size() * sizeof(std::uint32_t)));
    }
    out.write(reinterpret_cast<const char*>(c.actnorm_initialized.data()),
              static_cast<std::streamsize>(c.actnorm_initialized.size()));
    wpod(out, static_cast<std::uint32_t>(c.params.size()));
    for (const auto& p : c.params) wdoubles(out, p);
    wpod(out, c.adam.t);
    wpod(out, c.adam.beta1);
    wpod(out, c.adam.beta2);
    wpod(out, c.adam.eps);
    for (const auto& m : c.adam.m) wdoubles(out, m);
    for (const auto& v : c.adam.v) wdoubles(out, v);
    if (!out) throw FormatError(tmp + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw FormatError(path + ": bad magic, not a checkpoint");
  Checkpoint c;
  c.version = rpod<std::uint32_t>(in, path);
  if (c.version != kCkptVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(c.version));
  c.digest = rpod<std::uint64_t>(in, path);
  const auto n = rpod<std::uint32_t>(in, path);
  const auto nf = rpod<std::uint32_t>(in, path);
  std::vector<std::size_t> dims(nf);
  for (auto& d : dims) d = rpod<std::uint32_t>(in, path);
  c.layout = FactorLayout(std::move(dims));
  if (c.layout.total() != n) throw FormatError(path + ": layout does not sum to N");
  c.flow.n_flow = rpod<std::uint32_t>(in, path);
  c.flow.hidden = rpod<std::uint32_t>(in, path);
  c.flow.depth = rpod<std::uint32_t>(in, path);
  c.flow.scale_clamp = rpod<double>(in, path);
  c.flow.leaky_alpha = rpod<double>(in, path);
  c.mode = rpod<std::uint8_t>(in, path);
  c.lr = rpod<double>(in, path);
  c.sigma_ab = rpod<double>(in, path);
  c.clip_norm = rpod<double>(in, path);
  c.batch = rpod<std::uint32_t>(in, path);
  c.seed = rpod<std::uint64_t>(in, path);
  c.next_step = rpod<std::uint64_t>(in, path);
  for (auto& w : c.rng_state) w = rpod<std::uint64_t>(in, path);
  const auto nperm = rpod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < nperm; ++i) {
    const auto len = rpod<std::uint32_t>(in, path);
    std::vector<std::uint32_t> perm(len);
    in.read(reinterpret_cast<char*>(perm.data()),
            static_cast<std::streamsize>(len * sizeof(std::uint32_t)));
    if (!in) throw FormatError(path + ": truncated checkpoint");
    c.perms.push_back(std::move(perm));
  }
  c.actnorm_initialized.resize(nperm);
  in.read(reinterpret_cast<char*>(c.actnorm_initialized.data()),
          static_cast<std::streamsize>(nperm));
  if (!in) throw FormatError(path + ": truncated checkpoint");
  const auto nparams = rpod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < nparams; ++i) c.params.push_back(rdoubles(in, path));
  c.adam.t = rpod<std::uint64_t>(in, path);
  c.adam.beta1 = rpod<double>(in, path);
  c.adam.beta2 = rpod<double>(in, path);
  c.adam.eps = rpod<double>(in, path);
  for (std::uint32_t i = 0; i < nparams; ++i) c.adam.m.push_back(rdoubles(in, path));
  for (std::uint32_t i = 0; i < nparams; ++i) c.adam.v.push_back(rdoubles(in, path));
  in.peek();
  if (!in.eof()) throw FormatError(path + ": trailing bytes after checkpoint payload");
  return c;
}

InterpretationNetwork network_from_checkpoint(const Checkpoint& c) {
  Rng scratch(0);
  InterpretationNetwork net(c.layout, c.flow, scratch);
  auto& blocks = net.blocks();
  if (blocks.size() != c.perms.size() || blocks.size() != c.actnorm_initialized.size())
    throw FormatError("checkpoint: block count mismatch");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].shuffle.set_perm(c.perms[i]);
    blocks[i].actnorm.mark_initialized(c.actnorm_initialized[i] != 0);
  }
  std::vector<Tensor> params = net.parameters();
  if (params.size() != c.params.size())
    throw FormatError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != c.params[i].size())
      throw FormatError("checkpoint: parameter size mismatch");
    std::memcpy(params[i].data(), c.params[i].data(), c.params[i].size() * sizeof(double));
  }
  return net;
}

TrainState state_from_checkpoint(const Checkpoint& c, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.digest(c.layout) != c.digest)
    throw FormatError("checkpoint: config digest mismatch, refusing to resume");
  TrainState st;
  st.net = network_from_checkpoint(c);
  st.adam = c.adam;
  st.rng = Rng::from_state(c.rng_state);
  st.next_step = c.next_step;
  return st;
}

}  // namespace iin
