// iin: train and analyze invertible interpretation networks over latent
// representations. Subcommands map onto the library modules; all randomized
// commands take explicit seeds and write plot-ready CSVs.
//
// Exit codes: 0 success, 1 usage/config error, 2 data or format error,
// 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iin/analysis.hpp"
#include "iin/concepts.hpp"
#include "iin/errors.hpp"
#include "iin/flow.hpp"
#include "iin/objective.hpp"
#include "iin/trainer.hpp"

namespace fs = std::filesystem;
using namespace iin;

namespace {

// ---------------------------------------------------------------------------
// Logging (IIN_LOG = quiet | info | debug)
// ---------------------------------------------------------------------------

int log_level() {
  static const int level = [] {
    const char* env = std::getenv("IIN_LOG");
    if (!env) return 1;
    const std::string v(env);
    if (v == "quiet") return 0;
    if (v == "debug") return 2;
    return 1;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[iin] " << msg << "\n";
}

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Atomic file helpers
// ---------------------------------------------------------------------------

template <typename WriteFn>
void atomic_write(const std::string& path, WriteFn&& writer) {
  const std::string tmp = path + ".tmp";
  writer(tmp);
  fs::rename(tmp, path);
}

Tensor load_latent_rows(const std::string& path) {
  if (!fs::exists(path)) throw FormatError("missing file '" + path + "'");
  return read_csv_matrix(path);
}

Tensor row_of(const Tensor& m, std::size_t i) {
  Tensor v(Shape{m.cols()});
  for (std::size_t j = 0; j < m.cols(); ++j) v.at(j) = m.at(i, j);
  return v;
}

// ---------------------------------------------------------------------------
// Run configuration file (key = value, '#' comments)
// ---------------------------------------------------------------------------

struct RunConfig {
  TrainConfig train;
  std::string layout_spec = "auto";
  std::string out_dir;
  std::optional<WorldConfig> world;
  std::map<std::size_t, std::string> pair_files;  // concept -> path
  std::string latents_file;
  std::size_t auto_pairs = 4096;

  std::string resolved(const FactorLayout& layout) const;
};

const std::set<std::string> kKnownKeys = {
    "mode",        "seed",    "steps",      "batch",      "lr",
    "sigma_ab",    "n_flow",  "hidden",     "depth",      "scale_clamp",
    "leaky_alpha", "layout",  "out",        "world_seed", "world_dims",
    "world_sigma", "latents", "auto_pairs", "clip_norm",  "checkpoint_interval",
};

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open config");
  RunConfig cfg;
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    if (trim(line).empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.rfind("pairs.", 0) == 0) {
      const std::string idx = key.substr(6);
      try {
        const unsigned long f = std::stoul(idx);
        if (f == 0) throw std::invalid_argument("zero");
        cfg.pair_files[f] = value;
      } catch (const std::exception&) {
        throw UsageError(path + ": bad concept index in key '" + key + "'");
      }
      continue;
    }
    if (!kKnownKeys.count(key))
      throw UsageError(path + ": unknown configuration key '" + key + "'");
    kv[key] = value;
  }

  auto get = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return it->second;
  };
  auto to_u64 = [&](const std::string& key, const std::string& v) -> std::uint64_t {
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      throw UsageError(path + ": key '" + key + "' needs an integer, got '" + v + "'");
    }
  };
  auto to_f64 = [&](const std::string& key, const std::string& v) -> double {
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      throw UsageError(path + ": key '" + key + "' needs a number, got '" + v + "'");
    }
  };

  if (auto v = get("mode")) {
    if (*v == "supervised")
      cfg.train.mode = LossMode::supervised;
    else if (*v == "unsupervised")
      cfg.train.mode = LossMode::unsupervised;
    else
      throw UsageError(path + ": mode must be 'supervised' or 'unsupervised'");
  }
  if (auto v = get("seed")) cfg.train.seed = to_u64("seed", *v);
  if (auto v = get("steps")) cfg.train.steps = to_u64("steps", *v);
  if (auto v = get("batch")) cfg.train.batch = to_u64("batch", *v);
  if (auto v = get("lr")) cfg.train.lr = to_f64("lr", *v);
  if (auto v = get("sigma_ab")) cfg.train.sigma_ab = to_f64("sigma_ab", *v);
  if (auto v = get("n_flow")) cfg.train.n_flow = to_u64("n_flow", *v);
  if (auto v = get("hidden")) cfg.train.hidden = to_u64("hidden", *v);
  if (auto v = get("depth")) cfg.train.depth = to_u64("depth", *v);
  if (auto v = get("scale_clamp")) cfg.train.scale_clamp = to_f64("scale_clamp", *v);
  if (auto v = get("leaky_alpha")) cfg.train.leaky_alpha = to_f64("leaky_alpha", *v);
  if (auto v = get("checkpoint_interval"))
    cfg.train.checkpoint_interval = to_u64("checkpoint_interval", *v);
  if (auto v = get("clip_norm")) cfg.train.clip_norm = to_f64("clip_norm", *v);
  if (auto v = get("layout")) cfg.layout_spec = *v;
  if (auto v = get("out")) cfg.out_dir = *v;
  if (auto v = get("latents")) cfg.latents_file = *v;
  if (auto v = get("auto_pairs")) cfg.auto_pairs = to_u64("auto_pairs", *v);

  const bool has_world =
      kv.count("world_seed") || kv.count("world_dims") || kv.count("world_sigma");
  if (has_world) {
    if (!kv.count("world_dims")) throw UsageError(path + ": world source needs world_dims");
    WorldConfig wc;
    wc.dims = FactorLayout::parse(kv["world_dims"]);
    wc.seed = kv.count("world_seed") ? to_u64("world_seed", kv["world_seed"]) : 0;
    wc.sigma_true = kv.count("world_sigma") ? to_f64("world_sigma", kv["world_sigma"]) : 0.9;
    cfg.world = wc;
  }
  return cfg;
}

std::string RunConfig::resolved(const FactorLayout& layout) const {
  char buf[64];
  std::string s;
  auto kvf = [&](const std::string& k, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    s += k + " = " + buf + "\n";
  };
  auto kvi = [&](const std::string& k, std::uint64_t v) {
    s += k + " = " + std::to_string(v) + "\n";
  };
  s += std::string("mode = ") +
       (train.mode == LossMode::supervised ? "supervised" : "unsupervised") + "\n";
  kvi("seed", train.seed);
  kvi("steps", train.steps);
  kvi("batch", train.batch);
  kvf("lr", train.lr);
  kvf("sigma_ab", train.sigma_ab);
  kvi("n_flow", train.n_flow);
  kvi("hidden", train.hidden);
  kvi("depth", train.depth);
  kvf("scale_clamp", train.scale_clamp);
  kvf("leaky_alpha", train.leaky_alpha);
  kvi("checkpoint_interval", train.checkpoint_interval);
  kvf("clip_norm", train.clip_norm);
  s += "layout = " + layout.str() + "\n";
  s += "out = " + out_dir + "\n";
  if (world) {
    kvi("world_seed", world->seed);
    s += "world_dims = " + world->dims.str() + "\n";
    kvf("world_sigma", world->sigma_true);
  }
  for (const auto& [f, p] : pair_files) s += "pairs." + std::to_string(f) + " = " + p + "\n";
  if (!latents_file.empty()) s += "latents = " + latents_file + "\n";
  kvi("auto_pairs", auto_pairs);
  return s;
}

// ---------------------------------------------------------------------------
// Data source assembly
// ---------------------------------------------------------------------------

std::vector<PairBatch> load_concept_files(const std::map<std::size_t, std::string>& files) {
  std::vector<PairBatch> merged;
  for (const auto& [factor, path] : files) {
    if (!fs::exists(path))
      throw FormatError("pairs for concept " + std::to_string(factor) + ": missing file '" +
                        path + "'");
    std::vector<PairBatch> batches = load_pairs(path);
    std::size_t rows = 0;
    for (const PairBatch& b : batches) rows += b.za.rows();
    const std::size_t n = batches.front().za.cols();
    PairBatch all;
    all.za = Tensor(Shape{rows, n});
    all.zb = Tensor(Shape{rows, n});
    all.factor = factor;
    all.mode = batches.front().mode;
    std::size_t at = 0;
    for (const PairBatch& b : batches) {
      if (b.factor != factor)
        throw FormatError(path + ": file claims concept " + std::to_string(b.factor) +
                          " but the configuration maps it to " + std::to_string(factor));
      for (std::size_t i = 0; i < b.za.rows(); ++i, ++at)
        for (std::size_t j = 0; j < n; ++j) {
          all.za.at(at, j) = b.za.at(i, j);
          all.zb.at(at, j) = b.zb.at(i, j);
        }
    }
    merged.push_back(std::move(all));
  }
  return merged;
}

FactorLayout resolve_layout(const RunConfig& cfg, std::size_t data_dim,
                            const std::vector<PairBatch>* concept_data,
                            const SyntheticWorld* world) {
  if (cfg.layout_spec != "auto") {
    FactorLayout layout = FactorLayout::parse(cfg.layout_spec);
    if (layout.total() != data_dim)
      throw FormatError("layout " + layout.str() + " does not sum to the data dimension " +
                        std::to_string(data_dim));
    return layout;
  }
  ConceptScores scores;
  scores.total_dim = data_dim;
  if (concept_data) {
    for (const PairBatch& pb : *concept_data)
      scores.semantic.push_back(score_concept(pb.za, pb.zb));
  } else if (world) {
    for (std::size_t f = 1; f <= world->dims().semantic(); ++f) {
      ScoreAccumulator acc(data_dim);
      PairBatch pb = world->sample_pairs(f, cfg.auto_pairs, 0xd1f5ULL + f);
      acc.add(pb.za, pb.zb);
      scores.semantic.push_back(acc.score());
    }
  } else {
    throw UsageError("layout = auto needs pair data to estimate dimensionalities");
  }
  FactorLayout layout = allocate_dims(scores, data_dim);
  log_info("auto layout: " + layout.str());
  return layout;
}

// ---------------------------------------------------------------------------
// train / train-unsup
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out_override,
              const std::string& resume_path, bool unsupervised) {
  RunConfig cfg = parse_run_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (cfg.out_dir.empty()) throw UsageError("no output directory: set 'out' or pass --out");
  cfg.train.mode = unsupervised ? LossMode::unsupervised : LossMode::supervised;
  fs::create_directories(cfg.out_dir);

  std::unique_ptr<PairSource> pair_source;
  std::unique_ptr<LatentSource> latent_source;
  FactorLayout layout;

  if (!unsupervised) {
    if (!cfg.pair_files.empty()) {
      std::vector<PairBatch> data = load_concept_files(cfg.pair_files);
      const std::size_t n = data.front().za.cols();
      layout = resolve_layout(cfg, n, &data, nullptr);
      pair_source = std::make_unique<MemoryPairSource>(std::move(data));
    } else if (cfg.world) {
      SyntheticWorld world(*cfg.world);
      layout = resolve_layout(cfg, world.dim(), nullptr, &world);
      pair_source = std::make_unique<WorldPairSource>(std::move(world));
    } else {
      throw UsageError("supervised training needs pairs.<F> files or a world_* source");
    }
    if (pair_source->concepts() != layout.semantic())
      throw FormatError("data provides " + std::to_string(pair_source->concepts()) +
                        " concepts but the layout has " + std::to_string(layout.semantic()));
  } else {
    std::size_t n = 0;
    if (!cfg.latents_file.empty()) {
      Tensor rows = load_latent_rows(cfg.latents_file);
      n = rows.cols();
      latent_source = std::make_unique<MemoryLatentSource>(std::move(rows));
    } else if (cfg.world) {
      SyntheticWorld world(*cfg.world);
      n = world.dim();
      latent_source = std::make_unique<WorldLatentSource>(std::move(world));
    } else {
      throw UsageError("unsupervised training needs a latents file or a world_* source");
    }
    layout =
        cfg.layout_spec == "auto" ? FactorLayout({n}) : FactorLayout::parse(cfg.layout_spec);
    if (layout.total() != n)
      throw FormatError("layout " + layout.str() + " does not sum to the data dimension " +
                        std::to_string(n));
  }

  TrainState state;
  if (!resume_path.empty()) {
    state = state_from_checkpoint(load_checkpoint(resume_path), cfg.train);
    log_info("resumed from " + resume_path + " at step " + std::to_string(state.next_step));
  } else {
    state = make_train_state(layout, cfg.train);
  }

  TrainOptions opt;
  opt.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.iin").string();
  log_info("training for " + std::to_string(cfg.train.steps) + " steps");
  TrainResult result = unsupervised ? train_unsup(state, *latent_source, cfg.train, opt)
                                    : train(state, *pair_source, cfg.train, opt);

  atomic_write((fs::path(cfg.out_dir) / "metrics.csv").string(),
               [&](const std::string& tmp) { write_metrics_csv(tmp, result.metrics); });
  atomic_write((fs::path(cfg.out_dir) / "resolved.cfg").string(), [&](const std::string& tmp) {
    std::ofstream out(tmp, std::ios::trunc);
    out << cfg.resolved(state.net.layout());
  });

  if (result.status == TrainResult::Status::nan_abort)
    throw NumericError(result.diagnostic + " (last rolling checkpoint retained)");

  save_checkpoint((fs::path(cfg.out_dir) / "model.iin").string(),
                  make_checkpoint(state, cfg.train));
  if (!result.metrics.empty()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", result.metrics.back().loss);
    log_info(std::string("final loss ") + buf);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// estimate-dims
// ---------------------------------------------------------------------------

int cmd_estimate_dims(const std::vector<std::string>& pair_paths, std::size_t total,
                      const std::string& out_path) {
  if (pair_paths.empty()) throw UsageError("estimate-dims needs at least one --pairs file");
  std::map<std::size_t, double> scores_by_factor;
  std::size_t n = 0;
  for (const std::string& path : pair_paths) {
    if (!fs::exists(path)) throw FormatError("missing pair file '" + path + "'");
    std::vector<PairBatch> batches = load_pairs(path);
    const std::size_t file_n = batches.front().za.cols();
    if (n == 0) n = file_n;
    if (file_n != n)
      throw FormatError(path + ": dimension " + std::to_string(file_n) +
                        " disagrees with earlier files (" + std::to_string(n) + ")");
    const std::size_t factor = batches.front().factor;
    if (scores_by_factor.count(factor))
      throw FormatError(path + ": duplicate concept " + std::to_string(factor));
    scores_by_factor[factor] = score_concept(batches);
  }
  if (total != 0 && total != n)
    throw FormatError("--total " + std::to_string(total) +
                      " disagrees with the files' dimension " + std::to_string(n));

  ConceptScores scores;
  scores.total_dim = n;
  for (std::size_t f = 1; f <= scores_by_factor.size(); ++f) {
    auto it = scores_by_factor.find(f);
    if (it == scores_by_factor.end())
      throw FormatError("concept files must cover 1..K; missing concept " + std::to_string(f));
    scores.semantic.push_back(it->second);
  }
  FactorLayout layout = allocate_dims(scores, n);

  std::string csv = "factor,score,dims\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", scores.residual());
  csv += "0," + std::string(buf) + "," + std::to_string(layout.dims[0]) + "\n";
  for (std::size_t f = 1; f < layout.factors(); ++f) {
    std::snprintf(buf, sizeof(buf), "%.17g", scores.semantic[f - 1]);
    csv += std::to_string(f) + "," + buf + "," + std::to_string(layout.dims[f]) + "\n";
  }
  std::cout << csv << "layout=" << layout.str() << "\n";
  if (!out_path.empty())
    atomic_write(out_path, [&](const std::string& tmp) {
      std::ofstream out(tmp, std::ios::trunc);
      out << csv;
    });
  return 0;
}

// ---------------------------------------------------------------------------
// analysis commands
// ---------------------------------------------------------------------------

InterpretationNetwork load_network(const std::string& ckpt_path) {
  if (!fs::exists(ckpt_path)) throw FormatError("missing checkpoint '" + ckpt_path + "'");
  return network_from_checkpoint(load_checkpoint(ckpt_path));
}

int cmd_swap(const std::string& ckpt, const std::string& src_path, const std::string& donor_path,
             std::size_t factor, const std::string& out_path) {
  InterpretationNetwork net = load_network(ckpt);
  Tensor src = load_latent_rows(src_path);
  Tensor donor = load_latent_rows(donor_path);
  if (donor.rows() != src.rows() && donor.rows() != 1)
    throw FormatError("donor must have one row or as many rows as the source");
  Tensor out(Shape{src.rows(), src.cols()});
  for (std::size_t i = 0; i < src.rows(); ++i) {
    Tensor z = swap_factor(net, row_of(src, i), row_of(donor, donor.rows() == 1 ? 0 : i), factor);
    for (std::size_t j = 0; j < src.cols(); ++j) out.at(i, j) = z.at(j);
  }
  atomic_write(out_path, [&](const std::string& tmp) { write_csv_matrix(tmp, out); });
  return 0;
}

int cmd_interp(const std::string& ckpt, const std::string& from_path, const std::string& to_path,
               std::size_t steps, const std::string& out_path) {
  InterpretationNetwork net = load_network(ckpt);
  Tensor from = load_latent_rows(from_path);
  Tensor to = load_latent_rows(to_path);
  auto path = interpolate(net, row_of(from, 0), row_of(to, 0), steps);
  Tensor out(Shape{path.size(), net.dim()});
  for (std::size_t i = 0; i < path.size(); ++i)
    for (std::size_t j = 0; j < net.dim(); ++j) out.at(i, j) = path[i].at(j);
  atomic_write(out_path, [&](const std::string& tmp) { write_csv_matrix(tmp, out); });
  return 0;
}

int cmd_attr_vec(const std::string& ckpt, const std::string& with_path,
                 const std::string& without_path, const std::string& out_path) {
  InterpretationNetwork net = load_network(ckpt);
  auto encode_rows = [&](const std::string& path) {
    Tensor rows = load_latent_rows(path);
    Tensor codes = net.forward(rows).code;
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < codes.rows(); ++i) out.push_back(row_of(codes, i));
    return out;
  };
  Tensor dir = attribute_vector(encode_rows(with_path), encode_rows(without_path));
  Tensor out(Shape{1, dir.size()});
  for (std::size_t j = 0; j < dir.size(); ++j) out.at(0, j) = dir.at(j);
  atomic_write(out_path, [&](const std::string& tmp) { write_csv_matrix(tmp, out); });
  return 0;
}

int cmd_sample(const std::string& ckpt, std::size_t count, std::uint64_t seed,
               const std::string& out_path) {
  InterpretationNetwork net = load_network(ckpt);
  Tensor draws = sample(net, count, seed);
  atomic_write(out_path, [&](const std::string& tmp) { write_csv_matrix(tmp, draws); });
  return 0;
}

int cmd_respond(const std::string& ckpt, std::uint64_t world_seed, const std::string& world_dims,
                double world_sigma, std::size_t head_factor, std::size_t classes,
                std::uint64_t head_seed, std::size_t factor, std::size_t steps, double gamma,
                double sigma, bool literal, std::uint64_t seed, const std::string& z_path,
                const std::string& out_dir) {
  InterpretationNetwork net = load_network(ckpt);
  WorldConfig wc;
  wc.seed = world_seed;
  wc.dims = FactorLayout::parse(world_dims);
  wc.sigma_true = world_sigma;
  SyntheticWorld world(wc);
  WorldLinearHead head(world, head_factor, classes, head_seed);

  Tensor z;
  if (!z_path.empty()) {
    z = row_of(load_latent_rows(z_path), 0);
  } else {
    z = row_of(world.sample_latents(1, 0), 0);
  }

  OUConfig cfg;
  cfg.gamma = gamma;
  cfg.steps = steps;
  cfg.literal = literal;
  if (sigma >= 0.0)
    cfg.sigma = sigma;
  else
    cfg.sigma = literal ? std::sqrt(1.0 - gamma * gamma)
                        : std::sqrt(1.0 - (1.0 - gamma) * (1.0 - gamma));

  ResponseReport report = response_analysis(net, head, z, factor, cfg, seed);
  fs::create_directories(out_dir);
  atomic_write((fs::path(out_dir) / "report.csv").string(),
               [&](const std::string& tmp) { write_response_csv(tmp, report); });
  atomic_write((fs::path(out_dir) / "summary.csv").string(),
               [&](const std::string& tmp) { write_response_summary_csv(tmp, report); });
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", report.change_rate);
  std::cout << "change_rate=" << buf << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// verification commands
// ---------------------------------------------------------------------------

int cmd_gradcheck(std::size_t n, std::size_t n_flow, std::size_t hidden, std::size_t depth,
                  std::uint64_t seed, std::size_t batch) {
  if (n % 2 != 0 || n < 2) throw UsageError("--n must be even and positive");
  FactorLayout layout({n / 2, n / 2});
  FlowConfig fc;
  fc.n_flow = n_flow;
  fc.hidden = hidden;
  fc.depth = depth;
  Rng rng(seed);
  InterpretationNetwork net(layout, fc, rng);
  // Move off the identity so the check exercises every path.
  for (Block& b : net.blocks()) {
    auto jitter = [&](Subnet& s) {
      for (Tensor& w : s.weights)
        for (std::size_t i = 0; i < w.size(); ++i) w.at(i) = 0.1 * rng.normal();
      for (Tensor& bias : s.biases)
        for (std::size_t i = 0; i < bias.size(); ++i) bias.at(i) = 0.02 * rng.normal();
    };
    jitter(b.coupling.s1);
    jitter(b.coupling.t1);
    jitter(b.coupling.s2);
    jitter(b.coupling.t2);
    Tensor& sc = b.actnorm.scale_param();
    Tensor& sh = b.actnorm.shift_param();
    for (std::size_t i = 0; i < sc.size(); ++i) {
      sc.at(i) = 0.8 + 0.4 * rng.uniform();
      sh.at(i) = 0.1 * rng.normal();
    }
    b.actnorm.mark_initialized(true);
  }
  PairBatch pb;
  pb.za = Tensor(Shape{batch, n});
  pb.zb = Tensor(Shape{batch, n});
  for (std::size_t i = 0; i < pb.za.size(); ++i) {
    pb.za.data()[i] = rng.normal();
    pb.zb.data()[i] = rng.normal();
  }
  pb.factor = 1;

  double worst = 0.0;
  for (Tensor& theta : net.parameters()) {
    const double err = gradient_check(
        [&](Tape& tape, const Tensor&) { return pair_loss(net, pb, 0.9, &tape); }, theta, 1e-5);
    worst = std::max(worst, err);
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3e", worst);
  std::cout << "max_relative_error=" << buf << "\n";
  if (worst >= 1e-4) throw NumericError("gradient check failed: " + std::string(buf));
  return 0;
}

int cmd_roundtrip(const std::string& ckpt, std::size_t count, std::uint64_t seed) {
  InterpretationNetwork net = load_network(ckpt);
  Rng rng(seed);
  Tensor z(Shape{count, net.dim()});
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  Tensor back = net.inverse(net.forward(z).code);
  double worst = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    worst = std::max(worst, std::abs(back.data()[i] - z.data()[i]));
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3e", worst);
  std::cout << "max_roundtrip_error=" << buf << "\n";
  if (worst >= 1e-9) throw NumericError("round trip error " + std::string(buf) + " exceeds 1e-9");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"invertible interpretation networks for latent representations"};
  app.require_subcommand(1);

  std::string config_path, out_override, resume_path;
  auto* train_cmd = app.add_subcommand("train", "train with concept pair supervision");
  train_cmd->add_option("--config", config_path, "run configuration file")->required();
  train_cmd->add_option("--out", out_override, "output directory (overrides config)");
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* unsup_cmd = app.add_subcommand("train-unsup", "train on the marginal distribution");
  unsup_cmd->add_option("--config", config_path, "run configuration file")->required();
  unsup_cmd->add_option("--out", out_override, "output directory (overrides config)");
  unsup_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

  std::vector<std::string> pair_paths;
  std::size_t total = 0;
  std::string out_path;
  auto* est_cmd = app.add_subcommand("estimate-dims", "score concepts and allocate factor dims");
  est_cmd->add_option("--pairs", pair_paths, "pair file (.ilp or .meta), one per concept")
      ->required();
  est_cmd->add_option("--total", total, "expected code dimension N (checked against files)");
  est_cmd->add_option("--out", out_path, "also write scores.csv here");

  std::string ckpt, src_path, donor_path;
  std::size_t factor = 1;
  auto* swap_cmd = app.add_subcommand("swap", "replace one factor of src with the donor's");
  swap_cmd->add_option("--ckpt", ckpt, "model checkpoint")->required();
  swap_cmd->add_option("--src", src_path, "source latents CSV")->required();
  swap_cmd->add_option("--donor", donor_path, "donor latents CSV")->required();
  swap_cmd->add_option("--factor", factor, "factor index to swap")->required();
  swap_cmd->add_option("--out", out_path, "output CSV")->required();

  std::string from_path, to_path;
  std::size_t steps = 10;
  auto* interp_cmd = app.add_subcommand("interp", "interpolate between two latents in code space");
  interp_cmd->add_option("--ckpt", ckpt, "model checkpoint")->required();
  interp_cmd->add_option("--from", from_path, "CSV with the start latent")->required();
  interp_cmd->add_option("--to", to_path, "CSV with the end latent")->required();
  interp_cmd->add_option("--steps", steps, "number of points including endpoints");
  interp_cmd->add_option("--out", out_path, "output CSV")->required();

  std::string with_path, without_path;
  auto* attr_cmd = app.add_subcommand("attr-vec", "attribute direction between two latent sets");
  attr_cmd->add_option("--ckpt", ckpt, "model checkpoint")->required();
  attr_cmd->add_option("--with", with_path, "latents CSV with the attribute")->required();
  attr_cmd->add_option("--without", without_path, "latents CSV without the attribute")
      ->required();
  attr_cmd->add_option("--out", out_path, "output CSV (one row)")->required();

  std::size_t count = 100;
  std::uint64_t seed = 0;
  auto* sample_cmd = app.add_subcommand("sample", "draw latents through the inverse map");
  sample_cmd->add_option("--ckpt", ckpt, "model checkpoint")->required();
  sample_cmd->add_option("--n", count, "number of samples");
  sample_cmd->add_option("--seed", seed, "random seed");
  sample_cmd->add_option("--out", out_path, "output CSV")->required();

  std::uint64_t world_seed = 0, head_seed = 1;
  std::string world_dims, z_path, out_dir;
  double world_sigma = 0.9, gamma = 0.05, ou_sigma = -1.0;
  std::size_t head_factor = 1, classes = 10;
  bool literal = false;
  auto* respond_cmd = app.add_subcommand("respond", "probe a head under factor perturbations");
  respond_cmd->add_option("--ckpt", ckpt, "model checkpoint")->required();
  respond_cmd->add_option("--world-seed", world_seed, "synthetic world seed")->required();
  respond_cmd->add_option("--world-dims", world_dims, "ground-truth dims, e.g. 8,4,4")
      ->required();
  respond_cmd->add_option("--world-sigma", world_sigma, "world pair correlation");
  respond_cmd->add_option("--head-factor", head_factor, "ground-truth factor the head reads");
  respond_cmd->add_option("--classes", classes, "number of head classes");
  respond_cmd->add_option("--head-seed", head_seed, "head weight seed");
  respond_cmd->add_option("--factor", factor, "model factor to perturb")->required();
  respond_cmd->add_option("--steps", steps, "walk length");
  respond_cmd->add_option("--gamma", gamma, "walk mean reversion");
  respond_cmd->add_option("--sigma", ou_sigma, "walk noise scale (default: unit variance)");
  respond_cmd->add_flag("--literal", literal,
                        "use the literal recurrence x' = -gamma x + sigma W");
  respond_cmd->add_option("--seed", seed, "walk seed");
  respond_cmd->add_option("--z", z_path, "starting latent CSV (default: world sample)");
  respond_cmd->add_option("--out", out_dir, "output directory")->required();

  std::size_t gc_n = 8, gc_flow = 2, gc_hidden = 8, gc_depth = 2, gc_batch = 4;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the pair loss");
  gc_cmd->add_option("--n", gc_n, "code dimension (even)");
  gc_cmd->add_option("--n-flow", gc_flow, "blocks");
  gc_cmd->add_option("--hidden", gc_hidden, "subnet width");
  gc_cmd->add_option("--depth", gc_depth, "subnet depth");
  gc_cmd->add_option("--seed", seed, "seed");
  gc_cmd->add_option("--batch", gc_batch, "batch rows");

  auto* rt_cmd = app.add_subcommand("roundtrip", "verify inverse(forward(z)) recovers z");
  rt_cmd->add_option("--ckpt", ckpt, "model checkpoint")->required();
  rt_cmd->add_option("--n", count, "number of probe latents");
  rt_cmd->add_option("--seed", seed, "probe seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(config_path, out_override, resume_path, false);
    if (*unsup_cmd) return cmd_train(config_path, out_override, resume_path, true);
    if (*est_cmd) return cmd_estimate_dims(pair_paths, total, out_path);
    if (*swap_cmd) return cmd_swap(ckpt, src_path, donor_path, factor, out_path);
    if (*interp_cmd) return cmd_interp(ckpt, from_path, to_path, steps, out_path);
    if (*attr_cmd) return cmd_attr_vec(ckpt, with_path, without_path, out_path);
    if (*sample_cmd) return cmd_sample(ckpt, count, seed, out_path);
    if (*respond_cmd)
      return cmd_respond(ckpt, world_seed, world_dims, world_sigma, head_factor, classes,
                         head_seed, factor, steps, gamma, ou_sigma, literal, seed, z_path,
                         out_dir);
    if (*gc_cmd) return cmd_gradcheck(gc_n, gc_flow, gc_hidden, gc_depth, seed, gc_batch);
    if (*rt_cmd) return cmd_roundtrip(ckpt, count, seed);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
