// Acceptance suite: one pass/fail line per criterion, exit 0 only when all
// pass. Every tolerance is pinned here, in code. Heavier criteria reuse one
// trained model; all randomness is seeded, so reruns are bit-identical.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "iin/analysis.hpp"
#include "iin/concepts.hpp"
#include "iin/linalg.hpp"
#include "iin/objective.hpp"
#include "iin/trainer.hpp"
#include "support/flow_util.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace iin;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

Tensor slice_block(const Tensor& m, std::size_t off, std::size_t w) {
  Tensor out(Shape{m.rows(), w});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = m.at(i, off + j);
  return out;
}

Tensor row_vec(const Tensor& m, std::size_t i) {
  Tensor v(Shape{m.cols()});
  for (std::size_t j = 0; j < m.cols(); ++j) v.at(j) = m.at(i, j);
  return v;
}

double mean_component_corr(const Tensor& a, const Tensor& b, std::size_t off, std::size_t w) {
  double acc = 0.0;
  for (std::size_t j = 0; j < w; ++j) {
    std::vector<double> xa(a.rows()), xb(b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
      xa[i] = a.at(i, off + j);
      xb[i] = b.at(i, off + j);
    }
    acc += testutil::corr_of(xa, xb);
  }
  return acc / static_cast<double>(w);
}

// ---------------------------------------------------------------------------
// 1. Invertibility suite
// ---------------------------------------------------------------------------

Outcome criterion_invertibility() {
  Outcome out;
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  Rng rng(1001);
  for (std::size_t n_flow : {1u, 6u, 12u}) {
    for (std::size_t n : {8u, 16u, 64u}) {
      FlowConfig fc;
      fc.n_flow = n_flow;
      fc.hidden = 32;
      fc.depth = 2;
      Rng net_rng(Rng::mix(2001, n_flow * 1000 + n));
      InterpretationNetwork net(FactorLayout({n / 2, n / 2}), fc, net_rng);
      net.init_actnorm(testutil::randn_tensor({64, n}, rng, 1.5));
      Tensor z = testutil::randn_tensor({1000, n}, rng);
      Tensor back = net.inverse(net.forward(z).code);
      worst = std::max(worst, testutil::max_abs_diff(back, z));
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.require(worst < 1e-9, "max round-trip error " + fmt(worst) + " >= 1e-9");
  out.require(secs < 30.0, "runtime " + fmt(secs) + "s >= 30s");
  out.note("max err " + fmt(worst) + ", " + fmt(secs) + "s");
  return out;
}

// ---------------------------------------------------------------------------
// 2. Log-det exactness against a finite-difference Jacobian
// ---------------------------------------------------------------------------

Outcome criterion_logdet() {
  Outcome out;
  Rng rng(1002);
  double worst = 0.0;
  for (std::size_t n : {2u, 4u, 8u}) {
    InterpretationNetwork net =
        testutil::make_network(FactorLayout({n / 2, n / 2}), 2, 12, 2, 2002 + n);
    testutil::randomize_parameters(net, rng, 0.1);
    for (int rep = 0; rep < 20; ++rep) {
      Tensor z = testutil::rand_tensor({1, n}, rng, -2.0, 2.0);
      const double analytic = net.forward(z).logdet.at(0);
      const double numeric = oracles::fd_logdet(net, row_vec(z, 0));
      worst = std::max(worst, std::abs(analytic - numeric));
    }
  }
  out.require(worst < 1e-3, "worst |analytic - numeric| " + fmt(worst) + " >= 1e-3");
  out.note("worst gap " + fmt(worst));
  return out;
}

// ---------------------------------------------------------------------------
// 3. Gradient oracle on the full pair loss
// ---------------------------------------------------------------------------

Outcome criterion_gradient() {
  Outcome out;
  Rng rng(1003);
  InterpretationNetwork net = testutil::make_network(FactorLayout({4, 4}), 2, 8, 2, 2003);
  testutil::randomize_parameters(net, rng, 0.1);
  PairBatch pb;
  pb.za = testutil::randn_tensor({4, 8}, rng);
  pb.zb = testutil::randn_tensor({4, 8}, rng);
  pb.factor = 1;
  double worst = 0.0;
  for (Tensor& theta : net.parameters()) {
    worst = std::max(
        worst, gradient_check(
                   [&](Tape& tape, const Tensor&) { return pair_loss(net, pb, 0.9, &tape); },
                   theta, 1e-5));
  }
  out.require(worst < 1e-4, "worst relative error " + fmt(worst) + " >= 1e-4");
  out.note("worst rel err " + fmt(worst));
  return out;
}

// ---------------------------------------------------------------------------
// 4. Loss anchors
// ---------------------------------------------------------------------------

Outcome criterion_anchors() {
  Outcome out;
  InterpretationNetwork net = testutil::make_identity_network(FactorLayout({1, 1}));
  PairBatch zero;
  zero.za = Tensor::matrix(1, 2, {0, 0});
  zero.zb = Tensor::matrix(1, 2, {0, 0});
  zero.factor = 1;
  const double at_zero = pair_loss(net, zero, 0.9).item();
  out.require(at_zero == 0.0, "zero case returned " + fmt(at_zero));

  PairBatch ones;
  ones.za = Tensor::matrix(1, 2, {1, 1});
  ones.zb = Tensor::matrix(1, 2, {1, 1});
  ones.factor = 1;
  const double expected = 2.0 + 1.0 + (1.0 - 0.9) * (1.0 - 0.9) / (1.0 - 0.9 * 0.9);
  const double at_ones = pair_loss(net, ones, 0.9).item();
  out.require(std::abs(at_ones - expected) < 1e-9,
              "unit case " + fmt(at_ones) + " vs " + fmt(expected));
  out.note("unit case " + fmt(at_ones));
  return out;
}

// ---------------------------------------------------------------------------
// 5/6/9 share one trained model
// ---------------------------------------------------------------------------

struct TrainedSetup {
  SyntheticWorld world;
  TrainState state;
  double train_seconds = 0.0;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

TrainedSetup train_disentangling_model() {
  WorldConfig wc;
  wc.seed = 1234;
  wc.dims = FactorLayout({8, 4, 4});
  wc.sigma_true = 0.9;
  SyntheticWorld world(wc);
  WorldPairSource src(world);

  TrainConfig cfg;
  cfg.seed = 99;
  cfg.steps = 3000;
  cfg.batch = 25;
  cfg.lr = 1e-4;
  cfg.sigma_ab = 0.9;
  cfg.n_flow = 6;
  cfg.hidden = 96;
  cfg.depth = 2;
  TrainState st = make_train_state(FactorLayout({8, 4, 4}), cfg);

  const auto start = std::chrono::steady_clock::now();
  TrainResult res = train(st, src, cfg);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  double tail = 0.0;
  for (std::size_t i = res.metrics.size() - 100; i < res.metrics.size(); ++i)
    tail += res.metrics[i].loss;
  TrainedSetup setup{std::move(world), std::move(st), secs, res.metrics.front().loss,
                     tail / 100.0};
  return setup;
}

Outcome criterion_disentanglement(const TrainedSetup& setup) {
  Outcome out;
  const SyntheticWorld& world = setup.world;
  const InterpretationNetwork& net = setup.state.net;
  const FactorLayout& layout = net.layout();

  Tensor g = world.sample_ground_truth(2000, 999999);
  Tensor code = net.forward(world.mix(g)).code;
  for (std::size_t f = 1; f <= 2; ++f) {
    Tensor zf = slice_block(code, layout.offset(f), layout.dims[f]);
    for (std::size_t j = 0; j < 3; ++j) {
      Tensor gj = slice_block(g, world.dims().offset(j), world.dims().dims[j]);
      const double cca = oracles::max_canonical_correlation(zf, gj);
      if (j == f) {
        out.require(cca >= 0.8, "CCA(code_" + std::to_string(f) + ", g_" + std::to_string(j) +
                                    ") = " + fmt(cca) + " < 0.8");
        out.note("CCA f=" + std::to_string(f) + ": " + fmt(cca));
      } else {
        out.require(cca <= 0.3, "CCA(code_" + std::to_string(f) + ", g_" + std::to_string(j) +
                                    ") = " + fmt(cca) + " > 0.3");
      }
    }
  }
  out.require(setup.train_seconds < 300.0,
              "training took " + fmt(setup.train_seconds) + "s >= 300s");
  const double drop = 1.0 - setup.final_loss / setup.first_loss;
  out.require(drop >= 0.3, "loss drop " + fmt(100 * drop) + "% < 30%");
  out.note(fmt(setup.train_seconds) + "s, loss drop " + fmt(100 * drop) + "%");
  return out;
}

Outcome criterion_swap(const TrainedSetup& setup) {
  Outcome out;
  const SyntheticWorld& world = setup.world;
  const InterpretationNetwork& net = setup.state.net;
  const std::size_t b = 500;
  Tensor g_src = world.sample_ground_truth(b, 777);
  Tensor g_don = world.sample_ground_truth(b, 778);
  Tensor z_src = world.mix(g_src);
  Tensor z_don = world.mix(g_don);

  for (std::size_t f = 1; f <= 2; ++f) {
    Tensor swapped(Shape{b, 16});
    for (std::size_t i = 0; i < b; ++i) {
      Tensor z_star = swap_factor(net, row_vec(z_src, i), row_vec(z_don, i), f);
      for (std::size_t j = 0; j < 16; ++j) swapped.at(i, j) = z_star.at(j);
    }
    Tensor g_star = world.unmix(swapped);
    const double donor_corr =
        mean_component_corr(g_star, g_don, world.dims().offset(f), world.dims().dims[f]);
    out.require(donor_corr >= 0.8, "factor " + std::to_string(f) + " follows donor at " +
                                       fmt(donor_corr) + " < 0.8");
    if (f == 1) out.note("donor corr " + fmt(donor_corr));
    for (std::size_t j = 0; j <= 2; ++j) {
      if (j == f) continue;
      const double keep_corr =
          mean_component_corr(g_star, g_src, world.dims().offset(j), world.dims().dims[j]);
      out.require(keep_corr >= 0.8, "factor " + std::to_string(j) + " drifts from source, " +
                                        fmt(keep_corr) + " < 0.8");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// 7. Dimensionality estimation: rank agreement plus the exact identical case
// ---------------------------------------------------------------------------

Outcome criterion_dim_estimation() {
  Outcome out;
  int agreed = 0;
  for (std::uint64_t seed = 21; seed <= 25; ++seed) {
    WorldConfig wc;
    wc.seed = seed;
    wc.dims = FactorLayout({6, 7, 2, 1});  // distinct semantic widths 7 > 2 > 1
    wc.sigma_true = 0.9;
    SyntheticWorld world(wc);
    std::vector<double> scores;
    for (std::size_t f = 1; f <= 3; ++f) {
      ScoreAccumulator acc(16);
      PairBatch pb = world.sample_pairs(f, 4000, 100 + f);
      acc.add(pb.za, pb.zb);
      scores.push_back(acc.score());
    }
    if (scores[0] > scores[1] && scores[1] > scores[2]) ++agreed;
  }
  out.require(agreed == 5, "rank agreement only " + std::to_string(agreed) + "/5");

  Rng rng(1007);
  Tensor za = testutil::randn_tensor({64, 16}, rng);
  const double s_identical = score_concept(za, za.clone());
  out.require(s_identical == 16.0, "identical-pair score " + fmt(s_identical) + " != 16");
  out.note("rank 5/5, identical score " + fmt(s_identical));
  return out;
}

// ---------------------------------------------------------------------------
// 8. Unsupervised Gaussianization on linear-mixed data
// ---------------------------------------------------------------------------

Outcome criterion_unsupervised() {
  Outcome out;
  const std::size_t n = 4;
  Rng arng(501);
  Tensor q = random_orthogonal(n, arng);
  Tensor a(Shape{n, n});
  const double diag[4] = {1.6, 0.7, 1.2, 0.9};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) = q.at(i, j) * diag[j];

  Rng drng(502);
  Tensor data = matmul(testutil::randn_tensor({8192, n}, drng), transpose(a));
  MemoryLatentSource src(data.clone());

  TrainConfig cfg;
  cfg.mode = LossMode::unsupervised;
  cfg.seed = 11;
  cfg.steps = 6000;
  cfg.batch = 64;
  cfg.lr = 2e-3;
  cfg.n_flow = 4;
  cfg.hidden = 24;
  cfg.depth = 2;
  TrainState st = make_train_state(FactorLayout({2, 2}), cfg);
  TrainResult res = train_unsup(st, src, cfg);
  out.require(res.status == TrainResult::Status::ok, "training aborted");

  Rng hrng(503);
  Tensor held = matmul(testutil::randn_tensor({4096, n}, hrng), transpose(a));
  Tensor code = st.net.forward(held).code;
  double worst_mean = 0.0, worst_var = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < code.rows(); ++i) mean += code.at(i, j);
    mean /= static_cast<double>(code.rows());
    for (std::size_t i = 0; i < code.rows(); ++i)
      var += (code.at(i, j) - mean) * (code.at(i, j) - mean);
    var /= static_cast<double>(code.rows() - 1);
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_var = std::max(worst_var, std::abs(var - 1.0));
  }
  out.require(worst_mean < 0.1, "per-dim |mean| " + fmt(worst_mean) + " >= 0.1");
  out.require(worst_var < 0.2, "per-dim |var-1| " + fmt(worst_var) + " >= 0.2");

  Rng prng(47);
  double worst_dev = 0.0;
  for (int path = 0; path < 10; ++path) {
    Tensor z1 = matmul(testutil::randn_tensor({1, n}, prng), transpose(a));
    Tensor z2 = matmul(testutil::randn_tensor({1, n}, prng), transpose(a));
    const double endpoint_mean = 0.5 * (nll_bits(st.net, z1) + nll_bits(st.net, z2));
    for (const Tensor& p : interpolate(st.net, row_vec(z1, 0), row_vec(z2, 0), 9)) {
      Tensor row(Shape{1, n});
      for (std::size_t j = 0; j < n; ++j) row.at(0, j) = p.at(j);
      worst_dev = std::max(worst_dev, std::abs(nll_bits(st.net, row) - endpoint_mean));
    }
  }
  out.require(worst_dev <= 1.0, "interpolation nll_bits deviates " + fmt(worst_dev) + " > 1");
  out.note("|mean| " + fmt(worst_mean) + ", |var-1| " + fmt(worst_var) + ", interp dev " +
           fmt(worst_dev));
  return out;
}

// ---------------------------------------------------------------------------
// 9. Response analysis: semantic factor vs residual factor
// ---------------------------------------------------------------------------

Outcome criterion_response(const TrainedSetup& setup) {
  Outcome out;
  const SyntheticWorld& world = setup.world;
  WorldLinearHead head(world, 1, 5, 5);
  OUConfig ou = OUConfig::defaults(100);
  double rate_semantic = 0.0, rate_residual = 0.0;
  const int walks = 20;
  for (int rep = 0; rep < walks; ++rep) {
    Tensor z = row_vec(world.sample_latents(1, 5000 + rep), 0);
    rate_semantic += response_analysis(setup.state.net, head, z, 1, ou, 9000 + rep).change_rate;
    rate_residual += response_analysis(setup.state.net, head, z, 0, ou, 9100 + rep).change_rate;
  }
  rate_semantic /= walks;
  rate_residual /= walks;
  out.require(rate_semantic > 5.0 * rate_residual,
              "semantic rate " + fmt(rate_semantic) + " not > 5x residual rate " +
                  fmt(rate_residual));
  out.note("semantic " + fmt(rate_semantic) + ", residual " + fmt(rate_residual) + " (" +
           fmt(rate_residual > 0 ? rate_semantic / rate_residual : 999.0) + "x)");
  return out;
}

// ---------------------------------------------------------------------------
// 10. OU statistics
// ---------------------------------------------------------------------------

Outcome criterion_ou() {
  Outcome out;
  {
    OUConfig cfg;
    cfg.gamma = 0.3;
    cfg.sigma = 1.0;
    cfg.steps = 100000;
    cfg.literal = true;
    auto walk = ou_walk(Tensor::vector({0.0}), cfg, 1010);
    std::vector<double> xs(walk.size());
    for (std::size_t i = 0; i < walk.size(); ++i) xs[i] = walk[i].at(0);
    const double target = 1.0 / (1.0 - 0.3 * 0.3);
    const double var = testutil::var_of(xs);
    out.require(std::abs(var - target) / target < 0.1,
                "literal stationary variance " + fmt(var) + " vs " + fmt(target));
    const double rho = testutil::lag1_autocorr(xs);
    out.require(std::abs(rho - (-0.3)) < 0.02, "literal lag-1 " + fmt(rho) + " vs -0.3");
    out.note("literal var " + fmt(var) + ", lag1 " + fmt(rho));
  }
  {
    OUConfig cfg = OUConfig::defaults(100000, 0.05);
    auto walk = ou_walk(Tensor::vector({0.0}), cfg, 1011);
    std::vector<double> xs(walk.size());
    for (std::size_t i = 0; i < walk.size(); ++i) xs[i] = walk[i].at(0);
    const double rho = testutil::lag1_autocorr(xs);
    out.require(std::abs(rho - 0.95) < 0.02, "mean-reverting lag-1 " + fmt(rho) + " vs 0.95");
  }
  return out;
}

// ---------------------------------------------------------------------------
// 11. Determinism and persistence
// ---------------------------------------------------------------------------

Outcome criterion_persistence() {
  Outcome out;
  const FactorLayout layout({4, 2, 2});
  WorldConfig wc;
  wc.seed = 3;
  wc.dims = layout;
  wc.sigma_true = 0.9;

  TrainConfig cfg;
  cfg.seed = 5;
  cfg.steps = 60;
  cfg.batch = 16;
  cfg.lr = 1e-3;
  cfg.n_flow = 3;
  cfg.hidden = 16;
  cfg.depth = 2;

  // Bitwise-identical loss curves.
  WorldPairSource src1{SyntheticWorld(wc)}, src2{SyntheticWorld(wc)};
  TrainState s1 = make_train_state(layout, cfg);
  TrainState s2 = make_train_state(layout, cfg);
  TrainResult r1 = train(s1, src1, cfg);
  TrainResult r2 = train(s2, src2, cfg);
  bool curves_equal = r1.metrics.size() == r2.metrics.size();
  for (std::size_t i = 0; curves_equal && i < r1.metrics.size(); ++i)
    curves_equal = r1.metrics[i].loss == r2.metrics[i].loss;
  out.require(curves_equal, "loss curves differ between identical runs");

  // Save/load bitwise.
  const fs::path dir = fs::temp_directory_path() / "iin_acceptance";
  fs::create_directories(dir);
  const std::string ckpt_path = (dir / "model.iin").string();
  save_checkpoint(ckpt_path, make_checkpoint(s1, cfg));
  InterpretationNetwork reloaded = network_from_checkpoint(load_checkpoint(ckpt_path));
  Rng zr(1101);
  Tensor z = testutil::randn_tensor({16, 8}, zr);
  FlowOut fa = s1.net.forward(z);
  FlowOut fb = reloaded.forward(z);
  out.require(testutil::max_abs_diff(fa.code, fb.code) == 0.0 &&
                  testutil::max_abs_diff(fa.logdet, fb.logdet) == 0.0,
              "reloaded model disagrees with the saved one");

  // Resume equivalence, bitwise.
  TrainConfig cfg40 = cfg;
  cfg40.steps = 40;
  WorldPairSource src3{SyntheticWorld(wc)};
  TrainState half = make_train_state(layout, cfg40);
  train(half, src3, cfg40);
  const std::string half_path = (dir / "half.iin").string();
  save_checkpoint(half_path, make_checkpoint(half, cfg40));
  TrainState resumed = state_from_checkpoint(load_checkpoint(half_path), cfg);
  WorldPairSource src4{SyntheticWorld(wc)};
  train(resumed, src4, cfg);
  auto pd = s1.net.parameters();
  auto pr = resumed.net.parameters();
  bool params_equal = pd.size() == pr.size();
  for (std::size_t i = 0; params_equal && i < pd.size(); ++i)
    params_equal = testutil::max_abs_diff(pd[i], pr[i]) == 0.0;
  out.require(params_equal, "resumed parameters differ from the uninterrupted run");

  // Pair file round trip, bitwise.
  Rng pr_rng(1102);
  PairBatch pb;
  pb.za = testutil::randn_tensor({33, 8}, pr_rng);
  pb.zb = testutil::randn_tensor({33, 8}, pr_rng);
  pb.factor = 1;
  const std::string pair_path = (dir / "pairs.ilp").string();
  write_pairs(pair_path, {pb});
  std::vector<PairBatch> back = read_pairs(pair_path, 1024);
  out.require(back.size() == 1 && testutil::max_abs_diff(back[0].za, pb.za) == 0.0 &&
                  testutil::max_abs_diff(back[0].zb, pb.zb) == 0.0,
              "pair file round trip is not bitwise");

  fs::remove_all(dir);
  return out;
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, Outcome>> results(11);

  results[0] = {"invertibility suite", criterion_invertibility()};
  results[1] = {"log-det exactness", criterion_logdet()};
  results[2] = {"gradient oracle", criterion_gradient()};
  results[3] = {"loss anchors", criterion_anchors()};

  std::fprintf(stderr, "[acceptance] training the disentangling model (3000 steps)...\n");
  TrainedSetup setup = train_disentangling_model();
  results[4] = {"disentanglement recovery", criterion_disentanglement(setup)};
  results[5] = {"swap fidelity", criterion_swap(setup)};
  results[6] = {"dimensionality estimation", criterion_dim_estimation()};
  results[7] = {"unsupervised gaussianization", criterion_unsupervised()};
  results[8] = {"response analysis", criterion_response(setup)};
  results[9] = {"ou statistics", criterion_ou()};
  results[10] = {"determinism and persistence", criterion_persistence()};

  bool all_pass = true;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& [name, outcome] = results[i];
    all_pass = all_pass && outcome.pass;
    std::printf("%s criterion %zu: %s%s%s\n", outcome.pass ? "PASS" : "FAIL", i + 1,
                name.c_str(), outcome.detail.empty() ? "" : " — ", outcome.detail.c_str());
  }
  return all_pass ? 0 : 1;
}
