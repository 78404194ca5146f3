#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "iin/analysis.hpp"
#include "iin/trainer.hpp"
#include "support/flow_util.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace iin;
using testutil::make_identity_network;
using testutil::make_network;
using testutil::rand_tensor;
using testutil::randn_tensor;
using testutil::randomize_parameters;

TEST_SUITE("analysis") {

TEST_CASE("swap_factor") {
  SUBCASE("swapping with the source itself is a round trip") {
    Rng rng(81);
    InterpretationNetwork net = make_network(FactorLayout({4, 2, 2}), 3, 12, 2, 810);
    randomize_parameters(net, rng, 0.05);
    Tensor z = rand_tensor({8}, rng, -2.0, 2.0);
    Tensor swapped = swap_factor(net, z, z, 1);
    CHECK(testutil::max_abs_diff(swapped, z) < 1e-9);
  }
  SUBCASE("identity map swaps coordinates directly") {
    InterpretationNetwork net = make_identity_network(FactorLayout({1, 1}));
    Tensor src = Tensor::vector({10, 20});   // (a, b)
    Tensor donor = Tensor::vector({30, 40}); // (c, d)
    Tensor out = swap_factor(net, src, donor, 1);
    CHECK(out.at(0) == 10.0);
    CHECK(out.at(1) == 40.0);
  }
  SUBCASE("swapping twice with the same donor is idempotent") {
    Rng rng(82);
    InterpretationNetwork net = make_network(FactorLayout({4, 2, 2}), 3, 12, 2, 820);
    randomize_parameters(net, rng, 0.05);
    Tensor z = rand_tensor({8}, rng, -2.0, 2.0);
    Tensor donor = rand_tensor({8}, rng, -2.0, 2.0);
    Tensor once = swap_factor(net, z, donor, 2);
    Tensor twice = swap_factor(net, once, donor, 2);
    CHECK(testutil::max_abs_diff(once, twice) < 2e-9);
  }
  SUBCASE("bad factor index") {
    InterpretationNetwork net = make_identity_network(FactorLayout({1, 1}));
    CHECK_THROWS_AS(swap_factor(net, Tensor::vector({1, 2}), Tensor::vector({3, 4}), 5),
                    std::invalid_argument);
  }
}

TEST_CASE("interpolate") {
  SUBCASE("endpoints reproduce the inputs") {
    Rng rng(83);
    InterpretationNetwork net = make_network(FactorLayout({4, 4}), 3, 12, 2, 830);
    randomize_parameters(net, rng, 0.05);
    Tensor z1 = rand_tensor({8}, rng, -2.0, 2.0);
    Tensor z2 = rand_tensor({8}, rng, -2.0, 2.0);
    auto path = interpolate(net, z1, z2, 7);
    REQUIRE(path.size() == 7);
    CHECK(testutil::max_abs_diff(path.front(), z1) < 1e-9);
    CHECK(testutil::max_abs_diff(path.back(), z2) < 1e-9);
  }
  SUBCASE("identity map walks the straight line; midpoint is the exact mean") {
    InterpretationNetwork net = make_identity_network(FactorLayout({1, 1}));
    Tensor z1 = Tensor::vector({0.1, -2.7});
    Tensor z2 = Tensor::vector({3.3, 0.9});
    auto path = interpolate(net, z1, z2, 3);
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(path[1].at(j) == (z1.at(j) + z2.at(j)) / 2.0);  // bitwise
  }
  SUBCASE("needs two steps") {
    InterpretationNetwork net = make_identity_network(FactorLayout({1, 1}));
    CHECK_THROWS_AS(interpolate(net, Tensor::vector({1, 2}), Tensor::vector({3, 4}), 1),
                    std::invalid_argument);
  }
}

TEST_CASE("attribute vectors") {
  SUBCASE("two-point example") {
    Tensor with = Tensor::vector({1, 0});
    Tensor without = Tensor::vector({0, 1});
    Tensor dir = attribute_vector({with}, {without});
    CHECK(dir.at(0) == -1.0);
    CHECK(dir.at(1) == 1.0);
  }
  SUBCASE("equal sets give zero") {
    Tensor a = Tensor::vector({2, 3});
    Tensor dir = attribute_vector({a, a}, {a, a});
    CHECK(dir.at(0) == 0.0);
    CHECK(dir.at(1) == 0.0);
  }
  SUBCASE("antisymmetric under set exchange") {
    Rng rng(84);
    std::vector<Tensor> s1{randn_tensor({4}, rng), randn_tensor({4}, rng)};
    std::vector<Tensor> s2{randn_tensor({4}, rng), randn_tensor({4}, rng),
                           randn_tensor({4}, rng)};
    Tensor d12 = attribute_vector(s1, s2);
    Tensor d21 = attribute_vector(s2, s1);
    for (std::size_t j = 0; j < 4; ++j) CHECK(d12.at(j) == doctest::Approx(-d21.at(j)));
  }
  SUBCASE("empty set is rejected") {
    CHECK_THROWS_AS(attribute_vector({}, {Tensor::vector({1})}), std::invalid_argument);
  }
  SUBCASE("application walks the code monotonically under the identity map") {
    InterpretationNetwork net = make_identity_network(FactorLayout({2, 2}));
    Tensor dir = Tensor::vector({0, 0, 1, 1});
    Tensor z = Tensor::vector({0, 0, 0, 0});
    double prev = -1e9;
    for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
      Tensor walked = apply_attribute(net, z, dir, alpha, 1);
      CHECK(walked.at(2) > prev);
      prev = walked.at(2);
      CHECK(walked.at(0) == 0.0);  // residual untouched
    }
  }
}

TEST_CASE("sample determinism and distribution") {
  InterpretationNetwork net = make_identity_network(FactorLayout({2, 2}));
  Tensor s1 = sample(net, 200, 42);
  Tensor s2 = sample(net, 200, 42);
  CHECK(testutil::max_abs_diff(s1, s2) == 0.0);
  Tensor s3 = sample(net, 200, 43);
  CHECK(testutil::max_abs_diff(s1, s3) > 0.0);

  // Identity map: samples are standard normal per dimension (KS test).
  Tensor big = sample(net, 10000, 7);
  for (std::size_t j = 0; j < 4; ++j) {
    std::vector<double> col(big.rows());
    for (std::size_t i = 0; i < big.rows(); ++i) col[i] = big.at(i, j);
    CHECK(oracles::ks_normal_pvalue(col) > 0.01);
  }
}

TEST_CASE("ou_walk recurrences") {
  SUBCASE("literal with gamma 0 and sigma 0 collapses to zero") {
    OUConfig cfg;
    cfg.gamma = 0.0;
    cfg.sigma = 0.0;
    cfg.steps = 5;
    cfg.literal = true;
    auto walk = ou_walk(Tensor::vector({8.0, -3.0}), cfg, 1);
    for (const Tensor& s : walk)
      for (std::size_t j = 0; j < 2; ++j) CHECK(s.at(j) == 0.0);
  }
  SUBCASE("mean-reverting geometric decay") {
    OUConfig cfg;
    cfg.gamma = 0.5;
    cfg.sigma = 0.0;
    cfg.steps = 3;
    cfg.literal = false;
    auto walk = ou_walk(Tensor::vector({8.0}), cfg, 1);
    CHECK(walk[0].at(0) == doctest::Approx(4.0));
    CHECK(walk[1].at(0) == doctest::Approx(2.0));
    CHECK(walk[2].at(0) == doctest::Approx(1.0));
  }
  SUBCASE("literal stationary variance and lag-1 autocorrelation") {
    OUConfig cfg;
    cfg.gamma = 0.3;
    cfg.sigma = 1.0;
    cfg.steps = 100000;
    cfg.literal = true;
    auto walk = ou_walk(Tensor::vector({0.0}), cfg, 9);
    std::vector<double> xs(walk.size());
    for (std::size_t i = 0; i < walk.size(); ++i) xs[i] = walk[i].at(0);
    const double target_var = 1.0 / (1.0 - 0.09);
    CHECK(testutil::var_of(xs) == doctest::Approx(target_var).epsilon(0.1));
    CHECK(testutil::lag1_autocorr(xs) == doctest::Approx(-0.3).epsilon(0.067));
  }
  SUBCASE("mean-reverting lag-1 autocorrelation approaches 1-gamma") {
    OUConfig cfg = OUConfig::defaults(100000, 0.05);
    auto walk = ou_walk(Tensor::vector({0.0}), cfg, 10);
    std::vector<double> xs(walk.size());
    for (std::size_t i = 0; i < walk.size(); ++i) xs[i] = walk[i].at(0);
    CHECK(std::abs(testutil::lag1_autocorr(xs) - 0.95) < 0.02);
    CHECK(testutil::var_of(xs) == doctest::Approx(1.0).epsilon(0.1));
  }
  SUBCASE("literal gamma magnitude must stay below one") {
    OUConfig cfg;
    cfg.gamma = 1.0;
    cfg.literal = true;
    CHECK_THROWS_AS(ou_walk(Tensor::vector({1.0}), cfg, 1), std::invalid_argument);
  }
}

TEST_CASE("response analysis") {
  WorldConfig wc;
  wc.seed = 19;
  wc.dims = FactorLayout({8, 4, 4});
  wc.sigma_true = 0.9;
  SyntheticWorld world(wc);
  WorldLinearHead head(world, 1, 5, 3);

  InterpretationNetwork net = make_identity_network(FactorLayout({8, 4, 4}), 2, 8, 1, 85);
  Tensor z = world.sample_latents(1, 0);
  Tensor z_vec(Shape{16}, std::vector<double>(z.data(), z.data() + 16));

  SUBCASE("frozen walk never changes the prediction") {
    OUConfig cfg;
    cfg.gamma = 0.0;
    cfg.sigma = 0.0;
    cfg.steps = 10;
    cfg.literal = false;
    ResponseReport rep = response_analysis(net, head, z_vec, 1, cfg, 5);
    CHECK(rep.change_rate == 0.0);
    REQUIRE(rep.predictions.size() == 10);
    for (int p : rep.predictions) CHECK(p == rep.base_prediction);
    for (double v : rep.logit_variance) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("report shapes and determinism") {
    OUConfig cfg = OUConfig::defaults(20);
    ResponseReport r1 = response_analysis(net, head, z_vec, 2, cfg, 11);
    ResponseReport r2 = response_analysis(net, head, z_vec, 2, cfg, 11);
    REQUIRE(r1.logits.size() == 20);
    CHECK(r1.logits[0].size() == 5);
    CHECK(r1.log_softmax[3].size() == 5);
    for (std::size_t s = 0; s < 20; ++s)
      for (std::size_t c = 0; c < 5; ++c) CHECK(r1.logits[s][c] == r2.logits[s][c]);
    // log-softmax rows are valid log-probabilities
    for (const auto& row : r1.log_softmax) {
      double total = 0.0;
      for (double v : row) total += std::exp(v);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("attribute walks move the targeted ground-truth factor monotonically") {
  WorldConfig wc;
  wc.seed = 31;
  wc.dims = FactorLayout({4, 2, 2});
  wc.sigma_true = 0.9;
  SyntheticWorld world(wc);
  WorldPairSource src(world);
  TrainConfig cfg;
  cfg.seed = 8;
  cfg.steps = 800;
  cfg.batch = 25;
  cfg.lr = 1e-3;
  cfg.n_flow = 4;
  cfg.hidden = 24;
  cfg.depth = 2;
  TrainState st = make_train_state(FactorLayout({4, 2, 2}), cfg);
  REQUIRE(train(st, src, cfg).status == TrainResult::Status::ok);

  // Split world samples by the sign of the first g_1 component and derive the
  // low-to-high direction from their codes.
  const std::size_t g1_off = wc.dims.offset(1);
  Tensor g = world.sample_ground_truth(400, 71);
  Tensor codes = st.net.forward(world.mix(g)).code;
  std::vector<Tensor> low, high;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    Tensor code(Shape{8});
    for (std::size_t j = 0; j < 8; ++j) code.at(j) = codes.at(i, j);
    if (g.at(i, g1_off) < -0.5) low.push_back(code);
    if (g.at(i, g1_off) > 0.5) high.push_back(code);
  }
  REQUIRE(low.size() > 10);
  REQUIRE(high.size() > 10);
  Tensor dir = attribute_vector(low, high);  // mean(high) - mean(low)

  Tensor probes = world.sample_latents(100, 72);
  double prev = -1e9;
  for (double alpha : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    double mean_g1 = 0.0;
    for (std::size_t i = 0; i < probes.rows(); ++i) {
      Tensor z(Shape{8});
      for (std::size_t j = 0; j < 8; ++j) z.at(j) = probes.at(i, j);
      Tensor walked = apply_attribute(st.net, z, dir, alpha, 1);
      Tensor row(Shape{1, 8});
      for (std::size_t j = 0; j < 8; ++j) row.at(0, j) = walked.at(j);
      mean_g1 += world.unmix(row).at(0, g1_off);
    }
    mean_g1 /= probes.rows();
    CHECK(mean_g1 > prev);
    prev = mean_g1;
  }
}

TEST_CASE("pca projections") {
  SUBCASE("data on a line concentrates variance in one component") {
    Rng rng(86);
    Tensor data(Shape{200, 3});
    for (std::size_t i = 0; i < 200; ++i) {
      const double t = rng.normal();
      data.at(i, 0) = 2.0 * t;
      data.at(i, 1) = -t;
      data.at(i, 2) = 0.5 * t;
    }
    PcaResult res = pca(data, 1);
    CHECK(res.explained_ratio[0] > 0.999);
    // Sign convention: the largest-magnitude loading is positive.
    CHECK(res.components.at(0, 0) > 0.0);
  }
  SUBCASE("isotropic Gaussian spreads variance evenly") {
    Rng rng(87);
    Tensor data = randn_tensor({10000, 3}, rng);
    PcaResult res = pca(data, 2);
    for (double r : res.explained_ratio) CHECK(r == doctest::Approx(1.0 / 3.0).epsilon(0.10));
  }
  SUBCASE("projections are centered") {
    Rng rng(88);
    Tensor data = rand_tensor({500, 4}, rng, 3.0, 9.0);
    Tensor proj = pca_embed(data, 2);
    for (std::size_t d = 0; d < 2; ++d) {
      double mean = 0.0;
      for (std::size_t i = 0; i < proj.rows(); ++i) mean += proj.at(i, d);
      CHECK(std::abs(mean / proj.rows()) < 1e-10);
    }
  }
  SUBCASE("degenerate data stays finite") {
    Tensor data(Shape{10, 3}, 5.0);
    Tensor proj = pca_embed(data, 1);
    for (std::size_t i = 0; i < proj.size(); ++i) CHECK(std::isfinite(proj.data()[i]));
  }
  SUBCASE("bounds") {
    Tensor data(Shape{10, 3}, 1.0);
    CHECK_THROWS_AS(pca(data, 3), std::invalid_argument);
    CHECK_THROWS_AS(pca(Tensor(Shape{2, 3}), 2), std::invalid_argument);
  }
}

}  // TEST_SUITE
