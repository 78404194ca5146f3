#pragma once

// Builders for networks with hand-set parameters, used across the suites.

#include <cmath>
#include <cstdint>

#include "iin/flow.hpp"
#include "iin/rng.hpp"

namespace testutil {

inline iin::InterpretationNetwork make_network(const iin::FactorLayout& layout,
                                               std::size_t n_flow, std::size_t hidden,
                                               std::size_t depth, std::uint64_t seed) {
  iin::FlowConfig cfg;
  cfg.n_flow = n_flow;
  cfg.hidden = hidden;
  cfg.depth = depth;
  iin::Rng rng(seed);
  return iin::InterpretationNetwork(layout, cfg, rng);
}

// Identity map: identity permutations, zero couplings (fresh subnets already
// output zero), actnorm left at scale 1 / shift 0 and marked initialized.
inline iin::InterpretationNetwork make_identity_network(const iin::FactorLayout& layout,
                                                        std::size_t n_flow = 1,
                                                        std::size_t hidden = 8,
                                                        std::size_t depth = 1,
                                                        std::uint64_t seed = 0) {
  iin::InterpretationNetwork net = make_network(layout, n_flow, hidden, depth, seed);
  for (iin::Block& b : net.blocks()) b.shuffle = iin::Shuffle::identity(layout.total());
  net.set_actnorm_identity();
  return net;
}

// Sets the coupling to constant scales/shifts by writing the output biases of
// its subnets; output weights are zero, so the subnets become constant maps.
inline void set_constant_coupling(iin::Coupling& c, double s1, double t1, double s2, double t2) {
  auto set_bias = [](iin::Subnet& net, double value) {
    iin::Tensor& b = net.biases.back();
    for (std::size_t i = 0; i < b.size(); ++i) b.at(i) = value;
  };
  // exp(clamp * tanh(r)) == s  =>  r = atanh(log(s) / clamp)
  set_bias(c.s1, std::atanh(std::log(s1) / c.clamp));
  set_bias(c.t1, t1);
  set_bias(c.s2, std::atanh(std::log(s2) / c.clamp));
  set_bias(c.t2, t2);
}

// Random non-identity net: perturbs every parameter, including the zero
// output layers, and gives actnorm mild random scales.
inline void randomize_parameters(iin::InterpretationNetwork& net, iin::Rng& rng,
                                 double sd = 0.3) {
  for (iin::Block& b : net.blocks()) {
    auto jitter = [&](iin::Subnet& s) {
      for (iin::Tensor& w : s.weights)
        for (std::size_t i = 0; i < w.size(); ++i) w.at(i) = sd * rng.normal();
      for (iin::Tensor& bias : s.biases)
        for (std::size_t i = 0; i < bias.size(); ++i) bias.at(i) = 0.1 * sd * rng.normal();
    };
    jitter(b.coupling.s1);
    jitter(b.coupling.t1);
    jitter(b.coupling.s2);
    jitter(b.coupling.t2);
    iin::Tensor& sc = b.actnorm.scale_param();
    iin::Tensor& sh = b.actnorm.shift_param();
    for (std::size_t i = 0; i < sc.size(); ++i) {
      sc.at(i) = 0.7 + 0.8 * rng.uniform();
      sh.at(i) = 0.2 * rng.normal();
    }
    b.actnorm.mark_initialized(true);
  }
}

}  // namespace testutil
