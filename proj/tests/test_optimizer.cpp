#include "ecdc/optimizer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace ecdc;

namespace {

StateMap fock_map(int n_from, int n_to, const HilbertConfig& cfg) {
  StateMap map;
  map.entries.push_back({hybrid_ket(fock_state(n_from, cfg), 0, cfg),
                         hybrid_ket(fock_state(n_to, cfg), 0, cfg), 1.0});
  return map;
}

// Random normalized hybrid ket supported on the lowest `support` Fock levels.
Vec random_hybrid(std::mt19937& rng, const HilbertConfig& cfg, int support) {
  std::normal_distribution<double> g;
  Vec v = Vec::Zero(hybrid_dim(cfg));
  for (int q = 0; q < 2; ++q)
    for (int n = 0; n < support; ++n) v(q * cfg.n_osc + n) = cxd(g(rng), g(rng));
  return v / v.norm();
}

}  // namespace

TEST(InitParams, SameSeedSameBatch) {
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{10, 2};
  cfg.batch = 6;
  cfg.depth = 3;
  cfg.seed = 42;
  std::vector<EcdParams> a = init_params(cfg);
  std::vector<EcdParams> b = init_params(cfg);
  ASSERT_EQ(a.size(), b.size());
  for (size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].betas, b[j].betas);
    EXPECT_EQ(a[j].phis, b[j].phis);
    EXPECT_EQ(a[j].thetas, b[j].thetas);
  }

  // Circuit j is a function of (seed, index_offset + j) alone, so a shifted
  // single-circuit init must reproduce it exactly.
  for (int j = 0; j < cfg.batch; ++j) {
    OptimizerConfig one = cfg;
    one.batch = 1;
    one.index_offset = std::uint64_t(j);
    std::vector<EcdParams> s = init_params(one);
    EXPECT_EQ(a[j].betas, s[0].betas);
    EXPECT_EQ(a[j].phis, s[0].phis);
    EXPECT_EQ(a[j].thetas, s[0].thetas);
  }

  OptimizerConfig other = cfg;
  other.seed = 43;
  EXPECT_NE(init_params(other)[0].betas[0], a[0].betas[0]);
}

TEST(InitParams, RespectsBounds) {
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{10, 2};
  cfg.batch = 200;
  cfg.depth = 2;
  cfg.seed = 7;
  cfg.beta_radius = 0.0;
  cfg.theta_min = 0.5;
  cfg.theta_max = 0.75;
  cfg.phi_min = -0.25;
  cfg.phi_max = 0.25;
  for (const EcdParams& p : init_params(cfg)) {
    for (cxd b : p.betas) EXPECT_EQ(b, cxd(0.0, 0.0));
    for (double t : p.thetas) {
      EXPECT_GE(t, 0.5);
      EXPECT_LE(t, 0.75);
    }
    for (double f : p.phis) {
      EXPECT_GE(f, -0.25);
      EXPECT_LE(f, 0.25);
    }
  }
}

TEST(InitParams, UniformDiskRadialMoment) {
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{10, 2};
  cfg.batch = 4000;
  cfg.depth = 0;
  cfg.seed = 5;
  cfg.beta_radius = 1.8;
  double mean_r = 0.0, max_r = 0.0;
  for (const EcdParams& p : init_params(cfg)) {
    double r = std::abs(p.betas[0]);
    mean_r += r;
    max_r = std::max(max_r, r);
  }
  mean_r /= cfg.batch;
  // E|beta| = (2/3) R for a uniform disk; 0.02 R is about five sigma here.
  EXPECT_NEAR(mean_r, 2.0 / 3.0 * cfg.beta_radius, 0.02 * cfg.beta_radius);
  EXPECT_LE(max_r, cfg.beta_radius);
}

TEST(Gradient, MatchesCentralDifferences) {
  // States sit on the lowest levels and the displacement radius stays well
  // inside the budget: the displacement derivative identity is exact for the
  // infinite oscillator, so the comparison needs the truncation corner to be
  // unpopulated, which is also the regime the optimizer is meant to run in.
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{30, 6};
  cfg.batch = 1;
  cfg.depth = 4;
  cfg.beta_radius = 0.4;
  std::mt19937 rng(2024);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    cfg.seed = 1000 + trial;
    std::vector<EcdParams> batch = init_params(cfg);
    StateMap map;
    map.kind = (trial % 2 == 0) ? StateMap::Cost::transfer : StateMap::Cost::overlap;
    map.entries.push_back({random_hybrid(rng, cfg.trunc, 6), random_hybrid(rng, cfg.trunc, 6), 1.0});
    map.entries.push_back({random_hybrid(rng, cfg.trunc, 6), random_hybrid(rng, cfg.trunc, 6), 0.6});
    auto [cost, grad] = cost_and_gradient(batch, map, cfg);
    ASSERT_TRUE(std::isfinite(cost));
    double scale = std::max(1.0, grad.cwiseAbs().maxCoeff());
    for (int row = 0; row < grad.rows(); ++row) {
      auto shifted = [&](double d) {
        std::vector<EcdParams> b2 = batch;
        int k = row / 4;
        switch (row % 4) {
          case 0: b2[0].betas[k] += d; break;
          case 1: b2[0].betas[k] += cxd(0.0, d); break;
          case 2: b2[0].phis[k] += d; break;
          default: b2[0].thetas[k] += d; break;
        }
        return cost_and_gradient(b2, map, cfg).first;
      };
      double fd = (shifted(h) - shifted(-h)) / (2.0 * h);
      EXPECT_NEAR(grad(row, 0), fd, 1e-5 * scale) << "trial " << trial << " row " << row;
    }
  }
}

TEST(Gradient, SingleRotationClosedForm) {
  // Depth 0 on |0,g> -> |0,e> leaves one analytic knob: F = sin^2(theta/2),
  // so d cost / d theta = -tan(theta/2) and every other derivative vanishes.
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{12, 3};
  cfg.batch = 1;
  cfg.depth = 0;
  StateMap map = fock_map(0, 0, cfg.trunc);
  map.entries[0].psi_t = hybrid_ket(fock_state(0, cfg.trunc), 1, cfg.trunc);

  double theta = 0.7;
  EcdParams p;
  p.betas = {cxd(0.0, 0.0)};
  p.phis = {0.3};
  p.thetas = {theta};
  double fid = std::pow(std::sin(0.5 * theta), 2);
  EXPECT_NEAR(map_fidelity(p, map, cfg.trunc), fid, 1e-14);

  auto [cost, grad] = cost_and_gradient({p}, map, cfg);
  EXPECT_NEAR(cost, std::log(1.0 - fid), 1e-12);
  EXPECT_NEAR(grad(3, 0), -std::tan(0.5 * theta), 1e-10);
  EXPECT_NEAR(grad(2, 0), 0.0, 1e-12);
  EXPECT_NEAR(grad(0, 0), 0.0, 1e-10);
  EXPECT_NEAR(grad(1, 0), 0.0, 1e-10);
}

TEST(Gradient, FiniteAtSaturatedFidelity) {
  // A perfect map drives log(1-F) into its clamp; the cost and gradient must
  // stay finite there rather than produce inf or NaN.
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{12, 3};
  cfg.batch = 1;
  cfg.depth = 0;
  Vec psi = hybrid_ket(coherent_state(cxd(0.4, -0.1), cfg.trunc), 0, cfg.trunc);
  StateMap map;
  map.entries.push_back({psi, psi, 1.0});
  EcdParams p;
  p.betas = {cxd(0.0, 0.0)};
  p.phis = {0.0};
  p.thetas = {0.0};
  EXPECT_NEAR(map_fidelity(p, map, cfg.trunc), 1.0, 1e-12);
  auto [cost, grad] = cost_and_gradient({p}, map, cfg);
  EXPECT_TRUE(std::isfinite(cost));
  EXPECT_TRUE(grad.allFinite());
}

TEST(CostAndGradient, BatchColumnsAreIndependent) {
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{20, 4};
  cfg.batch = 3;
  cfg.depth = 3;
  cfg.seed = 11;
  std::vector<EcdParams> batch = init_params(cfg);
  std::mt19937 rng(99);
  for (StateMap::Cost kind : {StateMap::Cost::transfer, StateMap::Cost::overlap}) {
    StateMap map;
    map.kind = kind;
    map.entries.push_back({random_hybrid(rng, cfg.trunc, 6), random_hybrid(rng, cfg.trunc, 6), 1.0});
    map.entries.push_back({random_hybrid(rng, cfg.trunc, 6), random_hybrid(rng, cfg.trunc, 6), 0.5});
    auto [cost3, grad3] = cost_and_gradient(batch, map, cfg);
    OptimizerConfig one = cfg;
    one.batch = 1;
    double cost_sum = 0.0;
    for (int j = 0; j < 3; ++j) {
      auto [c, g] = cost_and_gradient({batch[j]}, map, one);
      cost_sum += c;
      double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
      EXPECT_LT((grad3.col(j) - g.col(0)).cwiseAbs().maxCoeff(), 1e-12 * scale);
    }
    EXPECT_NEAR(cost3, cost_sum, 1e-12 * std::max(1.0, std::abs(cost_sum)));
  }
}

TEST(Optimize, TrajectoriesSeparateAcrossBatch) {
  // Adam is elementwise and the cost is a sum over circuits, so each column
  // of a batched run must retrace the matching single-circuit run.
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{16, 4};
  cfg.batch = 3;
  cfg.depth = 2;
  cfg.seed = 21;
  cfg.steps_per_epoch = 8;
  cfg.max_epochs = 2;
  cfg.learning_rate = 3e-3;
  cfg.target_fidelity = 0.999999;
  StateMap map = fock_map(0, 1, cfg.trunc);
  OptimizationResult full = optimize(map, cfg);
  ASSERT_EQ(full.epoch_fidelities.size(), 2u);
  for (int j = 0; j < cfg.batch; ++j) {
    OptimizerConfig one = cfg;
    one.batch = 1;
    one.index_offset = std::uint64_t(j);
    OptimizationResult r = optimize(map, one);
    ASSERT_EQ(r.epoch_fidelities.size(), 2u);
    for (int e = 0; e < 2; ++e)
      EXPECT_NEAR(full.epoch_fidelities[e][j], r.epoch_fidelities[e][0], 1e-9);
  }
}

TEST(Optimize, ReachesTargetOnFockOne) {
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{30, 6};
  cfg.batch = 30;
  cfg.depth = 4;
  cfg.seed = 3;
  cfg.max_epochs = 12;
  StateMap map = fock_map(0, 1, cfg.trunc);
  OptimizationResult r = optimize(map, cfg);
  EXPECT_EQ(r.termination, "target_reached");
  EXPECT_GE(r.best_fidelity, 0.99);
  EXPECT_LE(r.best_fidelity, 1.0 + 1e-12);
  ASSERT_GE(r.best_circuit, 0);
  EXPECT_LT(r.best_circuit, cfg.batch);
  EXPECT_EQ(r.epochs_used, int(r.epoch_fidelities.size()));
  EXPECT_EQ(int(r.best_params.betas.size()), cfg.depth + 1);

  // The reported winner must reproduce through the dense reference model.
  EXPECT_NEAR(map_fidelity(r.best_params, map, cfg.trunc), r.best_fidelity, 1e-9);

  double fmax = 0.0;
  for (const auto& ep : r.epoch_fidelities)
    for (double f : ep) fmax = std::max(fmax, f);
  EXPECT_DOUBLE_EQ(fmax, r.best_fidelity);
}

TEST(Optimize, DepthSweepReportsMinimalDepth) {
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{30, 6};
  cfg.batch = 30;
  cfg.seed = 3;
  cfg.max_epochs = 15;
  StateMap map = fock_map(0, 1, cfg.trunc);
  DepthSweepResult s = depth_sweep(map, cfg, {2, 3, 4}, 0.99);
  ASSERT_EQ(s.depths.size(), 3u);
  EXPECT_EQ(s.minimal_depth, 4);
  // Expressivity rises with depth on this map; two layers saturate well short.
  EXPECT_LT(s.best_fidelities[0], s.best_fidelities[1]);
  EXPECT_LT(s.best_fidelities[1], s.best_fidelities[2]);
  EXPECT_LT(s.best_fidelities[0], 0.80);
  EXPECT_GE(s.best_fidelities[2], 0.99);
}

TEST(GkpGateMap, OverlapMetricSeesThePhase) {
  HilbertConfig trunc{50, 10};
  LogicalSet logical = gkp_logical_states(GkpCode{0.306}, trunc);
  Vec pz = hybrid_ket(logical.plus_z, 0, trunc);
  Vec mz = hybrid_ket(logical.minus_z, 0, trunc);
  StateMap map;
  map.kind = StateMap::Cost::overlap;
  map.entries.push_back({pz, pz, 1.0});
  map.entries.push_back({mz, Vec(std::exp(iu * 0.5 * pi) * mz), 1.0});

  EcdParams id;
  id.betas = {cxd(0.0, 0.0)};
  id.phis = {0.0};
  id.thetas = {0.0};
  // Identity circuit: |+Z> scores 1 while the phased |-Z> target scores
  // Re(e^{-i pi/2}) = 0, so the overlap metric lands at 1/2. The modulus
  // metric is blind to the phase and must stay at 1.
  EXPECT_NEAR(map_fidelity(id, map, trunc), 0.5, 1e-9);
  StateMap tmap = map;
  tmap.kind = StateMap::Cost::transfer;
  EXPECT_NEAR(map_fidelity(id, tmap, trunc), 1.0, 1e-9);
}

TEST(GkpGateMap, IdealPhaseGateTransferMatrix) {
  HilbertConfig trunc{50, 10};
  LogicalSet logical = gkp_logical_states(GkpCode{0.306}, trunc);
  int n = trunc.n_osc;
  Mat pc = logical.plus_z * logical.plus_z.adjoint() + logical.minus_z * logical.minus_z.adjoint();
  Mat u_osc = logical.plus_z * logical.plus_z.adjoint() +
              std::exp(iu * 0.5 * pi) * (logical.minus_z * logical.minus_z.adjoint()) +
              (Mat::Identity(n, n) - pc);
  Mat zero = Mat::Zero(n, n);
  Eigen::Matrix4d r = pauli_transfer_matrix(hybrid_blocks(u_osc, zero, zero, u_osc), logical);

  // diag(1, i) on the codewords is the S gate: X -> Y, Y -> -X, Z -> Z.
  Eigen::Matrix4d want;
  want << 1, 0, 0, 0, 0, 0, -1, 0, 0, 1, 0, 0, 0, 0, 0, 1;
  EXPECT_LT((r - want).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_NEAR(average_fidelity(want, r), 1.0, 1e-3);
}

TEST(Validation, RejectsBadConfigsAndMaps) {
  OptimizerConfig cfg;
  cfg.trunc = HilbertConfig{10, 2};

  OptimizerConfig bad = cfg;
  bad.batch = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.learning_rate = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.target_fidelity = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.beta_radius = -0.1;
  EXPECT_THROW(bad.validate(), ConfigError);

  StateMap empty;
  EXPECT_THROW(empty.validate(cfg.trunc), ConfigError);

  Vec z = Vec::Zero(2 * cfg.trunc.n_osc);
  StateMap unnorm;
  unnorm.entries.push_back({z, z, 1.0});
  EXPECT_THROW(unnorm.validate(cfg.trunc), ConfigError);

  StateMap osc_only;
  osc_only.entries.push_back({fock_state(0, cfg.trunc), fock_state(0, cfg.trunc), 1.0});
  EXPECT_THROW(osc_only.validate(cfg.trunc), ConfigError);

  EXPECT_THROW(optimize_gkp_gate("H", 0.306, cfg), ConfigError);
}
