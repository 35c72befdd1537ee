// Characteristic-function pipeline: exact traces against closed forms, the
// shot-noise Ramsey simulator, half-grid post-processing, maximum-likelihood
// reconstruction round-trips, and the marginal squeezing / Fisher numbers.

#include <gtest/gtest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "ecdc/codes.hpp"
#include "ecdc/tomography.hpp"

using namespace ecdc;

namespace {

Mat pure(const Vec& psi) { return psi * psi.adjoint(); }

// Joint qubit (x) oscillator state with the qubit in |g>.
Mat with_ground_qubit(const Mat& rho) {
  int n = int(rho.rows());
  Mat j = Mat::Zero(2 * n, 2 * n);
  j.topLeftCorner(n, n) = rho;
  return j;
}

double laguerre(int n, double x) {
  double lm = 1.0, l = 1.0 - x;
  if (n == 0) return lm;
  for (int k = 1; k < n; ++k) {
    double next = ((2.0 * k + 1.0 - x) * l - k * lm) / (k + 1.0);
    lm = l;
    l = next;
  }
  return l;
}

Vec pad(const Vec& v, int n) {
  Vec out = Vec::Zero(n);
  out.head(v.size()) = v;
  return out;
}

double fidelity_to(const Vec& target, const Mat& rho) {
  int n = std::max<int>(int(target.size()), int(rho.rows()));
  Vec t = pad(target, n);
  Mat r = Mat::Zero(n, n);
  r.topLeftCorner(rho.rows(), rho.cols()) = rho;
  return std::real(t.dot(r * t));
}

void expect_monotone(const std::vector<double>& trace) {
  for (std::size_t k = 1; k < trace.size(); ++k)
    EXPECT_LE(trace[k], trace[k - 1] + 1e-15) << "cost rose at iteration " << k;
}

}  // namespace

TEST(DisplacementElements, AgreeWithTheOperatorFactory) {
  DisplacementFactory fac(160);
  for (cxd beta : {cxd(1.3, -0.8), cxd(0.0, 2.1), cxd(4.5, 1.0)}) {
    Mat full = fac.matrix(beta);
    Mat blk = detail::displacement_block(beta, 40, 40);
    EXPECT_LT((full.topLeftCorner(40, 40) - blk).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(DisplacementElements, SqueezeConjugationIsAgainADisplacement) {
  HilbertConfig cfg{140, 28};
  cxd zeta(0.45, 0.30);
  double r = std::abs(zeta);
  Mat s = squeeze(zeta, cfg);
  cxd beta(0.7, -0.4);
  Mat lhs = s.adjoint() * DisplacementFactory(cfg.n_osc).matrix(beta) * s;
  cxd moved = beta * std::cosh(r) + std::conj(beta) * (zeta / r) * std::sinh(r);
  Mat rhs = detail::displacement_block(moved, 20, 20);
  EXPECT_LT((lhs.topLeftCorner(20, 20) - rhs).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(CharFunction, MatchesTheGaussianAndLaguerreForms) {
  HilbertConfig cfg{40, 8};
  CharGrid grid = make_full_grid(2.0, 11, 11);

  CharGrid vac = char_function(pure(fock_state(0, cfg)), grid);
  double worst = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      cxd b = vac.beta(i, j);
      worst = std::max(worst, std::abs(vac.values(i, j) - std::exp(-0.5 * std::norm(b))));
    }
  EXPECT_LT(worst, 1e-12);
  EXPECT_NEAR(std::real(detail::char_point(pure(fock_state(0, cfg)), cxd(1.0, 0.0))),
              0.60653065971263342, 1e-12);

  for (int n = 1; n <= 5; ++n) {
    CharGrid cg = char_function(pure(fock_state(n, cfg)), grid);
    double err = 0.0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) {
        double b2 = std::norm(cg.beta(i, j));
        err = std::max(err,
                       std::abs(cg.values(i, j) - laguerre(n, b2) * std::exp(-0.5 * b2)));
      }
    EXPECT_LT(err, 1e-11) << "Fock " << n;
  }
  EXPECT_LT(std::abs(detail::char_point(pure(fock_state(1, cfg)), cxd(1.0, 0.0))), 1e-14);

  cxd alpha(0.7, 0.4);
  Mat rho = pure(coherent_state(alpha, cfg));
  CharGrid cg = char_function(rho, grid);
  double err = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      cxd b = cg.beta(i, j);
      cxd want = std::exp(-0.5 * std::norm(b)) *
                 std::exp(b * std::conj(alpha) - std::conj(b) * alpha);
      err = std::max(err, std::abs(cg.values(i, j) - want));
    }
  EXPECT_LT(err, 1e-10);
}

TEST(CharFunction, HermitianSymmetryAndUnitValueAtTheOrigin) {
  HilbertConfig cfg{30, 6};
  Mat rho = 0.6 * pure(coherent_state(cxd(0.8, 0.5), cfg)) +
            0.3 * pure(fock_state(1, cfg)) + 0.1 * pure(fock_state(3, cfg));
  CharGrid cg = char_function(rho, make_full_grid(2.0, 9, 9));
  EXPECT_LT(std::abs(cg.values(4, 4) - 1.0), 1e-12);  // C(0) = Tr(rho)
  double worst = 0.0;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j)
      worst = std::max(worst,
                       std::abs(cg.values(i, j) - std::conj(cg.values(8 - i, 8 - j))));
  EXPECT_LT(worst, 1e-13);
}

TEST(CharFunction, WarnsWhenTheStateCrowdsItsTruncation) {
  std::string seen;
  auto previous = warning_handler();
  warning_handler() = [&](const std::string& msg) { seen = msg; };
  HilbertConfig cfg{10, 2};
  char_function(pure(fock_state(9, cfg)), make_full_grid(1.0, 3, 3));
  warning_handler() = previous;
  EXPECT_NE(seen.find("char_function"), std::string::npos);
}

TEST(Simulator, NoiselessPathReproducesTheExactTracesUpToTheGatePhase) {
  HilbertConfig cfg{40, 8};
  Mat rho = pure(coherent_state(cxd(0.6, -0.3), cfg));
  CharGrid grid = make_half_grid(2.5, 6, 11);
  CharGrid exact = char_function(rho, grid);

  TomographyOptions opt;
  opt.shots = 0;
  opt.theta_prime_0 = 0.37;
  CharGrid raw = simulate_tomography(with_ground_qubit(rho), grid, opt);
  EXPECT_EQ(raw.shots, 0);
  EXPECT_NEAR(raw.p_g, 1.0, 1e-12);
  double worst = 0.0;
  for (int i = 0; i < grid.re_axis.size(); ++i)
    for (int j = 0; j < grid.im_axis.size(); ++j) {
      cxd want = exact.values(i, j) * std::exp(-iu * std::norm(grid.beta(i, j)) * 0.37);
      worst = std::max(worst, std::abs(raw.values(i, j) - want));
    }
  EXPECT_LT(worst, 1e-13);

  // The known injected phase is exactly undone in post-processing.
  CharGrid fixed = postprocess(raw, 0.37);
  CharGrid full = char_function(rho, make_full_grid(2.5, 11, 11));
  EXPECT_LT((fixed.values - full.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Simulator, ShotNoiseFollowsTheBinomialLaw) {
  HilbertConfig cfg{30, 6};
  Mat joint = with_ground_qubit(pure(fock_state(0, cfg)));
  CharGrid grid;
  grid.re_axis = RVec::Zero(1);
  grid.im_axis.resize(3);
  grid.im_axis << 0.0, 1.0, 2.0;
  grid.values = Mat::Zero(1, 3);

  TomographyOptions opt;
  opt.shots = 1280;
  opt.readout_error = 0.0;
  int trials = 600;
  Eigen::MatrixXd re(trials, 3), im(trials, 3);
  for (int t = 0; t < trials; ++t) {
    opt.seed = 1000 + t;
    CharGrid g = simulate_tomography(joint, grid, opt);
    for (int j = 0; j < 3; ++j) {
      re(t, j) = std::real(g.values(0, j));
      im(t, j) = std::imag(g.values(0, j));
    }
  }
  for (int j = 0; j < 3; ++j) {
    double c = std::exp(-0.5 * grid.im_axis(j) * grid.im_axis(j));
    double mean = re.col(j).mean();
    double sd = std::sqrt((re.col(j).array() - mean).square().sum() / (trials - 1));
    double want = std::sqrt((1.0 - c * c) / opt.shots);
    EXPECT_NEAR(mean, c, 5.0 * std::max(want, 1e-6) / std::sqrt(double(trials)) + 1e-12);
    if (j == 0) {
      EXPECT_LT(sd, 1e-12);  // C(0) = 1 is a degenerate coin
    } else {
      EXPECT_NEAR(sd / want, 1.0, 0.12);
    }
    double sd_im = std::sqrt((im.col(j).array() - im.col(j).mean()).square().sum() / (trials - 1));
    EXPECT_LT(sd_im, 0.03);  // Im C = 0 here, so the spread is 1/sqrt(shots)
  }
}

TEST(Simulator, PostselectsTheGroundBlockAndReportsItsWeight) {
  HilbertConfig cfg{30, 6};
  Mat rho_g = pure(fock_state(1, cfg));
  Mat rho_e = pure(coherent_state(cxd(0.4, 0.0), cfg));
  int n = cfg.n_osc;
  Mat joint = Mat::Zero(2 * n, 2 * n);
  joint.topLeftCorner(n, n) = 0.93 * rho_g;
  joint.bottomRightCorner(n, n) = 0.07 * rho_e;
  joint.topRightCorner(n, n) = 0.05 * rho_g;  // residual coherence, ignored by m1
  joint.bottomLeftCorner(n, n) = 0.05 * rho_g;

  CharGrid grid = make_full_grid(2.0, 5, 5);
  TomographyOptions opt;
  opt.shots = 0;
  CharGrid out = simulate_tomography(joint, grid, opt);
  EXPECT_NEAR(out.p_g, 0.93, 1e-12);
  CharGrid want = char_function(rho_g, grid);
  EXPECT_LT((out.values - want.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Simulator, RejectsMalformedRequests) {
  HilbertConfig cfg{8, 2};
  CharGrid grid = make_full_grid(1.0, 3, 3);
  Mat odd = Mat::Zero(9, 9);
  EXPECT_THROW(simulate_tomography(odd, grid), ConfigError);

  Mat empty_ground = Mat::Zero(16, 16);
  empty_ground.bottomRightCorner(8, 8) = pure(fock_state(0, cfg));
  EXPECT_THROW(simulate_tomography(empty_ground, grid), NumericalError);

  TomographyOptions bad;
  bad.shots = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad.shots = 10;
  bad.readout_error = 0.6;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Postprocess, MirrorPhaseAndScaleRecoverTheTruth) {
  HilbertConfig cfg{50, 10};
  Mat rho = pure(coherent_state(cxd(0.8, 0.5), cfg));
  CharGrid half = char_function(rho, make_half_grid(3.0, 9, 17));
  CharGrid raw = half;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 17; ++j)
      raw.values(i, j) *= 0.94 * std::exp(-iu * std::norm(raw.beta(i, j)) * 0.12);

  CharGrid fixed = postprocess(raw, 0.12);
  CharGrid truth = char_function(rho, make_full_grid(3.0, 17, 17));
  EXPECT_EQ(fixed.re_axis.size(), 17);
  EXPECT_LT((fixed.values - truth.values).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(fixed.values(8, 8), cxd(1.0, 0.0));
  double herm = 0.0;
  for (int i = 0; i < 17; ++i)
    for (int j = 0; j < 17; ++j)
      herm = std::max(herm,
                      std::abs(fixed.values(i, j) - std::conj(fixed.values(16 - i, 16 - j))));
  EXPECT_LT(herm, 1e-15);
}

TEST(Postprocess, FullGridInputIsOnlyNormalized) {
  HilbertConfig cfg{30, 6};
  CharGrid truth = char_function(pure(coherent_state(cxd(0.3, 0.9), cfg)),
                                 make_full_grid(2.0, 9, 9));
  CharGrid scaled = truth;
  scaled.values *= cxd(0.82, 0.0);
  CharGrid fixed = postprocess(scaled, 0.0);
  EXPECT_LT((fixed.values - truth.values).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Postprocess, RejectsGridsItCannotHandle) {
  CharGrid no_zero;
  no_zero.re_axis.resize(4);
  no_zero.re_axis << -1.5, -0.5, 0.5, 1.5;
  no_zero.im_axis = no_zero.re_axis;
  no_zero.values = Mat::Zero(4, 4);
  EXPECT_THROW(postprocess(no_zero, 0.0), ConfigError);

  CharGrid skew;
  skew.re_axis = RVec::LinSpaced(3, 0.0, 1.0);
  skew.im_axis.resize(3);
  skew.im_axis << -1.0, 0.0, 0.7;  // not symmetric, cannot mirror
  skew.values = Mat::Zero(3, 3);
  EXPECT_THROW(postprocess(skew, 0.0), ConfigError);

  CharGrid dead = make_half_grid(1.0, 3, 5);
  EXPECT_THROW(postprocess(dead, 0.0), NumericalError);  // C(0) measured as zero
}

TEST(Mle, NoiselessFockAndBinomialRoundTrips) {
  HilbertConfig cfg{40, 8};
  std::vector<std::pair<std::string, Vec>> targets;
  for (int n = 1; n <= 5; ++n) targets.emplace_back("fock" + std::to_string(n), fock_state(n, cfg));
  LogicalSet kitten = binomial_codewords(cfg);
  for (const char* label : {"+Z", "+X", "+Y"})
    targets.emplace_back(std::string("binomial") + label, cardinal_state(kitten, label));

  ReconstructionConfig rc;
  rc.dim_min = 4;
  rc.dim_max = 24;
  for (const auto& [name, psi] : targets) {
    Mat rho = pure(psi);
    CharGrid data = postprocess(
        char_function(rho, make_half_grid(default_grid_radius(rho), 21, 41)), 0.0);
    Reconstruction rec = mle_reconstruct(data, rc);
    EXPECT_GE(fidelity_to(psi, rec.rho), 0.99) << name;
    EXPECT_GE(rec.purity, 0.99) << name;
    expect_monotone(rec.cost_trace);
  }
}

TEST(Mle, NoiselessGkpRoundTrips) {
  HilbertConfig cfg{100, 20};
  GkpCode code{0.306};
  LogicalSet set = gkp_logical_states(code, cfg);

  ReconstructionConfig rc;
  rc.dim_min = 16;
  rc.dim_max = 32;
  rc.tol = 1e-9;
  for (const char* label : {"+Z", "-Z", "+X", "+Y"}) {
    Vec psi = cardinal_state(set, label);
    Mat rho = pure(psi);
    CharGrid data = postprocess(
        char_function(rho, make_half_grid(default_grid_radius(rho), 31, 61)), 0.0);
    Reconstruction rec = mle_reconstruct(data, rc);
    EXPECT_GE(fidelity_to(psi, rec.rho), 0.99) << label;
    EXPECT_GE(rec.purity, 0.99) << label;
    expect_monotone(rec.cost_trace);
  }
}

TEST(Mle, NoiselessSqueezedRoundTripsInTheSqueezedBasis) {
  for (double db : {6.0, 10.0, 14.0}) {
    HilbertConfig cfg;
    cfg.n_osc = db > 11.0 ? 260 : 120;
    double zeta = squeeze_db_to_zeta(db);
    Vec psi = squeezed_state(zeta, cfg);
    Mat rho = pure(psi);

    ReconstructionConfig rc;
    rc.basis_zeta = zeta;
    rc.dim_min = 2;
    rc.dim_max = 10;
    rc.dim_step = 2;
    CharGrid data = postprocess(
        char_function(rho, make_half_grid(default_grid_radius(rho), 17, 33)), 0.0);
    Reconstruction rec = mle_reconstruct(data, rc);
    EXPECT_GE(fidelity_to(psi, rec.rho), 0.99) << db << " dB";
    EXPECT_GE(rec.purity, 0.99) << db << " dB";
  }
}

TEST(Mle, DimensionSweepStopsOnceTheAnswerSettles) {
  HilbertConfig cfg{40, 8};
  Vec psi = fock_state(3, cfg);
  CharGrid data = postprocess(char_function(pure(psi), make_half_grid(4.0, 17, 33)), 0.0);
  ReconstructionConfig rc;
  rc.dim_min = 2;
  rc.dim_max = 20;
  rc.dim_step = 2;
  Reconstruction rec = mle_reconstruct(data, rc);
  EXPECT_GE(rec.dimension, 4);  // |3> needs four Fock levels
  EXPECT_LT(rec.dimension, 20); // and the sweep should stop well before the cap
  EXPECT_GE(fidelity_to(psi, rec.rho), 0.999);
}

TEST(Mle, NoisyGkpRoundTripMeetsTheShotBudget) {
  HilbertConfig cfg{100, 20};
  GkpCode code{0.306};
  Vec psi = cardinal_state(gkp_logical_states(code, cfg), "+Z");
  Mat joint = with_ground_qubit(pure(psi));
  CharGrid grid = make_half_grid(default_grid_radius(pure(psi)), 31, 61);

  ReconstructionConfig rc;
  rc.dim_min = 20;
  rc.dim_max = 32;  // the 0.306 codewords keep visible weight out to n ~ 30
  rc.tol = 1e-6;
  rc.max_iterations = 20000;
  std::vector<double> fids;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TomographyOptions opt;
    opt.shots = 1280;
    opt.theta_prime_0 = 0.04;
    opt.seed = seed;
    CharGrid data = postprocess(simulate_tomography(joint, grid, opt), 0.04);
    Reconstruction rec = mle_reconstruct(data, rc);
    fids.push_back(fidelity_to(psi, rec.rho));
  }
  std::sort(fids.begin(), fids.end());
  EXPECT_GE(fids[2], 0.97) << "five-seed median";
}

TEST(Mle, RotationSearchUndoesASmallFrameRotation) {
  HilbertConfig cfg{40, 8};
  Vec psi = cardinal_state(binomial_codewords(cfg), "+X");
  double phi0 = 2.0 * pi / 180.0;
  Vec ph(cfg.n_osc);
  for (int k = 0; k < cfg.n_osc; ++k) ph(k) = std::exp(-iu * phi0 * double(k));
  Mat rotated = ph.asDiagonal() * pure(psi) * ph.conjugate().asDiagonal();

  CharGrid data = postprocess(
      char_function(rotated, make_half_grid(default_grid_radius(rotated), 21, 41)), 0.0);
  ReconstructionConfig rc;
  rc.dim_min = 4;
  rc.dim_max = 16;
  rc.rotation_search = true;
  Reconstruction rec = mle_reconstruct(data, rc, psi);
  EXPECT_NEAR(rec.post_rotation, -phi0, 2e-3);
  EXPECT_LE(std::abs(rec.post_rotation), rc.rotation_cap + 1e-12);
  EXPECT_GE(fidelity_to(psi, rec.rho), 0.999);
}

TEST(Mle, ValidatesItsConfiguration) {
  CharGrid data = make_full_grid(1.0, 3, 3);
  data.values.setConstant(cxd(0.5, 0.0));
  ReconstructionConfig rc;

  ReconstructionConfig bad = rc;
  bad.dim_min = 1;
  EXPECT_THROW(mle_reconstruct(data, bad), ConfigError);
  bad = rc;
  bad.dim_step = 0;
  EXPECT_THROW(mle_reconstruct(data, bad), ConfigError);
  bad = rc;
  bad.rotation_cap = 2.0 * pi;
  EXPECT_THROW(mle_reconstruct(data, bad), ConfigError);
  bad = rc;
  bad.rotation_search = true;  // no target supplied
  EXPECT_THROW(mle_reconstruct(data, bad), ConfigError);
  bad = rc;
  bad.output_dim = -2;
  EXPECT_THROW(mle_reconstruct(data, bad), ConfigError);

  HilbertConfig cfg{30, 6};
  CharGrid real_data =
      postprocess(char_function(pure(fock_state(2, cfg)), make_half_grid(3.0, 9, 17)), 0.0);
  ReconstructionConfig starved;
  starved.max_iterations = 2;
  starved.tol = 1e-14;
  EXPECT_THROW(mle_reconstruct(real_data, starved), NumericalError);
}

TEST(Marginals, VacuumSqueezingAndFisherAreExact) {
  HilbertConfig cfg{30, 6};
  Mat rho = pure(fock_state(0, cfg));
  QuadratureFit fit = squeezing_from_marginal(rho);
  EXPECT_NEAR(fit.db, 0.0, 1e-6);
  EXPECT_NEAR(fit.sigma, 1.0 / std::sqrt(2.0), 1e-7);
  EXPECT_NEAR(fit.variance, 0.5, 1e-12);
  EXPECT_NEAR(fisher_information(rho), 4.0, 4e-3);
}

TEST(Marginals, IdealSqueezedStatesMatchTheClosedForms) {
  for (double db : {6.0, 10.0}) {
    HilbertConfig cfg{120, 24};
    double zeta = squeeze_db_to_zeta(db);
    Mat rho = pure(squeezed_state(zeta, cfg));
    QuadratureFit fit = squeezing_from_marginal(rho);
    EXPECT_NEAR(fit.db, db, 0.05);
    EXPECT_NEAR(fit.variance, 0.5 * std::exp(-2.0 * zeta), 1e-8);

    double ic = fisher_information(rho, fit.theta);
    EXPECT_NEAR(ic / (2.0 / fit.variance), 1.0, 0.01);
    EXPECT_NEAR(fit.fisher_gaussian / ic, 1.0, 0.02);
  }

  HilbertConfig big{260, 52};
  double zeta14 = squeeze_db_to_zeta(14.0);
  QuadratureFit fit14 = squeezing_from_marginal(pure(squeezed_state(zeta14, big)));
  EXPECT_NEAR(fit14.db, 14.0, 0.05);
}

TEST(Marginals, AlignmentFindsTheSqueezedQuadrature) {
  HilbertConfig cfg{120, 24};
  double zeta = squeeze_db_to_zeta(8.0);
  Vec psi = squeezed_state(zeta, cfg);
  double spin = 0.4;
  Vec ph(cfg.n_osc);
  for (int k = 0; k < cfg.n_osc; ++k) ph(k) = std::exp(-iu * spin * double(k));
  Mat rho = ph.asDiagonal() * pure(psi) * ph.conjugate().asDiagonal();

  QuadratureFit fit = squeezing_from_marginal(rho);
  EXPECT_NEAR(fit.variance, 0.5 * std::exp(-2.0 * zeta), 1e-8);
  EXPECT_NEAR(fit.db, 8.0, 1e-3);
}
