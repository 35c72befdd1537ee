#pragma once

// Bosonic code constructions: the binomial "kitten" code with its correctable
// Pauli set, and finite-energy GKP states built from envelope-conjugated
// displacement stabilizers.

#include <string>

#include "ecdc/hilbert.hpp"

namespace ecdc {

struct LogicalSet {
  Vec plus_z, minus_z;          // codewords
  Vec plus_z_err, minus_z_err;  // error words (binomial; empty otherwise)
  Mat I, X, Y, Z;               // logical operators on the oscillator space
  double zz_overlap = 0.0;      // ⟨+Z|−Z⟩ magnitude, nonzero for finite-energy GKP
};

// Kitten code: |+Z⟩ = (|0⟩+|4⟩)/√2, |−Z⟩ = |2⟩; single-photon-loss error
// words |+Z⟩_e = |3⟩, |−Z⟩_e = |1⟩. The Pauli set acts on the union of the
// code and error subspaces so logical readout tolerates one loss event.
inline LogicalSet binomial_codewords(const HilbertConfig& cfg) {
  cfg.validate();
  if (cfg.n_osc < 5) throw ConfigError("binomial_codewords: need at least 5 Fock levels");
  LogicalSet s;
  s.plus_z = (fock_state(0, cfg) + fock_state(4, cfg)) / std::sqrt(2.0);
  s.minus_z = fock_state(2, cfg);
  s.plus_z_err = fock_state(3, cfg);
  s.minus_z_err = fock_state(1, cfg);

  auto outer = [](const Vec& a, const Vec& b) { return Mat(a * b.adjoint()); };
  s.X = outer(s.plus_z, s.minus_z) + outer(s.plus_z_err, s.minus_z_err) +
        outer(s.minus_z, s.plus_z) + outer(s.minus_z_err, s.plus_z_err);
  s.Y = iu * outer(s.minus_z, s.plus_z) + iu * outer(s.minus_z_err, s.plus_z_err) -
        iu * outer(s.plus_z, s.minus_z) - iu * outer(s.plus_z_err, s.minus_z_err);
  s.Z = outer(s.plus_z, s.plus_z) + outer(s.plus_z_err, s.plus_z_err) -
        outer(s.minus_z, s.minus_z) - outer(s.minus_z_err, s.minus_z_err);
  s.I = outer(s.plus_z, s.plus_z) + outer(s.minus_z, s.minus_z) +
        outer(s.plus_z_err, s.plus_z_err) + outer(s.minus_z_err, s.minus_z_err);
  return s;
}

struct GkpCode {
  double delta = 0.306;

  void validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("GkpCode: delta must lie in (0, 1)");
  }
};

inline Mat envelope_operator(double delta, const HilbertConfig& cfg) {
  cfg.validate();
  Mat e = Mat::Zero(cfg.n_osc, cfg.n_osc);
  for (int n = 0; n < cfg.n_osc; ++n) e(n, n) = std::exp(-delta * delta * n);
  return e;
}

struct GkpOperators {
  Mat s_q, s_p;  // finite-energy stabilizers
  Mat x, y, z;   // finite-energy logical displacements (non-Hermitian)
};

// O_Δ = E_Δ O E_Δ^{-1} with E_Δ = exp(−Δ² n̂). The inverse envelope grows as
// exp(+Δ² n), so it is capped to the guard-protected block and zeroed above;
// all states of interest live far below the cap.
inline GkpOperators gkp_finite_stabilizers(const GkpCode& code, const HilbertConfig& cfg) {
  code.validate();
  cfg.validate();
  Mat env = envelope_operator(code.delta, cfg);
  Mat env_inv = Mat::Zero(cfg.n_osc, cfg.n_osc);
  for (int n = 0; n < cfg.usable_levels(); ++n)
    env_inv(n, n) = std::exp(code.delta * code.delta * n);

  auto conjugate = [&](cxd amp) { return Mat(env * displacement(amp, cfg) * env_inv); };
  GkpOperators ops;
  double root_2pi = std::sqrt(two_pi);
  double root_pi_2 = std::sqrt(pi / 2.0);
  ops.s_q = conjugate(iu * root_2pi);
  ops.s_p = conjugate(cxd(root_2pi, 0.0));
  ops.x = conjugate(cxd(root_pi_2, 0.0));
  ops.z = conjugate(iu * root_pi_2);
  ops.y = iu * ops.x * ops.z;
  return ops;
}

namespace detail {

// Fock coefficients of E_Δ Σ_k |q = offset + kL⟩, the envelope applied to an
// ideal position comb. ⟨n|q=x⟩ is real, so the result is a real vector; the
// comb is truncated once the teeth pass every level's classical turning point.
inline Vec enveloped_comb(double delta, double spacing, double offset,
                          const HilbertConfig& cfg) {
  int dim = cfg.n_osc;
  double reach = std::sqrt(2.0 * dim + 1.0) + 6.0;
  int kmax = int(std::ceil((reach + std::abs(offset)) / spacing));
  RVec teeth(2 * kmax + 1);
  for (int k = -kmax; k <= kmax; ++k) teeth(k + kmax) = offset + k * spacing;
  Eigen::MatrixXd w = position_wavefunctions(teeth, dim);
  Vec psi(dim);
  for (int n = 0; n < dim; ++n)
    psi(n) = std::exp(-delta * delta * n) * w.col(n).sum();
  double nrm = psi.norm();
  if (!(nrm > 0.0)) throw NumericalError("enveloped_comb: vanishing norm");
  return psi / nrm;
}

}  // namespace detail

// |±Z_Δ⟩ = E_Δ |±Z_ideal⟩ up to normalization, with the ideal states taken as
// position combs on the even and odd multiples of √π. Applying the
// finite-energy logical X to |+Z_Δ⟩ reproduces |−Z_Δ⟩ because X_Δ E = E X and
// the ideal X shifts the comb by one tooth. The two codewords are not exactly
// orthogonal; the residual overlap is reported in the set.
inline LogicalSet gkp_logical_states(const GkpCode& code, const HilbertConfig& cfg) {
  code.validate();
  cfg.validate();
  double root_pi = std::sqrt(pi);
  Vec pz = detail::enveloped_comb(code.delta, 2.0 * root_pi, 0.0, cfg);
  Vec mz = detail::enveloped_comb(code.delta, 2.0 * root_pi, root_pi, cfg);

  LogicalSet s;
  s.plus_z = pz;
  s.minus_z = mz;
  s.zz_overlap = std::abs(pz.dot(mz));

  auto outer = [](const Vec& a, const Vec& b) { return Mat(a * b.adjoint()); };
  s.X = outer(pz, mz) + outer(mz, pz);
  s.Y = iu * outer(mz, pz) - iu * outer(pz, mz);
  s.Z = outer(pz, pz) - outer(mz, mz);
  s.I = outer(pz, pz) + outer(mz, mz);
  return s;
}

inline Vec cardinal_state(const LogicalSet& set, const std::string& label) {
  Vec v;
  if (label == "+Z") v = set.plus_z;
  else if (label == "-Z") v = set.minus_z;
  else if (label == "+X") v = set.plus_z + set.minus_z;
  else if (label == "-X") v = set.plus_z - set.minus_z;
  else if (label == "+Y") v = set.plus_z + iu * set.minus_z;
  else if (label == "-Y") v = set.plus_z - iu * set.minus_z;
  else throw ConfigError("cardinal_state: unknown label '" + label + "'");
  v.normalize();
  return v;
}

// Effective squeezing parameter: the Δ whose code projector
// P_Δ = |+Z_Δ⟩⟨+Z_Δ| + |−Z_Δ⟩⟨−Z_Δ| has maximal overlap with rho. Coarse grid
// scan followed by golden-section refinement.
inline double gkp_effective_squeezing(const Mat& rho, const HilbertConfig& cfg, double lo = 0.2,
                                      double hi = 0.95) {
  cfg.validate();
  if (!(lo > 0.0 && hi < 1.0 && lo < hi))
    throw ConfigError("gkp_effective_squeezing: search range must satisfy 0 < lo < hi < 1");
  auto score = [&](double delta) {
    LogicalSet set = gkp_logical_states(GkpCode{delta}, cfg);
    return std::real((set.I * rho).trace());
  };

  const int coarse = 25;
  double best_d = lo, best_s = -1.0;
  for (int i = 0; i < coarse; ++i) {
    double d = lo + (hi - lo) * i / double(coarse - 1);
    double s = score(d);
    if (s > best_s) {
      best_s = s;
      best_d = d;
    }
  }
  double step = (hi - lo) / double(coarse - 1);
  double a = std::max(lo, best_d - step), b = std::min(hi, best_d + step);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = score(x1), f2 = score(x2);
  for (int it = 0; it < 40 && (b - a) > 1e-4; ++it) {
    if (f1 > f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = score(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = score(x2);
    }
  }
  return 0.5 * (a + b);
}

struct HomodyneExpectations {
  double x_h = 0.0, y_h = 0.0, z_h = 0.0;
};

namespace detail {

// Binned ±1 expectation of a quadrature marginal: +1 sectors of width L/2 are
// centered on multiples of L, −1 sectors on odd half-multiples.
inline double binned_expectation(const Mat& rho, double theta, double period) {
  int dim = int(rho.rows());
  Mat a = annihilation(dim);
  Vec rot(dim);
  for (int n = 0; n < dim; ++n) rot(n) = std::exp(cxd(0.0, -theta * n));
  Mat rho_rot = rot.asDiagonal() * rho * rot.conjugate().asDiagonal();
  Mat q2 = position_op(dim);
  q2 = q2 * q2;
  double var = std::abs(std::real((q2 * rho_rot).trace()));
  double span = 6.0 * std::sqrt(std::max(var, 0.5));
  double step = std::sqrt(pi) / 50.0;
  int half = int(std::ceil(span / step));
  RVec grid(2 * half + 1);
  for (int i = -half; i <= half; ++i) grid(i + half) = i * step;
  RVec p = quadrature_marginal(rho_rot, 0.0, grid);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < grid.size(); ++i) {
    double w = (i == 0 || i == grid.size() - 1) ? 0.5 : 1.0;
    double r = std::remainder(grid(i), period);
    double s = (std::abs(r) <= period / 4.0) ? 1.0 : -1.0;
    num += w * s * p(i);
    den += w * p(i);
  }
  if (den <= 0.0) throw NumericalError("binned_expectation: empty marginal");
  return num / den;
}

}  // namespace detail

// Logical readout from quadrature marginals. Z = e^{i√π q} and X = e^{−i√π p}
// alternate sign with period 2√π along θ=0 and θ=π/2; Y = iXZ = e^{i√(2π) q'}
// lives on the diagonal quadrature q' = (q−p)/√2 and alternates with the
// shorter period √(2π), since the square lattice projects onto that axis with
// spacing √(π/2).
inline HomodyneExpectations homodyne_logical_expectations(const Mat& rho,
                                                          const HilbertConfig& cfg) {
  cfg.validate();
  double l = 2.0 * std::sqrt(pi);
  HomodyneExpectations e;
  e.z_h = detail::binned_expectation(rho, 0.0, l);
  e.x_h = detail::binned_expectation(rho, pi / 2.0, l);
  e.y_h = detail::binned_expectation(rho, -pi / 4.0, std::sqrt(two_pi));
  return e;
}

}  // namespace ecdc
