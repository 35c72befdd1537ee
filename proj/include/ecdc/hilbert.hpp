#pragma once

// Truncated-oscillator Hilbert space: states, displacement and squeeze
// operators, and the guard-band bookkeeping used by every module above this
// one. Displacements are built from a single eigendecomposition of the
// momentum quadrature so that repeated applications (the optimizer hot path)
// cost two dense mat-vecs instead of a fresh matrix exponential.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <string>

#include "ecdc/common.hpp"

namespace ecdc {

inline std::function<void(const std::string&)>& warning_handler() {
  static std::function<void(const std::string&)> h = [](const std::string& msg) {
    std::cerr << "[ecdc warning] " << msg << "\n";
  };
  return h;
}

inline void warn(const std::string& msg) { warning_handler()(msg); }

struct HilbertConfig {
  int n_osc = 40;  // number of retained Fock levels
  int guard = -1;  // guard levels at the truncation edge; -1 selects 20% of n_osc

  int guard_levels() const { return guard >= 0 ? guard : n_osc / 5; }
  int usable_levels() const { return n_osc - guard_levels(); }

  void validate() const {
    if (n_osc < 2) throw ConfigError("HilbertConfig: n_osc must be at least 2");
    if (guard_levels() < 0 || guard_levels() >= n_osc)
      throw ConfigError("HilbertConfig: guard must lie inside the truncated space");
  }
};

inline Mat annihilation(int dim) {
  Mat a = Mat::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(double(n));
  return a;
}

inline Mat number_op(int dim) {
  Mat n = Mat::Zero(dim, dim);
  for (int k = 0; k < dim; ++k) n(k, k) = double(k);
  return n;
}

// q = (a + a†)/√2, p = i(a† − a)/√2, [q, p] = i away from the edge.
inline Mat position_op(int dim) {
  Mat a = annihilation(dim);
  return (a + a.adjoint()) / std::sqrt(2.0);
}

inline Mat momentum_op(int dim) {
  Mat a = annihilation(dim);
  return iu * (a.adjoint() - a) / std::sqrt(2.0);
}

// Largest |alpha| a displacement can take before truncation error is no
// longer guaranteed small: |alpha|² ≤ usable_levels/4.
inline double displacement_budget(const HilbertConfig& cfg) {
  return std::sqrt(double(cfg.usable_levels()) / 4.0);
}

// D(alpha) = R_φ exp(−i√2 r p) R_φ† with alpha = r e^{iφ} and R_φ = e^{iφ n̂}.
// One self-adjoint eigendecomposition of p serves every magnitude and phase.
class DisplacementFactory {
 public:
  explicit DisplacementFactory(int dim) : dim_(dim) {
    Eigen::SelfAdjointEigenSolver<Mat> es(momentum_op(dim));
    if (es.info() != Eigen::Success)
      throw NumericalError("DisplacementFactory: momentum eigendecomposition failed");
    lam_ = es.eigenvalues();
    V_ = es.eigenvectors();
    Vad_ = V_.adjoint();
  }

  int dim() const { return dim_; }

  Mat matrix(cxd alpha) const {
    double r = std::abs(alpha);
    double phi = (r == 0.0) ? 0.0 : std::arg(alpha);
    Vec ph = phase_vector(phi);
    Mat core = V_ * (exp_diag(r).asDiagonal() * Vad_);
    return ph.asDiagonal() * core * ph.conjugate().asDiagonal();
  }

  // out = D(alpha) in
  void apply(cxd alpha, const Vec& in, Vec& out) const {
    double r = std::abs(alpha);
    double phi = (r == 0.0) ? 0.0 : std::arg(alpha);
    Vec ph = phase_vector(phi);
    Vec t = ph.conjugate().cwiseProduct(in);
    Vec u = Vad_ * t;
    u = exp_diag(r).cwiseProduct(u);
    out = V_ * u;
    out = ph.cwiseProduct(out);
  }

  void apply_adjoint(cxd alpha, const Vec& in, Vec& out) const { apply(-alpha, in, out); }

  // Raw pieces of D(α) = P(φ) V e^{−i√2|α|λ} V† P(φ)†, for callers that batch
  // many displacements against the shared momentum eigenbasis.
  const Mat& momentum_basis() const { return V_; }
  const Mat& momentum_basis_adjoint() const { return Vad_; }
  const RVec& momentum_eigenvalues() const { return lam_; }

 private:
  Vec exp_diag(double r) const {
    Vec e(dim_);
    for (int k = 0; k < dim_; ++k) e(k) = std::exp(cxd(0.0, -std::sqrt(2.0) * r * lam_(k)));
    return e;
  }

  Vec phase_vector(double phi) const {
    Vec ph(dim_);
    for (int n = 0; n < dim_; ++n) ph(n) = std::exp(cxd(0.0, phi * n));
    return ph;
  }

  int dim_;
  RVec lam_;
  Mat V_, Vad_;
};

inline Mat displacement(cxd alpha, const HilbertConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(alpha.real()) || !std::isfinite(alpha.imag()))
    throw ConfigError("displacement: non-finite amplitude");
  if (std::abs(alpha) > displacement_budget(cfg))
    warn("displacement amplitude |alpha|=" + std::to_string(std::abs(alpha)) +
         " exceeds the accuracy budget " + std::to_string(displacement_budget(cfg)) +
         " at n_osc=" + std::to_string(cfg.n_osc));
  return DisplacementFactory(cfg.n_osc).matrix(alpha);
}

// S(zeta) = exp((zeta* a² − zeta a†²)/2) via eigendecomposition of the
// Hermitian generator i(zeta* a² − zeta a†²)/2.
inline Mat squeeze(cxd zeta, const HilbertConfig& cfg) {
  cfg.validate();
  Mat a = annihilation(cfg.n_osc);
  Mat a2 = a * a;
  Mat gen = iu * 0.5 * (std::conj(zeta) * a2 - zeta * a2.adjoint());
  Eigen::SelfAdjointEigenSolver<Mat> es(gen);
  if (es.info() != Eigen::Success) throw NumericalError("squeeze: eigendecomposition failed");
  Vec e(cfg.n_osc);
  for (int k = 0; k < cfg.n_osc; ++k) e(k) = std::exp(cxd(0.0, -es.eigenvalues()(k)));
  return es.eigenvectors() * e.asDiagonal() * es.eigenvectors().adjoint();
}

inline Vec fock_state(int n, const HilbertConfig& cfg) {
  cfg.validate();
  if (n < 0 || n >= cfg.n_osc) throw ConfigError("fock_state: level outside truncation");
  if (n >= cfg.usable_levels())
    warn("fock_state: level " + std::to_string(n) + " lies in the guard band");
  Vec psi = Vec::Zero(cfg.n_osc);
  psi(n) = 1.0;
  return psi;
}

inline double guard_population(const Vec& psi, const HilbertConfig& cfg) {
  cfg.validate();
  double pop = 0.0;
  for (int n = cfg.usable_levels(); n < cfg.n_osc; ++n) pop += std::norm(psi(n));
  return pop;
}

inline Vec coherent_state(cxd alpha, const HilbertConfig& cfg) {
  cfg.validate();
  Vec psi(cfg.n_osc);
  // c_n = e^{−|α|²/2} α^n/√(n!), built by the stable ratio recurrence.
  psi(0) = std::exp(-0.5 * std::norm(alpha));
  for (int n = 1; n < cfg.n_osc; ++n) psi(n) = psi(n - 1) * alpha / std::sqrt(double(n));
  psi.normalize();
  double gp = guard_population(psi, cfg);
  if (gp > 1e-6)
    warn("coherent_state: guard population " + std::to_string(gp) + " at |alpha|=" +
         std::to_string(std::abs(alpha)));
  return psi;
}

inline Vec squeezed_state(cxd zeta, const HilbertConfig& cfg) {
  Vec psi = squeeze(zeta, cfg) * fock_state(0, cfg);
  double gp = guard_population(psi, cfg);
  if (gp > 1e-6) warn("squeezed_state: guard population " + std::to_string(gp));
  return psi;
}

// Rows are sample points, columns Fock levels: H(i, n) = ⟨x_i|n⟩ with the
// q = (a + a†)/√2 convention, built by the stable two-term recurrence.
inline Eigen::MatrixXd position_wavefunctions(const RVec& grid, int dim) {
  Eigen::MatrixXd h(grid.size(), dim);
  const double pi_quarter = std::pow(pi, -0.25);
  for (int i = 0; i < grid.size(); ++i) {
    double x = grid(i);
    h(i, 0) = pi_quarter * std::exp(-0.5 * x * x);
    if (dim > 1) h(i, 1) = std::sqrt(2.0) * x * h(i, 0);
    for (int n = 2; n < dim; ++n)
      h(i, n) = x * std::sqrt(2.0 / n) * h(i, n - 1) - std::sqrt((n - 1.0) / n) * h(i, n - 2);
  }
  return h;
}

// Marginal of the rotated quadrature x_θ = (e^{iθ}a† + e^{−iθ}a)/√2.
inline RVec quadrature_marginal(const Mat& rho, double theta, const RVec& grid) {
  int dim = int(rho.rows());
  Vec rot(dim);
  for (int n = 0; n < dim; ++n) rot(n) = std::exp(cxd(0.0, -theta * n));
  Mat rho_rot = rot.asDiagonal() * rho * rot.conjugate().asDiagonal();
  Eigen::MatrixXd h = position_wavefunctions(grid, dim);
  Mat hc = h.cast<cxd>();
  RVec p(grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    cxd v = hc.row(i) * rho_rot * hc.row(i).adjoint();
    p(i) = std::real(v);
  }
  return p;
}

inline double state_fidelity(const Vec& a, const Vec& b) { return std::norm(a.dot(b)); }

inline double state_fidelity(const Vec& a, const Mat& rho) {
  return std::real(a.dot(rho * a));
}

inline double purity(const Mat& rho) { return std::real((rho * rho).trace()); }

struct DensityCheck {
  double herm_err = 0.0;
  double trace_err = 0.0;
  double min_eig = 0.0;

  bool ok(double tol_herm = 1e-10, double tol_trace = 1e-10, double eig_floor = -1e-9) const {
    return herm_err <= tol_herm && trace_err <= tol_trace && min_eig >= eig_floor;
  }
};

inline DensityCheck check_density(const Mat& rho) {
  DensityCheck c;
  c.herm_err = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
  c.trace_err = std::abs(rho.trace() - cxd(1.0, 0.0));
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (rho + rho.adjoint()));
  c.min_eig = es.eigenvalues().minCoeff();
  return c;
}

}  // namespace ecdc
