#pragma once

// Characteristic-function tomography: exact C(beta) = Tr(D(beta) rho) on
// rectangular grids, a shot-noise model of the ECD Ramsey measurement with
// ground-state postselection, the mirror / phase-correction / normalization
// chain applied to measured half grids, maximum-likelihood density-matrix
// reconstruction (optionally in a squeezed-Fock basis), and the marginal
// analysis used for squeezing and Fisher-information numbers.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ecdc/hilbert.hpp"

namespace ecdc {

// Rectangular grid of characteristic-function samples,
// values(i, j) = C(re_axis(i) + i*im_axis(j)). A grid whose real axis starts
// at zero is a measured half grid; postprocess() mirrors it onto the full
// plane using C(-beta) = C*(beta).
struct CharGrid {
  RVec re_axis;
  RVec im_axis;
  Mat values;
  int shots = 0;    // per point and quadrature; 0 means exact expectation values
  double p_g = 1.0; // probability of the disentangling measurement giving |g>

  cxd beta(int i, int j) const { return cxd(re_axis(i), im_axis(j)); }

  bool half() const { return re_axis.size() > 0 && re_axis(0) > -1e-12; }

  void validate() const {
    if (re_axis.size() < 1 || im_axis.size() < 1)
      throw ConfigError("CharGrid: empty axis");
    if (values.rows() != re_axis.size() || values.cols() != im_axis.size())
      throw ConfigError("CharGrid: value block does not match the axes");
    for (int i = 1; i < re_axis.size(); ++i)
      if (!(re_axis(i) > re_axis(i - 1))) throw ConfigError("CharGrid: re_axis must increase");
    for (int j = 1; j < im_axis.size(); ++j)
      if (!(im_axis(j) > im_axis(j - 1))) throw ConfigError("CharGrid: im_axis must increase");
    if (shots < 0) throw ConfigError("CharGrid: negative shot count");
  }
};

inline CharGrid make_half_grid(double radius, int n_re = 41, int n_im = 81) {
  if (!(radius > 0.0) || n_re < 2 || n_im < 3)
    throw ConfigError("make_half_grid: need radius > 0 and at least 2 x 3 points");
  CharGrid g;
  g.re_axis = RVec::LinSpaced(n_re, 0.0, radius);
  g.im_axis = RVec::LinSpaced(n_im, -radius, radius);
  g.values = Mat::Zero(n_re, n_im);
  return g;
}

inline CharGrid make_full_grid(double radius, int n_re = 81, int n_im = 81) {
  if (!(radius > 0.0) || n_re < 3 || n_im < 3)
    throw ConfigError("make_full_grid: need radius > 0 and at least 3 x 3 points");
  CharGrid g;
  g.re_axis = RVec::LinSpaced(n_re, -radius, radius);
  g.im_axis = RVec::LinSpaced(n_im, -radius, radius);
  g.values = Mat::Zero(n_re, n_im);
  return g;
}

// Grid extent heuristic: 1.5 times the phase-space radius sqrt(2<n>+1), never
// below 4 so small states still resolve their Gaussian tails.
inline double default_grid_radius(const Mat& rho) {
  double nbar = 0.0;
  for (int k = 0; k < rho.rows(); ++k) nbar += k * std::real(rho(k, k));
  return std::max(4.0, 1.5 * std::sqrt(2.0 * std::max(nbar, 0.0) + 1.0));
}

namespace detail {

// Matrix elements <n|D(beta)|m> for n < rows, m < cols, from the closed form
//   <l+k|D|l> = e^{-|b|^2/2} sqrt(l!/(l+k)!) b^k  L_l^{(k)}(|b|^2)
//   <l|D|l+k> = e^{-|b|^2/2} sqrt(l!/(l+k)!) (-b*)^k L_l^{(k)}(|b|^2),
// marching each diagonal with the three-term Laguerre recurrence in the
// degree. Naive two-point recurrences across the block go unstable once
// |beta| reaches the oscillatory region (errors of order one by |beta| ~ 5
// for a 40x40 block); along a diagonal the recurrence is benign, and the
// prefactor is built from ratios so nothing overflows. These are elements of
// the untruncated operator, not of a truncated exponential.
inline Mat displacement_block(cxd beta, int rows, int cols) {
  if (rows < 1 || cols < 1) throw ConfigError("displacement_block: empty block");
  Mat w(rows, cols);
  double x = std::norm(beta);
  double gauss = std::exp(-0.5 * x);
  auto diagonal = [&](int k, cxd step, bool upper) {
    cxd pref = gauss;
    for (int j = 1; j <= k; ++j) pref *= step / std::sqrt(double(j));
    double lprev = 0.0, l = 1.0;
    int len = upper ? std::min(rows, cols - k) : std::min(rows - k, cols);
    for (int t = 0; t < len; ++t) {
      if (t > 0) {
        double next = ((2.0 * t + k - 1.0 - x) * l - (t + k - 1.0) * lprev) / double(t);
        lprev = l;
        l = next;
        pref *= std::sqrt(double(t) / double(t + k));
      }
      if (upper)
        w(t, t + k) = pref * l;
      else
        w(t + k, t) = pref * l;
    }
  };
  for (int k = 0; k < cols; ++k) diagonal(k, -std::conj(beta), true);
  for (int k = 1; k < rows; ++k) diagonal(k, beta, false);
  return w;
}

inline cxd char_point(const Mat& rho, cxd beta) {
  int n = int(rho.rows());
  Mat d = displacement_block(beta, n, n);
  return (d.transpose().array() * rho.array()).sum();
}

}  // namespace detail

// Exact characteristic function of an oscillator density matrix. The traces
// use closed-form displacement elements, so the only truncation error is the
// one already present in rho itself; a state crowding its own top levels is
// flagged because its large-displacement samples cannot be trusted.
inline CharGrid char_function(const Mat& rho, CharGrid grid) {
  grid.validate();
  if (rho.rows() != rho.cols() || rho.rows() < 1)
    throw ConfigError("char_function: density matrix must be square");
  int n = int(rho.rows());
  double tail = 0.0;
  for (int k = std::max(0, n - std::max(1, n / 5)); k < n; ++k) tail += std::real(rho(k, k));
  if (tail > 1e-6) {
    char msg[128];
    std::snprintf(msg, sizeof(msg),
                  "char_function: population %.1e in the top fifth of the truncation; "
                  "large-beta samples are unreliable", tail);
    warn(msg);
  }
  for (int i = 0; i < grid.re_axis.size(); ++i)
    for (int j = 0; j < grid.im_axis.size(); ++j)
      grid.values(i, j) = detail::char_point(rho, grid.beta(i, j));
  grid.shots = 0;
  return grid;
}

struct TomographyOptions {
  int shots = 1280;            // per grid point and quadrature; 0 gives exact values
  double theta_prime_0 = 0.0;  // gate phase imprinted per unit |beta|^2, removed in postprocess
  double readout_error = 0.02; // symmetric single-shot assignment error
  std::uint64_t seed = 1;

  void validate() const {
    if (shots < 0) throw ConfigError("TomographyOptions: negative shot count");
    if (readout_error < 0.0 || readout_error >= 0.5)
      throw ConfigError("TomographyOptions: readout error must lie in [0, 0.5)");
    if (!std::isfinite(theta_prime_0)) throw ConfigError("TomographyOptions: bad phase");
  }
};

// ECD Ramsey measurement on a joint qubit (x) oscillator state, qubit-major
// with the ground block first. A first measurement disentangles the qubit;
// sampling proceeds on the |g>-conditioned oscillator state and the success
// probability is reported in the grid. Each grid point then estimates
// <sigma_x> and <sigma_y>, which equal Re/Im of <D(beta)> before the second
// pi/2 pulse; the applied gate contributes the extra phase
// exp(-i |beta|^2 theta'_0) that postprocess() later removes. Shots split
// evenly between the two signs of the first pi/2 pulse, so a symmetric
// readout error only rescales the contrast; the shot counts are understood as
// post-postselection averages.
inline CharGrid simulate_tomography(const Mat& rho_joint, const CharGrid& grid,
                                    const TomographyOptions& opt = {}) {
  opt.validate();
  if (rho_joint.rows() != rho_joint.cols() || rho_joint.rows() < 2 || rho_joint.rows() % 2 != 0)
    throw ConfigError("simulate_tomography: joint state must be square with even dimension");
  int n = int(rho_joint.rows()) / 2;
  Mat rho_g = rho_joint.topLeftCorner(n, n);
  double p_g = std::real(rho_g.trace());
  if (p_g < 1e-12)
    throw NumericalError("simulate_tomography: no ground-state population to postselect");
  Mat rho = rho_g / p_g;

  CharGrid out = char_function(rho, grid);
  out.p_g = p_g;
  for (int i = 0; i < out.re_axis.size(); ++i)
    for (int j = 0; j < out.im_axis.size(); ++j)
      out.values(i, j) *= std::exp(-iu * std::norm(out.beta(i, j)) * opt.theta_prime_0);
  if (opt.shots == 0) return out;

  out.shots = opt.shots;
  double contrast = 1.0 - 2.0 * opt.readout_error;
  std::mt19937_64 rng(opt.seed);
  int s_plus = opt.shots - opt.shots / 2;
  int s_minus = opt.shots / 2;
  auto sample = [&](double m) {
    m = std::clamp(contrast * m, -1.0, 1.0);
    std::binomial_distribution<int> up(s_plus, 0.5 * (1.0 + m));
    int net = 2 * up(rng) - s_plus;
    if (s_minus > 0) {
      std::binomial_distribution<int> down(s_minus, 0.5 * (1.0 - m));
      net -= 2 * down(rng) - s_minus;
    }
    return double(net) / double(opt.shots);
  };
  for (int i = 0; i < out.re_axis.size(); ++i)
    for (int j = 0; j < out.im_axis.size(); ++j)
      out.values(i, j) = cxd(sample(std::real(out.values(i, j))),
                             sample(std::imag(out.values(i, j))));
  return out;
}

// Post-processing chain for measured grids: undo the gate phase with
// C(beta) -> exp(+i |beta|^2 theta'_0) C(beta), mirror a half grid onto the
// full plane through C(-beta) = C*(beta) (the Re(beta) = 0 column is averaged
// with its own conjugate so the symmetry holds exactly), and scale so that
// C(0) = 1, which absorbs any uniform contrast loss. The phase must be
// removed before mirroring: the raw data do not obey the Hermitian symmetry
// while the gate phase is still attached.
inline CharGrid postprocess(const CharGrid& raw, double theta_prime_0) {
  raw.validate();
  CharGrid g = raw;
  for (int i = 0; i < g.re_axis.size(); ++i)
    for (int j = 0; j < g.im_axis.size(); ++j)
      g.values(i, j) *= std::exp(iu * std::norm(g.beta(i, j)) * theta_prime_0);

  if (g.half()) {
    int nr = int(g.re_axis.size()), ni = int(g.im_axis.size());
    if (std::abs(g.re_axis(0)) > 1e-12)
      throw ConfigError("postprocess: half grid must start at Re(beta) = 0");
    for (int j = 0; j < ni; ++j)
      if (std::abs(g.im_axis(j) + g.im_axis(ni - 1 - j)) > 1e-9)
        throw ConfigError("postprocess: mirroring needs a symmetric imaginary axis");
    CharGrid full;
    full.im_axis = g.im_axis;
    full.shots = g.shots;
    full.p_g = g.p_g;
    full.re_axis.resize(2 * nr - 1);
    full.values.resize(2 * nr - 1, ni);
    for (int i = 0; i < nr; ++i) {
      full.re_axis(nr - 1 + i) = g.re_axis(i);
      full.re_axis(nr - 1 - i) = -g.re_axis(i);
    }
    for (int j = 0; j < ni; ++j) {
      full.values(nr - 1, j) =
          0.5 * (g.values(0, j) + std::conj(g.values(0, ni - 1 - j)));
      for (int i = 1; i < nr; ++i) {
        full.values(nr - 1 + i, j) = g.values(i, j);
        full.values(nr - 1 - i, j) = std::conj(g.values(i, ni - 1 - j));
      }
    }
    g = std::move(full);
  }

  int i0 = -1, j0 = -1;
  for (int i = 0; i < g.re_axis.size(); ++i)
    if (std::abs(g.re_axis(i)) < 1e-12) i0 = i;
  for (int j = 0; j < g.im_axis.size(); ++j)
    if (std::abs(g.im_axis(j)) < 1e-12) j0 = j;
  if (i0 < 0 || j0 < 0) throw ConfigError("postprocess: grid carries no C(0) sample");
  cxd c0 = g.values(i0, j0);
  if (std::abs(c0) < 1e-3)
    throw NumericalError("postprocess: measured C(0) is consistent with zero contrast");
  g.values /= c0;
  return g;
}

struct ReconstructionConfig {
  cxd basis_zeta = 0.0;  // 0 reconstructs in the Fock basis, else in S(zeta)|n>
  int dim_min = 4;
  int dim_max = 36;
  int dim_step = 4;
  int max_iterations = 5000;
  double tol = 1e-10;          // stop once the cost gain per sweep drops below tol*(1+cost)
  double purity_settle = 5e-3; // dimension sweep stops when purity stops moving
  bool rotation_search = false;
  double rotation_cap = 5.0 * pi / 180.0;
  int output_dim = 0;  // Fock dimension of the returned state; 0 picks automatically

  void validate() const {
    if (dim_min < 2 || dim_max < dim_min || dim_step < 1)
      throw ConfigError("ReconstructionConfig: bad dimension sweep");
    if (max_iterations < 1 || !(tol > 0.0))
      throw ConfigError("ReconstructionConfig: bad iteration budget");
    if (!(rotation_cap > 0.0) || rotation_cap > 0.5 * pi)
      throw ConfigError("ReconstructionConfig: rotation cap outside (0, pi/2]");
    if (output_dim < 0) throw ConfigError("ReconstructionConfig: negative output dimension");
  }
};

struct Reconstruction {
  Mat rho;               // Fock basis, unit trace, positive semidefinite
  int dimension = 0;     // basis dimension selected by the sweep
  int iterations = 0;    // accepted iterations at that dimension
  double cost = 0.0;     // mean squared residual per complex sample
  double purity = 0.0;
  double post_rotation = 0.0;  // radians, applied as exp(-i phi n)
  std::vector<double> cost_trace;  // non-increasing by construction
};

namespace detail {

// Euclidean projection onto the density-matrix cone: eigenvalues onto the
// probability simplex, eigenvectors untouched.
inline Mat psd_unit_project(const Mat& h) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.adjoint()));
  if (es.info() != Eigen::Success)
    throw NumericalError("psd_unit_project: eigendecomposition failed");
  RVec lam = es.eigenvalues();
  int d = int(lam.size());
  std::vector<double> sorted(lam.data(), lam.data() + d);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double cum = 0.0, theta = 0.0;
  for (int k = 0; k < d; ++k) {
    cum += sorted[k];
    double t = (cum - 1.0) / (k + 1);
    if (sorted[k] - t > 0.0) theta = t;
  }
  Vec w(d);
  for (int k = 0; k < d; ++k) w(k) = std::max(lam(k) - theta, 0.0);
  return es.eigenvectors() * w.asDiagonal() * es.eigenvectors().adjoint();
}

struct MleFit {
  Mat rho;
  double cost = 0.0;
  int iterations = 0;
  std::vector<double> trace;
};

// Monotone projected-gradient descent on the Gaussian-noise cost
// mean_k |y_k - Tr(M_k rho)|^2 over the density-matrix cone. The cost is
// convex and the projection is exact, so backtracking on the step length
// guarantees the recorded cost never increases.
inline MleFit mle_fit(const Eigen::MatrixXcd& design, const Vec& y, Mat rho,
                      int max_iterations, double tol) {
  int d = int(rho.rows());
  int p = int(y.size());
  // Each design row holds the transposed displacement block, so contracting
  // with the column-major view of rho yields Tr(D rho) directly.
  auto residual = [&](const Mat& r) -> Vec {
    return y - design * Eigen::Map<const Vec>(r.data(), d * d);
  };
  auto cost_of = [&](const Mat& r) { return residual(r).squaredNorm() / p; };

  MleFit fit;
  double step = double(p) / (2.0 * design.squaredNorm());
  double cost = cost_of(rho);
  fit.trace.push_back(cost);
  int quiet = 0;  // consecutive iterations with negligible gain
  for (int it = 0; it < max_iterations; ++it) {
    Vec r = residual(rho);
    Vec gvec = design.transpose() * r.conjugate();
    Mat g0 = Eigen::Map<Mat>(gvec.data(), d, d).transpose();
    Mat grad = (2.0 / p) * 0.5 * (g0 + g0.adjoint());

    double new_cost = cost;
    Mat candidate;
    bool ok = false;
    for (int back = 0; back < 60; ++back) {
      candidate = psd_unit_project(rho + step * grad);
      new_cost = cost_of(candidate);
      if (new_cost <= cost) {
        ok = true;
        break;
      }
      step *= 0.4;
    }
    if (!ok) break;  // step length exhausted: we sit at the constrained optimum
    double gain = cost - new_cost;
    rho = candidate;
    cost = new_cost;
    fit.trace.push_back(cost);
    fit.iterations = it + 1;
    step *= 1.25;
    // A single small gain is not convergence: warm starts creep with tiny
    // steps that pick up speed as the step length regrows, so demand a streak.
    quiet = gain <= tol * (1.0 + cost) ? quiet + 1 : 0;
    if (quiet >= 8) {
      fit.rho = rho;
      fit.cost = cost;
      return fit;
    }
  }
  if (fit.iterations >= max_iterations)
    throw NumericalError("mle_reconstruct: no convergence within the iteration budget");
  fit.rho = rho;
  fit.cost = cost;
  return fit;
}

}  // namespace detail

// Small frame rotation exp(-i phi n) applied to rho, chosen within the cap to
// maximize overlap with the target; grid scan plus golden-section refinement.
inline double post_rotation_search(const Mat& rho, const Vec& target, double cap) {
  if (target.size() != rho.rows())
    throw ConfigError("post_rotation_search: target dimension mismatch");
  auto score = [&](double phi) {
    Vec t(target.size());
    for (int k = 0; k < target.size(); ++k) t(k) = std::exp(iu * phi * double(k)) * target(k);
    return std::real(t.dot(rho * t));
  };
  int coarse = 81;
  double best_phi = 0.0, best = -1.0;
  for (int k = 0; k < coarse; ++k) {
    double phi = -cap + 2.0 * cap * k / (coarse - 1);
    double s = score(phi);
    if (s > best) {
      best = s;
      best_phi = phi;
    }
  }
  double lo = std::max(-cap, best_phi - 2.0 * cap / (coarse - 1));
  double hi = std::min(cap, best_phi + 2.0 * cap / (coarse - 1));
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
  double fa = score(a), fb = score(b);
  for (int it = 0; it < 60; ++it) {
    if (fa < fb) {
      lo = a;
      a = b;
      fa = fb;
      b = lo + gr * (hi - lo);
      fb = score(b);
    } else {
      hi = b;
      b = a;
      fb = fa;
      a = hi - gr * (hi - lo);
      fa = score(a);
    }
  }
  return 0.5 * (lo + hi);
}

// Maximum-likelihood reconstruction from a characteristic-function grid.
// Reconstruction in the squeezed-Fock basis S(zeta)|n> never builds large
// operators: conjugating a displacement by the squeeze is again a
// displacement, S† D(beta) S = D(beta cosh r + beta* e^{i theta} sinh r), so
// the fit runs in a small Fock block against transformed grid points and only
// the final change of basis touches the ambient space. The basis dimension is
// swept upward until purity and residual stop moving, mirroring the rule of
// choosing a truncation that no longer changes the answer.
inline Reconstruction mle_reconstruct(const CharGrid& grid, const ReconstructionConfig& cfg,
                                      const Vec& target = Vec()) {
  grid.validate();
  cfg.validate();
  if (cfg.rotation_search && target.size() == 0)
    throw ConfigError("mle_reconstruct: rotation search needs a target state");

  int nr = int(grid.re_axis.size()), ni = int(grid.im_axis.size());
  int p = nr * ni;
  Vec y(p);
  std::vector<cxd> betas(p);
  double r = std::abs(cfg.basis_zeta);
  cxd phase = (r > 0.0) ? cfg.basis_zeta / r : cxd(1.0, 0.0);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < ni; ++j) {
      int k = i * ni + j;
      cxd b = grid.beta(i, j);
      y(k) = grid.values(i, j);
      betas[k] = b * std::cosh(r) + std::conj(b) * phase * std::sinh(r);
    }

  detail::MleFit chosen;
  int chosen_dim = 0;
  double prev_purity = -1.0, prev_cost = -1.0;
  Mat warm;
  for (int d = cfg.dim_min; d <= cfg.dim_max; d += cfg.dim_step) {
    Eigen::MatrixXcd design(p, d * d);
    for (int k = 0; k < p; ++k) {
      Mat blk = detail::displacement_block(betas[k], d, d).transpose();
      design.row(k) = Eigen::Map<const Vec>(blk.data(), d * d).transpose();
    }
    Mat init = Mat::Identity(d, d) / double(d);
    if (warm.rows() > 0) {
      init.setZero();
      init.topLeftCorner(warm.rows(), warm.cols()) = warm;
      init = detail::psd_unit_project(init);
    }
    detail::MleFit fit = detail::mle_fit(design, y, init, cfg.max_iterations, cfg.tol);
    double pur = purity(fit.rho);
    bool settled = prev_purity >= 0.0 && std::abs(pur - prev_purity) < cfg.purity_settle &&
                   (prev_cost - fit.cost) <= 0.05 * std::max(prev_cost, 1e-12);
    chosen = std::move(fit);
    chosen_dim = d;
    if (settled) break;
    prev_purity = pur;
    prev_cost = chosen.cost;
    warm = chosen.rho;
    if (d + cfg.dim_step > cfg.dim_max && d != cfg.dim_max) d = cfg.dim_max - cfg.dim_step;
  }

  Reconstruction out;
  out.dimension = chosen_dim;
  out.iterations = chosen.iterations;
  out.cost = chosen.cost;
  out.cost_trace = std::move(chosen.trace);

  if (r > 0.0) {
    int ambient = cfg.output_dim;
    if (ambient == 0)
      ambient = int(2.0 * (chosen_dim * std::cosh(2.0 * r) + std::sinh(r) * std::sinh(r) + 10.0)) + 10;
    ambient = std::max(ambient, chosen_dim);
    HilbertConfig amb;
    amb.n_osc = ambient;
    Mat s = squeeze(cfg.basis_zeta, amb).leftCols(chosen_dim);
    out.rho = s * chosen.rho * s.adjoint();
  } else if (cfg.output_dim > chosen_dim) {
    out.rho = Mat::Zero(cfg.output_dim, cfg.output_dim);
    out.rho.topLeftCorner(chosen_dim, chosen_dim) = chosen.rho;
  } else {
    out.rho = chosen.rho;
  }
  out.purity = purity(out.rho);

  if (cfg.rotation_search) {
    // The reconstruction asserts nothing above its own dimension, so a larger
    // target just means comparing against implicit zeros: pad and proceed.
    if (target.size() > out.rho.rows()) {
      Mat grown = Mat::Zero(target.size(), target.size());
      grown.topLeftCorner(out.rho.rows(), out.rho.cols()) = out.rho;
      out.rho = std::move(grown);
    }
    Vec t = Vec::Zero(out.rho.rows());
    t.head(target.size()) = target;
    out.post_rotation = post_rotation_search(out.rho, t, cfg.rotation_cap);
    Vec ph(out.rho.rows());
    for (int k = 0; k < out.rho.rows(); ++k) ph(k) = std::exp(-iu * out.post_rotation * double(k));
    out.rho = ph.asDiagonal() * out.rho * ph.conjugate().asDiagonal();
  }
  return out;
}

// Quadrature angle minimizing Var(x_theta), from the first and second moments:
// Var(x_theta) = 1/2 + <n> - |<a>|^2 + Re(e^{-2 i theta} mu) with
// mu = <a^2> - <a>^2.
inline double alignment_angle(const Mat& rho) {
  int n = int(rho.rows());
  Mat a = annihilation(n);
  cxd mean_a = (a * rho).trace();
  cxd mean_a2 = (a * a * rho).trace();
  cxd mu = mean_a2 - mean_a * mean_a;
  if (std::abs(mu) < 1e-14) return 0.0;
  double theta = 0.5 * (std::arg(mu) - pi);
  while (theta < -0.5 * pi) theta += pi;
  while (theta >= 0.5 * pi) theta -= pi;
  return theta;
}

inline double quadrature_variance(const Mat& rho, double theta) {
  int n = int(rho.rows());
  Mat a = annihilation(n);
  cxd mean_a = (a * rho).trace();
  cxd mu = (a * a * rho).trace() - mean_a * mean_a;
  double nbar = std::real((a.adjoint() * a * rho).trace());
  return 0.5 + nbar - std::norm(mean_a) + std::real(std::exp(cxd(0.0, -2.0 * theta)) * mu);
}

struct QuadratureFit {
  double theta = 0.0;      // alignment rotation used for the marginal
  double amplitude = 0.0;
  double center = 0.0;
  double sigma = 0.0;
  double rms_residual = 0.0;
  double db = 0.0;         // -10 log10(2 sigma^2), 0 dB for vacuum
  double variance = 0.0;   // exact second moment along theta, from operators
  double fisher_gaussian = 0.0;  // 2 / sigma^2
};

namespace detail {

inline RVec marginal_axis(int points) {
  double extent = 8.0 / std::sqrt(2.0);  // eight vacuum standard deviations
  return RVec::LinSpaced(points, -extent, extent);
}

}  // namespace detail

// Gaussian fit to the position marginal along the minimum-variance
// quadrature. Levenberg-damped Gauss-Newton on (amplitude, center, sigma),
// seeded from the exact moments; the marginal of an ideal squeezed state is
// Gaussian, so there the fit reproduces the variance to machine precision.
inline QuadratureFit squeezing_from_marginal(const Mat& rho) {
  if (rho.rows() != rho.cols() || rho.rows() < 2)
    throw ConfigError("squeezing_from_marginal: bad density matrix");
  QuadratureFit out;
  out.theta = alignment_angle(rho);
  out.variance = quadrature_variance(rho, out.theta);

  RVec x = detail::marginal_axis(1601);
  RVec pdf = quadrature_marginal(rho, out.theta, x);
  double h = x(1) - x(0);
  double mass = pdf.sum() * h;
  double mean = (x.array() * pdf.array()).sum() * h / mass;

  double amp = pdf.maxCoeff();
  double sig = std::sqrt(std::max(out.variance, 1e-12));
  double lambda = 1e-3;
  double cost = std::numeric_limits<double>::max();
  for (int it = 0; it < 200; ++it) {
    RVec g = (-((x.array() - mean) / sig).square() / 2.0).exp().matrix();
    RVec res = (amp * g.array() - pdf.array()).matrix();
    double c = res.squaredNorm();
    Eigen::MatrixXd jac(x.size(), 3);
    jac.col(0) = g;
    jac.col(1) = (amp * g.array() * (x.array() - mean) / (sig * sig)).matrix();
    jac.col(2) = (amp * g.array() * (x.array() - mean).square() / (sig * sig * sig)).matrix();
    Eigen::Matrix3d jtj = jac.transpose() * jac;
    Eigen::Vector3d jtr = jac.transpose() * res;
    Eigen::Vector3d step =
        (jtj + lambda * Eigen::Matrix3d(jtj.diagonal().asDiagonal())).ldlt().solve(-jtr);
    double na = amp + step(0), nm = mean + step(1), ns = sig + step(2);
    if (!(ns > 1e-9) || !std::isfinite(na + nm + ns)) {
      lambda *= 10.0;
      continue;
    }
    RVec ng = (-((x.array() - nm) / ns).square() / 2.0).exp().matrix();
    double nc = (na * ng.array() - pdf.array()).matrix().squaredNorm();
    if (nc < c) {
      amp = na;
      mean = nm;
      sig = ns;
      lambda = std::max(lambda * 0.3, 1e-12);
      if (c - nc < 1e-15 * (1.0 + nc)) {
        cost = nc;
        break;
      }
      cost = nc;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  if (!(sig > 0.0) || !std::isfinite(cost))
    throw NumericalError("squeezing_from_marginal: Gaussian fit failed");
  out.amplitude = amp;
  out.center = mean;
  out.sigma = sig;
  out.rms_residual = std::sqrt(cost / x.size());
  out.db = -10.0 * std::log10(2.0 * sig * sig);
  out.fisher_gaussian = 2.0 / (sig * sig);
  return out;
}

// Classical Fisher information for displacements along x_theta,
// I_c = 2 int (d/dx log P)^2 P dx, with the marginal floored at 1e-12 so the
// empty tails contribute nothing. Vacuum gives 4; an ideal squeezed state
// gives 2 over its quadrature variance.
inline double fisher_information(const Mat& rho, double theta = 0.0) {
  if (rho.rows() != rho.cols() || rho.rows() < 2)
    throw ConfigError("fisher_information: bad density matrix");
  RVec x = detail::marginal_axis(2001);
  RVec pdf = quadrature_marginal(rho, theta, x);
  double h = x(1) - x(0);
  RVec f = pdf.cwiseMax(1e-12);
  RVec logf = f.array().log().matrix();
  double acc = 0.0;
  for (int i = 1; i + 1 < x.size(); ++i) {
    double dlog = (logf(i + 1) - logf(i - 1)) / (2.0 * h);
    acc += dlog * dlog * f(i) * h;
  }
  return 2.0 * acc;
}

}  // namespace ecdc
