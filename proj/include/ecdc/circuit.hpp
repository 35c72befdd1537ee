#pragma once

// Exact matrix model of the ECD gate set on the qubit ⊗ oscillator space.
// Hybrid objects are 2·n_osc dimensional with qubit-major blocks
// [(g,g) (g,e); (e,g) (e,e)], i.e. index = qubit·n_osc + fock.

#include <array>
#include <vector>

#include "ecdc/codes.hpp"
#include "ecdc/hilbert.hpp"

namespace ecdc {

struct EcdParams {
  std::vector<cxd> betas;     // β_1..β_N plus the final β_{N+1} for D(β_{N+1}/2)
  std::vector<double> phis;   // φ_1..φ_{N+1}
  std::vector<double> thetas; // θ_1..θ_{N+1}

  // Quoted circuit depth counts only the N ECD gates; the trailing
  // rotation/displacement pair is not included.
  int depth() const { return int(betas.size()) - 1; }

  void validate() const {
    if (betas.empty()) throw ConfigError("EcdParams: need at least the final displacement");
    if (phis.size() != betas.size() || thetas.size() != betas.size())
      throw ConfigError("EcdParams: betas/phis/thetas must have equal length N+1");
    for (cxd b : betas)
      if (!std::isfinite(b.real()) || !std::isfinite(b.imag()))
        throw ConfigError("EcdParams: non-finite beta");
    for (double v : phis)
      if (!std::isfinite(v)) throw ConfigError("EcdParams: non-finite phi");
    for (double v : thetas)
      if (!std::isfinite(v)) throw ConfigError("EcdParams: non-finite theta");
  }
};

inline int hybrid_dim(const HilbertConfig& cfg) { return 2 * cfg.n_osc; }

inline Mat hybrid_blocks(const Mat& gg, const Mat& ge, const Mat& eg, const Mat& ee) {
  int n = int(gg.rows());
  Mat u(2 * n, 2 * n);
  u.topLeftCorner(n, n) = gg;
  u.topRightCorner(n, n) = ge;
  u.bottomLeftCorner(n, n) = eg;
  u.bottomRightCorner(n, n) = ee;
  return u;
}

// |ψ_osc⟩ ⊗ |qubit⟩ with qubit 0 = g, 1 = e.
inline Vec hybrid_ket(const Vec& osc, int qubit, const HilbertConfig& cfg) {
  cfg.validate();
  if (osc.size() != cfg.n_osc) throw ConfigError("hybrid_ket: oscillator size mismatch");
  if (qubit != 0 && qubit != 1) throw ConfigError("hybrid_ket: qubit index must be 0 or 1");
  Vec v = Vec::Zero(2 * cfg.n_osc);
  v.segment(qubit * cfg.n_osc, cfg.n_osc) = osc;
  return v;
}

inline Mat sigma_x(const HilbertConfig& cfg) {
  Mat id = Mat::Identity(cfg.n_osc, cfg.n_osc);
  Mat z = Mat::Zero(cfg.n_osc, cfg.n_osc);
  return hybrid_blocks(z, id, id, z);
}

// Convention σ_z = |g⟩⟨g| − |e⟩⟨e|.
inline Mat sigma_z(const HilbertConfig& cfg) {
  Mat id = Mat::Identity(cfg.n_osc, cfg.n_osc);
  Mat z = Mat::Zero(cfg.n_osc, cfg.n_osc);
  return hybrid_blocks(id, z, z, Mat(-id));
}

// R_φ(θ) = exp[−i(θ/2)(σ_x cosφ + σ_y sinφ)] ⊗ I.
inline Mat qubit_rotation(double theta, double phi, const HilbertConfig& cfg) {
  cfg.validate();
  Mat id = Mat::Identity(cfg.n_osc, cfg.n_osc);
  cxd c = std::cos(0.5 * theta);
  cxd s_ge = -iu * std::exp(-iu * phi) * std::sin(0.5 * theta);
  cxd s_eg = -iu * std::exp(iu * phi) * std::sin(0.5 * theta);
  return hybrid_blocks(c * id, s_ge * id, s_eg * id, c * id);
}

// ECD(β) = D(β/2)|e⟩⟨g| + D(−β/2)|g⟩⟨e|.
inline Mat ecd_gate(cxd beta, const HilbertConfig& cfg) {
  cfg.validate();
  Mat dp = displacement(0.5 * beta, cfg);
  Mat dm = displacement(-0.5 * beta, cfg);
  Mat z = Mat::Zero(cfg.n_osc, cfg.n_osc);
  return hybrid_blocks(z, dm, dp, z);
}

// One circuit layer b = ECD(β)·R_φ(θ) assembled directly in block form with
// the reduced parameters B = β/2, Θ = θ/2, Φ = φ − π/2.
inline Mat ecd_block(cxd beta, double phi, double theta, const HilbertConfig& cfg) {
  cfg.validate();
  Mat d = displacement(0.5 * beta, cfg);
  Mat dag = d.adjoint();
  double ct = std::cos(0.5 * theta), st = std::sin(0.5 * theta);
  cxd ph = std::exp(iu * (phi - 0.5 * pi));
  return hybrid_blocks(Mat(ph * st * dag), Mat(ct * dag), Mat(ct * d),
                       Mat(-std::conj(ph) * st * d));
}

// U = D(β_{N+1}/2)·R_{N+1}·b_N·…·b_1.
inline Mat compose_circuit(const EcdParams& p, const HilbertConfig& cfg) {
  p.validate();
  cfg.validate();
  int nn = p.depth();
  Mat u = Mat::Identity(hybrid_dim(cfg), hybrid_dim(cfg));
  for (int k = 0; k < nn; ++k)
    u = ecd_block(p.betas[k], p.phis[k], p.thetas[k], cfg) * u;
  u = qubit_rotation(p.thetas[nn], p.phis[nn], cfg) * u;
  Mat d = displacement(0.5 * p.betas[nn], cfg);
  Mat z = Mat::Zero(cfg.n_osc, cfg.n_osc);
  return hybrid_blocks(d, z, z, d) * u;
}

// F = |⟨ψ_t|U|ψ_i⟩|².
inline double state_transfer_fidelity(const EcdParams& p, const Vec& psi_i, const Vec& psi_t,
                                      const HilbertConfig& cfg) {
  if (psi_i.size() != hybrid_dim(cfg) || psi_t.size() != hybrid_dim(cfg))
    throw ConfigError("state_transfer_fidelity: kets must live on the hybrid space");
  Mat u = compose_circuit(p, cfg);
  return std::norm(psi_t.dot(u * psi_i));
}

// F = |Tr(P U_t† U)/Tr(P)|², insensitive to the circuit's global phase and to
// anything outside the projector's range.
inline double unitary_gate_fidelity(const EcdParams& p, const Mat& target, const Mat& projector,
                                    const HilbertConfig& cfg) {
  int d = hybrid_dim(cfg);
  if (target.rows() != d || projector.rows() != d)
    throw ConfigError("unitary_gate_fidelity: operator dimension mismatch");
  double tp = std::real(projector.trace());
  if (!(tp > 0.0)) throw ConfigError("unitary_gate_fidelity: projector has non-positive trace");
  Mat u = compose_circuit(p, cfg);
  cxd tr = (projector * target.adjoint() * u).trace();
  return std::norm(tr / tp);
}

// Code-space Pauli quartet σ_0..σ_3 built from the codewords (binomial error
// words are excluded on purpose: the transfer matrix is a map on the logical
// qubit alone).
inline std::array<Mat, 4> code_space_paulis(const LogicalSet& logical) {
  const Vec& zp = logical.plus_z;
  const Vec& zm = logical.minus_z;
  std::array<Mat, 4> s;
  s[0] = zp * zp.adjoint() + zm * zm.adjoint();
  s[1] = zp * zm.adjoint() + zm * zp.adjoint();
  s[2] = -iu * (zp * zm.adjoint()) + iu * (zm * zp.adjoint());
  s[3] = zp * zp.adjoint() - zm * zm.adjoint();
  return s;
}

// R_ij = ½Tr(σ_i E[σ_j]) for the unitary channel E, with the Paulis embedded
// in the hybrid space alongside the qubit ancilla fixed to |g⟩.
inline Eigen::Matrix4d pauli_transfer_matrix(const Mat& channel_unitary,
                                             const LogicalSet& logical) {
  int n = int(logical.plus_z.size());
  if (channel_unitary.rows() != 2 * n)
    throw ConfigError("pauli_transfer_matrix: unitary must act on the hybrid space");
  std::array<Mat, 4> sig = code_space_paulis(logical);
  std::array<Mat, 4> hyb;
  for (int j = 0; j < 4; ++j) {
    Mat h = Mat::Zero(2 * n, 2 * n);
    h.topLeftCorner(n, n) = sig[j];
    hyb[j] = h;
  }
  Eigen::Matrix4d r;
  for (int j = 0; j < 4; ++j) {
    Mat mapped = channel_unitary * hyb[j] * channel_unitary.adjoint();
    for (int i = 0; i < 4; ++i) r(i, j) = 0.5 * std::real((hyb[i] * mapped).trace());
  }
  return r;
}

// F̄ = Tr(R_t^T R_a)/6 + 1/3 for trace-preserving qubit channels.
inline double average_fidelity(const Eigen::Matrix4d& r_target, const Eigen::Matrix4d& r_actual) {
  return (r_target.transpose() * r_actual).trace() / 6.0 + 1.0 / 3.0;
}

}  // namespace ecdc
