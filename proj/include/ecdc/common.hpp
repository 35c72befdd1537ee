#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace ecdc {

using cxd = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;
inline constexpr cxd iu{0.0, 1.0};

// GKP envelope parameter <-> dB. Smaller delta means more squeezing.
inline double gkp_delta_to_db(double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("gkp_delta_to_db: delta must be positive");
  return -20.0 * std::log10(delta);
}

inline double gkp_db_to_delta(double db) { return std::pow(10.0, -db / 20.0); }

// Squeezed-state parameter dB convention: 20*log10(e^{|zeta|}).
inline double squeeze_zeta_to_db(double zeta_mag) { return 20.0 * std::log10(std::exp(std::abs(zeta_mag))); }

inline double squeeze_db_to_zeta(double db) { return db * std::log(10.0) / 20.0; }

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace ecdc
