#include "r2nn/unitcell.hpp"

#include <cmath>
#include <string>

#include "r2nn/error.hpp"

namespace r2nn::unitcell {

namespace {

void require_frequency(double omega, bool allow_zero) {
  if (!std::isfinite(omega) || omega < 0.0 || (!allow_zero && omega == 0.0)) {
    fail(ErrorCode::InvalidArgument, "invalid angular frequency " + std::to_string(omega));
  }
}

[[noreturn]] void pole(const char* what, double omega) {
  fail(ErrorCode::Pole, std::string(what) + " has a pole at omega = " + std::to_string(omega));
}

}  // namespace

void UnitCellParams::validate() const {
  for (double v : {D_M, D_m, R_n}) {
    if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorCode::InvalidParameter, "unit cell values must be positive");
  }
}

Resonances resonance_freqs(const UnitCellParams& p) {
  p.validate();
  const double w0 = 1.0 / std::sqrt(p.D_m * p.R_n);
  return {w0, w0 * std::sqrt((p.D_M + p.D_m) / p.D_M)};
}

double d_eff(const UnitCellParams& p, double omega) {
  require_frequency(omega, true);
  const double w0 = resonance_freqs(p).omega0;
  const double r = omega / w0;
  const double denom = 1.0 - r * r;
  if (denom == 0.0) pole("D_eff", omega);
  return p.D_M + p.D_m / denom;
}

double z_eff(const UnitCellParams& p, double omega) {
  require_frequency(omega, false);
  const auto [w0, w1] = resonance_freqs(p);
  const double w2 = omega * omega;
  const double denom = w2 * (w2 - w1 * w1) * p.D_M;
  if (denom == 0.0) pole("Z_eff", omega);
  return -(w2 - w0 * w0) / denom;
}

double z_eff_direct(const UnitCellParams& p, double omega) {
  require_frequency(omega, false);
  const double d = d_eff(p, omega);
  if (d == 0.0) pole("Z_eff", omega);
  return -1.0 / (omega * omega * d);
}

double beta(const UnitCellParams& p, double omega) {
  require_frequency(omega, true);
  const double r = omega / resonance_freqs(p).omega0;
  const double denom = 1.0 - r * r;
  if (denom == 0.0) pole("beta", omega);
  return 1.0 / denom;
}

double transfer_h(const UnitCellParams& p, double omega) {
  require_frequency(omega, false);
  const auto [w0, w1] = resonance_freqs(p);
  const double w2 = omega * omega;
  const double denom = w2 * (w2 - w1 * w1) * p.D_M;
  if (denom == 0.0) pole("H", omega);
  return w0 * w0 / denom;
}

}  // namespace r2nn::unitcell
