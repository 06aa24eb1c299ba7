#pragma once

// Closed-form response of one FDNR local resonator (ideal, lossless).
//
//   omega0 = 1 / sqrt(D_m R_n)                 local resonance
//   omega1 = omega0 sqrt((D_M + D_m) / D_M)    out-of-phase resonance
//   D_eff  = D_M + D_m / (1 - (w/omega0)^2)
//   Z_eff  = -1 / (w^2 D_eff)
//   beta   = 1 / (1 - (w/omega0)^2)            inner/outer voltage ratio
//   H      = beta Z_eff = omega0^2 / (w^2 (w^2 - omega1^2) D_M)

namespace r2nn::unitcell {

struct UnitCellParams {
  double D_M;  // Ohm F^2
  double D_m;  // Ohm F^2
  double R_n;  // Ohm

  void validate() const;
};

struct Resonances {
  double omega0;  // rad/s
  double omega1;  // rad/s
};

Resonances resonance_freqs(const UnitCellParams& p);

// All of the following throw Error(ErrorCode::Pole) at their poles.
double d_eff(const UnitCellParams& p, double omega);
double z_eff(const UnitCellParams& p, double omega);
// -1/(w^2 D_eff) evaluated literally; undefined at omega0 as well as omega1.
double z_eff_direct(const UnitCellParams& p, double omega);
double beta(const UnitCellParams& p, double omega);
double transfer_h(const UnitCellParams& p, double omega);

}  // namespace r2nn::unitcell
