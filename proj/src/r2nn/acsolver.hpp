#pragma once

// Steady-state harmonic analysis of the lattice: (Y - w^2 D + j w C) v = e_in i.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "r2nn/lattice.hpp"
#include "r2nn/simulator.hpp"

namespace r2nn::ac {

using Complex = std::complex<double>;

struct AcOptions {
  double guard_hz = 0.25;      // skip frequencies this close to an eigenfrequency
  double max_condition = 1e12;
};

struct AcSolution {
  double omega = 0.0;
  std::vector<Complex> node_voltages;
  Complex injected_current;
  double kcl_residual = 0.0;  // ||A v - b|| / ||b||
  double condition = 0.0;
};

// Caches the eigenfrequencies used for guard-band checks.
class AcSolver {
 public:
  explicit AcSolver(const sim::SystemMatrices& sys, AcOptions options = {});

  const sim::SystemMatrices& system() const { return sys_; }
  const std::vector<double>& eigen_hz() const { return eigen_hz_; }
  // True when f lies within the guard band of some eigenfrequency.
  bool in_guard_band(double freq_hz) const;

  // Throws NearResonanceError inside a guard band or when the harmonic
  // matrix condition number exceeds options.max_condition.
  AcSolution solve(double omega, Complex i_in) const;
  // Same, but at an arbitrary dof (reciprocity checks).
  AcSolution solve_at(double omega, std::size_t dof, Complex i_in) const;

 private:
  sim::SystemMatrices sys_;
  AcOptions options_;
  std::vector<double> eigen_hz_;
};

struct BranchCurrent {
  sim::Branch branch;
  Complex current;  // flowing from dof_a to dof_b (or to ground)
};

struct CellCurrents {
  lattice::CellId cell;
  Complex outer_fdnr;  // outer node into D_M to ground
  Complex internal;    // outer node through R_n to the inner node
  Complex inner_fdnr;  // inner node into D_m to ground
  Complex total;       // everything the cell draws from its outer node
};

struct CurrentMap {
  std::vector<BranchCurrent> couplings;  // one per coupling branch
  std::vector<CellCurrents> cells;       // one per non-grounded cell
  double max_kcl_error = 0.0;            // max node imbalance / |i_in|
};

CurrentMap branch_currents(const sim::SystemMatrices& sys, const AcSolution& sol);

enum class ImpedanceFlag : std::uint8_t { Ok = 0, Zero = 1, Pole = 2 };

struct CellImpedance {
  lattice::CellId cell;
  double z_eff;  // Ohm, NaN when flagged Pole
  ImpedanceFlag flag;
};

// unitcell::z_eff for every non-grounded cell. Frequencies within 1e-9
// relative of a cell's omega0 / omega1 are flagged instead of evaluated.
std::vector<CellImpedance> impedance_map(const lattice::LatticeSpec& spec, const lattice::CircuitParams& circ,
                                         double omega);

enum class BinFlag : std::uint8_t { Ok = 0, NearResonance = 1 };

struct TransmissionResult {
  std::vector<double> freq_hz;
  std::vector<std::vector<double>> magnitude;  // [output][bin], V/A; NaN where flagged
  std::vector<BinFlag> flags;
};

// |v_out_i / i_in| at each frequency.
TransmissionResult transmission(const AcSolver& solver, const std::vector<double>& freq_hz);

}  // namespace r2nn::ac
