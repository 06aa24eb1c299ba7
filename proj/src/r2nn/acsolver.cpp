#include "r2nn/acsolver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "r2nn/error.hpp"
#include "r2nn/unitcell.hpp"

namespace r2nn::ac {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Eigen::MatrixXcd harmonic_matrix(const sim::SystemMatrices& sys, double omega) {
  const auto n = static_cast<Eigen::Index>(sys.dofs());
  Eigen::MatrixXcd A = sys.Y.cast<Complex>();
  for (Eigen::Index i = 0; i < n; ++i) {
    A(i, i) += Complex(-omega * omega * sys.D(i), omega * sys.damping * sys.D(i));
  }
  return A;
}

}  // namespace

AcSolver::AcSolver(const sim::SystemMatrices& sys, AcOptions options) : sys_(sys), options_(options) {
  for (double w : sim::eigen_omegas(sys_)) eigen_hz_.push_back(w / kTwoPi);
}

bool AcSolver::in_guard_band(double freq_hz) const {
  return std::any_of(eigen_hz_.begin(), eigen_hz_.end(),
                     [&](double f) { return std::abs(f - freq_hz) < options_.guard_hz; });
}

AcSolution AcSolver::solve(double omega, Complex i_in) const { return solve_at(omega, sys_.input_dof, i_in); }

AcSolution AcSolver::solve_at(double omega, std::size_t dof, Complex i_in) const {
  if (!(omega > 0.0) || !std::isfinite(omega)) fail(ErrorCode::InvalidArgument, "omega must be positive");
  if (dof >= sys_.dofs()) fail(ErrorCode::InvalidArgument, "injection dof out of range");
  const double f = omega / kTwoPi;
  if (in_guard_band(f)) {
    throw NearResonanceError(omega, "frequency " + std::to_string(f) + " Hz is inside an eigenfrequency guard band");
  }
  const Eigen::MatrixXcd A = harmonic_matrix(sys_, omega);
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(A);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  const double cond = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  if (!(cond <= options_.max_condition)) {
    throw NearResonanceError(omega, "harmonic matrix is near-singular at " + std::to_string(f) +
                                        " Hz (condition " + std::to_string(cond) + ")");
  }
  Eigen::VectorXcd b = Eigen::VectorXcd::Zero(A.rows());
  b(static_cast<Eigen::Index>(dof)) = i_in;
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(A);
  const Eigen::VectorXcd v = lu.solve(b);

  AcSolution sol;
  sol.omega = omega;
  sol.injected_current = i_in;
  sol.condition = cond;
  sol.node_voltages.assign(v.data(), v.data() + v.size());
  const double bnorm = b.norm();
  sol.kcl_residual = bnorm > 0.0 ? (A * v - b).norm() / bnorm : (A * v).norm();
  return sol;
}

CurrentMap branch_currents(const sim::SystemMatrices& sys, const AcSolution& sol) {
  const auto& v = sol.node_voltages;
  if (v.size() != sys.dofs()) fail(ErrorCode::InvalidArgument, "solution does not match the system");
  const double w2 = sol.omega * sol.omega;
  auto volt = [&](int dof) { return dof == sim::kGround ? Complex(0.0) : v[static_cast<std::size_t>(dof)]; };
  // Shunt admittance of each FDNR (and damping) to ground.
  auto shunt = [&](std::size_t dof) {
    const double d = sys.D(static_cast<Eigen::Index>(dof));
    return Complex(-w2 * d, sol.omega * sys.damping * d) * v[dof];
  };

  CurrentMap map;
  std::vector<Complex> leaving(sys.dofs(), Complex(0.0));
  for (const auto& b : sys.branches) {
    const Complex i = (volt(b.dof_a) - volt(b.dof_b)) * b.conductance;
    leaving[static_cast<std::size_t>(b.dof_a)] += i;
    if (b.dof_b != sim::kGround) leaving[static_cast<std::size_t>(b.dof_b)] -= i;
    if (b.kind == sim::Branch::Kind::Coupling) map.couplings.push_back({b, i});
  }
  for (const auto& cd : sys.dof_map) {
    CellCurrents cc;
    cc.cell = cd.cell;
    cc.outer_fdnr = shunt(cd.outer);
    cc.inner_fdnr = shunt(cd.inner);
    cc.internal = Complex(0.0);
    for (const auto& b : sys.branches) {
      if (b.kind == sim::Branch::Kind::Internal && static_cast<std::size_t>(b.dof_a) == cd.outer) {
        cc.internal = (volt(b.dof_a) - volt(b.dof_b)) * b.conductance;
      }
    }
    cc.total = cc.outer_fdnr + cc.internal;
    map.cells.push_back(cc);
  }
  for (std::size_t i = 0; i < sys.dofs(); ++i) leaving[i] += shunt(i);
  leaving[sys.input_dof] -= sol.injected_current;
  const double scale = std::abs(sol.injected_current);
  double worst = 0.0;
  for (const auto& x : leaving) worst = std::max(worst, std::abs(x));
  map.max_kcl_error = scale > 0.0 ? worst / scale : worst;
  return map;
}

std::vector<CellImpedance> impedance_map(const lattice::LatticeSpec& spec, const lattice::CircuitParams& circ,
                                         double omega) {
  circ.validate(spec);
  if (!(omega > 0.0)) fail(ErrorCode::InvalidArgument, "omega must be positive");
  std::vector<CellImpedance> out;
  for (lattice::CellId c : spec.active_cells()) {
    const unitcell::UnitCellParams p{circ.D_M[c], circ.D_m[c], circ.R_n[c]};
    const auto r = unitcell::resonance_freqs(p);
    if (std::abs(omega / r.omega1 - 1.0) < 1e-9) {
      out.push_back({c, std::numeric_limits<double>::quiet_NaN(), ImpedanceFlag::Pole});
    } else if (std::abs(omega / r.omega0 - 1.0) < 1e-9) {
      out.push_back({c, 0.0, ImpedanceFlag::Zero});
    } else {
      out.push_back({c, unitcell::z_eff(p, omega), ImpedanceFlag::Ok});
    }
  }
  return out;
}

TransmissionResult transmission(const AcSolver& solver, const std::vector<double>& freq_hz) {
  const auto& sys = solver.system();
  TransmissionResult res;
  res.freq_hz = freq_hz;
  res.magnitude.assign(sys.output_dofs.size(), std::vector<double>(freq_hz.size()));
  res.flags.assign(freq_hz.size(), BinFlag::Ok);
  for (std::size_t k = 0; k < freq_hz.size(); ++k) {
    try {
      const auto sol = solver.solve(kTwoPi * freq_hz[k], Complex(1.0));
      for (std::size_t o = 0; o < sys.output_dofs.size(); ++o) {
        res.magnitude[o][k] = std::abs(sol.node_voltages[sys.output_dofs[o]]);
      }
    } catch (const NearResonanceError&) {
      res.flags[k] = BinFlag::NearResonance;
      for (auto& row : res.magnitude) row[k] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return res;
}

}  // namespace r2nn::ac
