#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "r2nn/acsolver.hpp"
#include "r2nn/error.hpp"
#include "r2nn/simulator.hpp"
#include "r2nn/unitcell.hpp"

using namespace r2nn;
using namespace r2nn::ac;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
const unitcell::UnitCellParams kCell{1.307e-11, 3.530e-11, 1e6};

lattice::CircuitParams random_circuit(const lattice::LatticeSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  auto c = lattice::CircuitParams::uniform(spec, 1.307e-11, 3.53e-11, 1e6, 1e6);
  for (double& v : c.R_n) v *= u(rng);
  for (double& v : c.R_c) v *= u(rng);
  return c;
}

double away_from_modes(const AcSolver& s, double f) {
  while (s.in_guard_band(f)) f += 0.05;
  return f;
}

}  // namespace

TEST_CASE("DC limit is the resistive path to ground") {
  // in -- Rc -- out -- Rc -- grounded cell
  const auto spec = lattice::LatticeSpec(1, 3, {2}, 0, {1});
  auto circ = lattice::CircuitParams::uniform(spec, 1.307e-11, 3.53e-11, 1e6, 1e6);
  circ.R_c = {2.2e5, 4.7e5};
  const auto sys = sim::assemble(spec, circ);
  AcSolver solver(sys);
  const auto sol = solver.solve(kTwoPi * 0.01, Complex(1e-6));
  const double want = 1e-6 * (2.2e5 + 4.7e5);
  CHECK(sol.node_voltages[sys.input_dof].real() == doctest::Approx(want).epsilon(1e-6));
  CHECK(std::abs(sol.node_voltages[sys.output_dofs[0]]) == doctest::Approx(1e-6 * 4.7e5).epsilon(1e-6));
  CHECK(sol.kcl_residual < 1e-12);
}

TEST_CASE("inner to outer voltage ratio is beta") {
  const auto spec = lattice::LatticeSpec::standard();
  const auto circ = random_circuit(spec, 3);
  const auto sys = sim::assemble(spec, circ);
  AcSolver solver(sys);
  const double f = away_from_modes(solver, 37.0);
  const auto sol = solver.solve(kTwoPi * f, Complex(1.0));
  for (const auto& d : sys.dof_map) {
    const double b = unitcell::beta({circ.D_M[d.cell], circ.D_m[d.cell], circ.R_n[d.cell]}, kTwoPi * f);
    const Complex ratio = sol.node_voltages[d.inner] / sol.node_voltages[d.outer];
    CHECK(ratio.real() == doctest::Approx(b).epsilon(1e-9));
  }
}

TEST_CASE("reciprocity") {
  const auto spec = lattice::LatticeSpec::standard();
  const auto sys = sim::assemble(spec, random_circuit(spec, 5));
  AcSolver solver(sys);
  for (double f : {12.0, 33.0, 61.0, 88.0}) {
    const double ff = away_from_modes(solver, f);
    const auto fwd = solver.solve(kTwoPi * ff, Complex(1.0));
    for (std::size_t o : sys.output_dofs) {
      const auto rev = solver.solve_at(kTwoPi * ff, o, Complex(1.0));
      const Complex a = fwd.node_voltages[o];
      const Complex b = rev.node_voltages[sys.input_dof];
      CHECK(std::abs(a - b) <= 1e-10 * std::abs(a));
    }
  }
}

TEST_CASE("guard bands") {
  const auto spec = lattice::LatticeSpec::standard();
  const auto sys = sim::assemble(spec, random_circuit(spec, 7));
  AcSolver solver(sys);
  const double f = solver.eigen_hz()[5];
  CHECK(solver.in_guard_band(f + 0.1));
  CHECK_THROWS_AS(solver.solve(kTwoPi * f, Complex(1.0)), NearResonanceError);
  const auto tr = transmission(solver, {f, away_from_modes(solver, 40.0)});
  CHECK(tr.flags[0] == BinFlag::NearResonance);
  CHECK(std::isnan(tr.magnitude[0][0]));
  CHECK(tr.flags[1] == BinFlag::Ok);
}

TEST_CASE("branch currents") {
  const auto spec = lattice::LatticeSpec::standard();
  const auto sys = sim::assemble(spec, random_circuit(spec, 9));
  AcSolver solver(sys);
  const double f = away_from_modes(solver, 70.0);
  const auto zero = branch_currents(sys, solver.solve(kTwoPi * f, Complex(0.0)));
  for (const auto& b : zero.couplings) CHECK(std::abs(b.current) == 0.0);
  for (const auto& c : zero.cells) CHECK(std::abs(c.total) == 0.0);

  const auto map = branch_currents(sys, solver.solve(kTwoPi * f, Complex(1.0)));
  CHECK(map.max_kcl_error < 1e-9);
  CHECK(map.cells.size() == 21);

  // Two cells in a chain ending in ground: all of i_in passes through the
  // coupling resistor, minus what the input cell shunts.
  const auto chain = lattice::LatticeSpec(1, 3, {2}, 0, {1});
  const auto csys = sim::assemble(chain, lattice::CircuitParams::uniform(chain, 1.307e-11, 3.53e-11, 1e6, 1e5));
  AcSolver cs(csys);
  const double fc = away_from_modes(cs, 40.0);
  const auto cm = branch_currents(csys, cs.solve(kTwoPi * fc, Complex(1.0)));
  REQUIRE(cm.couplings.size() == 2);
  const Complex into_input_cell = cm.cells[0].total;
  CHECK(std::abs(cm.couplings[0].current + into_input_cell - Complex(1.0)) < 1e-9);
  CHECK(std::abs(cm.couplings[0].current - cm.cells[1].total - cm.couplings[1].current) < 1e-9);
}

TEST_CASE("impedance map flags") {
  const auto spec = lattice::LatticeSpec::standard();
  const auto circ = lattice::CircuitParams::uniform(spec, 1.307e-11, 3.53e-11, 1e6, 1e6);
  const auto r = unitcell::resonance_freqs(kCell);
  const auto at0 = impedance_map(spec, circ, r.omega0);
  CHECK(at0.size() == 21);
  for (const auto& c : at0) CHECK(c.flag == ImpedanceFlag::Zero);
  for (const auto& c : impedance_map(spec, circ, r.omega1)) CHECK(c.flag == ImpedanceFlag::Pole);
  for (const auto& c : impedance_map(spec, circ, kTwoPi * 40.0)) {
    CHECK(c.flag == ImpedanceFlag::Ok);
    CHECK(c.z_eff == doctest::Approx(unitcell::z_eff(kCell, kTwoPi * 40.0)));
  }
}

TEST_CASE("single-cell transmission is the closed-form H") {
  const auto sys = sim::single_cell(kCell);
  AcSolver solver(sys);
  std::vector<double> grid;
  for (double f = 1.0; f <= 100.0; f += 0.37) grid.push_back(f);
  const auto tr = transmission(solver, grid);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (tr.flags[k] != BinFlag::Ok) continue;
    const double want = std::abs(unitcell::transfer_h(kCell, kTwoPi * grid[k]));
    CHECK(tr.magnitude[0][k] == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("transmission ignores the injected amplitude") {
  const auto spec = lattice::LatticeSpec::standard();
  const auto sys = sim::assemble(spec, random_circuit(spec, 12));
  AcSolver solver(sys);
  const double f = away_from_modes(solver, 45.0);
  const auto a = solver.solve(kTwoPi * f, Complex(1.0));
  const auto b = solver.solve(kTwoPi * f, Complex(3e-6, 1e-6));
  for (std::size_t o : sys.output_dofs) {
    CHECK(std::abs(b.node_voltages[o] / Complex(3e-6, 1e-6)) == doctest::Approx(std::abs(a.node_voltages[o])).epsilon(1e-10));
  }
}

TEST_CASE("AC transfer matches the time-domain steady state") {
  const auto spec = lattice::LatticeSpec::standard();
  const auto sys = sim::assemble(spec, random_circuit(spec, 21));
  AcSolver solver(sys);
  const double rate = 8000.0;
  std::size_t tested = 0;
  for (double f : {12.0, 23.0, 37.0, 46.0, 58.0, 64.0, 77.0, 91.0}) {
    bool clear = true;
    for (double e : solver.eigen_hz()) clear = clear && std::abs(e - f) >= 2.0;
    if (!clear) continue;
    ++tested;
    // 20 cycles of raised-cosine settle, then 50 analysed cycles.
    const double settle = 20.0 / f;
    const double span = 50.0 / f;
    const auto n = static_cast<std::size_t>((settle + span) * rate);
    Signal drive{rate, {}, SignalUnit::Ampere};
    for (std::size_t t = 0; t < n; ++t) {
      const double time = static_cast<double>(t) / rate;
      const double ramp = time < settle ? 0.5 * (1.0 - std::cos(std::numbers::pi * time / settle)) : 1.0;
      drive.samples.push_back(1e-6 * ramp * std::cos(kTwoPi * f * time));
    }
    sim::SimConfig cfg;
    cfg.dt = 1.0 / rate;
    const auto traj = sim::run(sys, drive, cfg);
    const auto sol = solver.solve(kTwoPi * f, Complex(1e-6));
    for (std::size_t o = 0; o < sys.output_dofs.size(); ++o) {
      // Hann-weighted phasor over the analysed span; row t is time (t+1)/rate.
      Complex acc(0.0);
      double wsum = 0.0;
      const auto first = static_cast<std::size_t>(settle * rate);
      for (std::size_t t = first; t < n; ++t) {
        const double x = static_cast<double>(t - first) / static_cast<double>(n - first);
        const double w = 0.5 * (1.0 - std::cos(kTwoPi * x));
        const double time = static_cast<double>(t + 1) / rate;
        acc += w * traj.at(t, o) * std::exp(Complex(0.0, -kTwoPi * f * time));
        wsum += w;
      }
      const double measured = 2.0 * std::abs(acc) / wsum;
      CHECK(measured == doctest::Approx(std::abs(sol.node_voltages[sys.output_dofs[o]])).epsilon(0.05));
    }
  }
  CHECK(tested >= 3);
}
