#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "r2nn/error.hpp"
#include "r2nn/lattice.hpp"
#include "r2nn/simulator.hpp"

using namespace r2nn;
using namespace r2nn::sim;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

lattice::CircuitParams random_circuit(const lattice::LatticeSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  auto c = lattice::CircuitParams::uniform(spec, 1.307e-11, 3.53e-11, 1e6, 1e6);
  for (double& v : c.D_M) v *= u(rng);
  for (double& v : c.D_m) v *= u(rng);
  for (double& v : c.R_n) v *= u(rng);
  for (double& v : c.R_c) v *= u(rng);
  return c;
}

Signal noise_signal(std::size_t n, double rate, std::uint64_t seed, double scale = 1e-9) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Signal s;
  s.rate = rate;
  s.unit = SignalUnit::Ampere;
  for (std::size_t i = 0; i < n; ++i) s.samples.push_back(g(rng));
  return s;
}

}  // namespace

TEST_CASE("lone cell assembles to the 2x2 definition") {
  const auto sys = single_cell({2e-11, 3e-11, 4e5});
  REQUIRE(sys.dofs() == 2);
  const double g = 1.0 / 4e5;
  CHECK(sys.Y(0, 0) == doctest::Approx(g));
  CHECK(sys.Y(0, 1) == doctest::Approx(-g));
  CHECK(sys.Y(1, 0) == doctest::Approx(-g));
  CHECK(sys.Y(1, 1) == doctest::Approx(g));
  CHECK(sys.D(0) == 2e-11);
  CHECK(sys.D(1) == 3e-11);
  CHECK(sys.output_dofs == std::vector<std::size_t>{1});
}

TEST_CASE("two cells share a coupling conductance") {
  const auto spec = lattice::LatticeSpec(1, 2, {}, 0, {1});
  const auto sys = assemble(spec, lattice::CircuitParams::uniform(spec, 1e-11, 1e-11, 1e6, 2e5));
  REQUIRE(sys.dofs() == 4);
  const auto a = sys.dof_map[0].outer;
  const auto b = sys.dof_map[1].outer;
  CHECK(sys.Y(a, b) == doctest::Approx(-1.0 / 2e5));
  CHECK((sys.Y - sys.Y.transpose()).norm() == 0.0);
}

TEST_CASE("standard lattice matrices") {
  const auto spec = lattice::LatticeSpec::standard();
  std::mt19937_64 rng(1);
  const auto circ = random_circuit(spec, rng);
  const auto sys = assemble(spec, circ);
  REQUIRE(sys.dofs() == 42);
  CHECK((sys.Y - sys.Y.transpose()).norm() == 0.0);
  CHECK(sys.D.minCoeff() > 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sys.Y);
  CHECK(es.eigenvalues().minCoeff() > 0.0);

  // Row sums are the conductance each node sees to ground: coupling
  // resistors into grounded neighbours.
  std::vector<double> to_ground(sys.dofs(), 0.0);
  for (std::size_t e = 0; e < spec.edges().size(); ++e) {
    const auto& edge = spec.edges()[e];
    const bool ga = spec.is_grounded(edge.a);
    const bool gb = spec.is_grounded(edge.b);
    if (ga == gb) continue;
    const auto live = ga ? edge.b : edge.a;
    to_ground[sys.dof_map[*sys.slot_of(live)].outer] += 1.0 / circ.R_c[e];
  }
  for (std::size_t i = 0; i < sys.dofs(); ++i) {
    CHECK(sys.Y.row(static_cast<Eigen::Index>(i)).sum() == doctest::Approx(to_ground[i]).epsilon(1e-9).scale(1e-6));
  }
}

TEST_CASE("unreachable output is a topology error") {
  // Middle column grounded: the right column cannot be reached.
  const auto spec = lattice::LatticeSpec(3, 3, {1, 4, 7}, 0, {2});
  CHECK_THROWS_AS(assemble(spec, lattice::CircuitParams::uniform(spec, 1e-11, 1e-11, 1e6, 1e6)), Error);
}

TEST_CASE("stability limit") {
  const auto sys = single_cell({1.307e-11, 3.530e-11, 1e6});
  const double want = 2.0 / (kTwoPi * 51.5);
  CHECK(max_stable_dt(sys) == doctest::Approx(want).epsilon(0.002));
  CHECK(max_stable_dt(sys) == doctest::Approx(6.18e-3).epsilon(0.002));

  auto stiffer = sys;
  stiffer.Y *= 4.0;
  CHECK(max_stable_dt(stiffer) == doctest::Approx(0.5 * max_stable_dt(sys)).epsilon(1e-12));

  const auto spec = lattice::LatticeSpec::standard();
  std::mt19937_64 rng(4);
  auto mech = lattice::MechanicalParams::uniform(spec, 1.307e-3, 3.53e-3, 100.0, 100.0);
  for (double& k : mech.k_c) k *= std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  const double base = max_stable_dt(assemble_mechanical(spec, mech));
  for (double s : {1e-8, 1e-6, 1e-4}) {
    const auto sys_s = assemble(spec, lattice::mech_to_circuit(mech, lattice::ScalingFactor(s)));
    CHECK(max_stable_dt(sys_s) == doctest::Approx(base).epsilon(1e-10));
  }
}

TEST_CASE("single steps") {
  const auto sys = single_cell({1.307e-11, 3.530e-11, 1e6});
  const auto z = step(sys, SimState::zero(2), 0.0, 1e-3);
  CHECK(z.u_curr.norm() == 0.0);
  CHECK(z.u_prev.norm() == 0.0);

  SystemMatrices free;
  free.D = Eigen::VectorXd::Ones(2);
  free.Y = Eigen::MatrixXd::Zero(2, 2);
  free.dof_map.push_back({0, 0, 1});
  free.input_dof = 0;
  free.output_dofs = {1};
  const auto kicked = step(free, SimState::zero(2), 1.0, 1.0);
  CHECK(kicked.u_curr(0) == 1.0);
  CHECK(kicked.u_curr(1) == 0.0);

  CHECK_THROWS_AS(step(sys, SimState::zero(2), 0.0, 1.0), Error);  // above the limit
}

TEST_CASE("driven resonance grows linearly") {
  // The lone cell has a rigid mode and one elastic mode at omega1. Drive at
  // omega1 and compare with the modal solution from zero initial state.
  const unitcell::UnitCellParams p{1.307e-11, 3.530e-11, 1e6};
  const auto sys = single_cell(p);
  const double w1 = unitcell::resonance_freqs(p).omega1;
  const double f1 = w1 / kTwoPi;
  const double rate = 400.0 * f1;
  const double I = 1e-9;
  const std::size_t n = static_cast<std::size_t>(50.0 * rate / f1);
  Signal drive;
  drive.rate = rate;
  drive.unit = SignalUnit::Ampere;
  for (std::size_t t = 0; t < n; ++t) drive.samples.push_back(I * std::cos(w1 * static_cast<double>(t) / rate));
  SimConfig cfg;
  cfg.dt = 1.0 / rate;
  cfg.record = SimConfig::Record::All;
  const auto traj = run(sys, drive, cfg);

  // Mass-normalized elastic mode of D u'' + Y u = e0 i. The differential
  // voltage u0 - u1 excludes the rigid mode, whose drift depends on how the
  // discrete start approximates zero initial velocity.
  const double DM = p.D_M, Dm = p.D_m;
  Eigen::Vector2d phi1(Dm, -DM);
  phi1 /= std::sqrt(phi1(0) * phi1(0) * DM + phi1(1) * phi1(1) * Dm);
  double worst = 0.0, peak = 0.0;
  for (std::size_t t = n / 2; t < n; ++t) {
    const double time = static_cast<double>(t + 1) / rate;
    const double q1 = phi1(0) * I / (2.0 * w1) * time * std::sin(w1 * time);
    const double want = (phi1(0) - phi1(1)) * q1;
    worst = std::max(worst, std::abs(traj.at(t, 0) - traj.at(t, 1) - want));
    peak = std::max(peak, std::abs(want));
  }
  CHECK(worst / peak < 0.01);
  // Envelope doubles between cycles 25 and 50.
  double a25 = 0.0, a50 = 0.0;
  const auto per = static_cast<std::size_t>(rate / f1);
  for (std::size_t t = 24 * per; t < 25 * per; ++t) a25 = std::max(a25, std::abs(traj.at(t, 0) - traj.at(t, 1)));
  for (std::size_t t = n - per; t < n; ++t) a50 = std::max(a50, std::abs(traj.at(t, 0) - traj.at(t, 1)));
  CHECK(a50 / a25 == doctest::Approx(2.0).epsilon(0.03));
}

TEST_CASE("circuit stepping equals the Wh/Wi recurrence") {
  const auto spec = lattice::LatticeSpec::standard();
  std::mt19937_64 rng(21);
  for (int k = 0; k < 20; ++k) {
    const auto sys = assemble(spec, random_circuit(spec, rng));
    const double dt = 0.5 * max_stable_dt(sys);
    const auto sig = noise_signal(400, 1.0 / dt, 100 + k);
    SimConfig cfg;
    cfg.dt = dt;
    cfg.record = SimConfig::Record::All;
    const auto a = run(sys, sig, cfg);
    const auto b = run_matrix_form(sys, sig, cfg);
    REQUIRE(a.data.size() == b.data.size());
    double scale = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      scale = std::max(scale, std::abs(a.data[i]));
      diff = std::max(diff, std::abs(a.data[i] - b.data[i]));
    }
    CHECK(diff <= 1e-12 * scale);
  }
}

TEST_CASE("linearity and energy scaling") {
  const auto spec = lattice::LatticeSpec::standard();
  std::mt19937_64 rng(8);
  const auto sys = assemble(spec, random_circuit(spec, rng));
  const double dt = 0.5 * max_stable_dt(sys);
  const auto sig = noise_signal(2000, 1.0 / dt, 3);
  auto sig3 = sig;
  for (double& x : sig3.samples) x *= 3.0;
  SimConfig cfg;
  cfg.dt = dt;
  const auto a = run(sys, sig, cfg);
  const auto b = run(sys, sig3, cfg);
  double peak = 0.0;
  for (double v : a.data) peak = std::max(peak, std::abs(v));
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(std::abs(b.data[i] - 3.0 * a.data[i]) <= 1e-10 * peak);
  std::vector<std::size_t> cols(a.dofs.size());
  for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = a.dofs[c];
  const auto ea = integrate_energy(a, cols);
  const auto eb = integrate_energy(b, cols);
  for (std::size_t c = 0; c < ea.size(); ++c) CHECK(eb[c] == doctest::Approx(9.0 * ea[c]).epsilon(1e-12));
}

TEST_CASE("rate mismatch is rejected") {
  const auto sys = single_cell({1.307e-11, 3.530e-11, 1e6});
  SimConfig cfg;
  cfg.dt = 1e-3;
  CHECK_THROWS_AS(run(sys, noise_signal(10, 2000.0, 1), cfg), Error);
}

TEST_CASE("free oscillation stays bounded for 1e6 steps") {
  const auto spec = lattice::LatticeSpec::standard();
  std::mt19937_64 rng(13);
  const auto sys = assemble(spec, random_circuit(spec, rng));
  const double dt = 0.5 * max_stable_dt(sys);
  SimState st = SimState::zero(sys.dofs());
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < st.u_curr.size(); ++i) st.u_curr(i) = st.u_prev(i) = g(rng);
  const double start = st.u_curr.cwiseAbs().maxCoeff();
  Stepper stepper(sys, dt);
  double worst = 0.0;
  for (int t = 0; t < 1000000; ++t) {
    stepper.step(st, 0.0);
    if (t % 64 == 0) worst = std::max(worst, st.u_curr.cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 10.0 * start);
}

TEST_CASE("discrete energy is conserved") {
  const auto spec = lattice::LatticeSpec::standard();
  std::mt19937_64 rng(17);
  const auto sys = assemble(spec, random_circuit(spec, rng));
  const double dt = 0.5 * max_stable_dt(sys);
  SimState st = SimState::zero(sys.dofs());
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < st.u_curr.size(); ++i) st.u_curr(i) = g(rng);
  const double e0 = discrete_energy(sys, st, dt);
  CHECK(e0 > 0.0);
  Stepper stepper(sys, dt);
  for (int t = 0; t < 20000; ++t) stepper.step(st, 0.0);
  CHECK(discrete_energy(sys, st, dt) == doctest::Approx(e0).epsilon(1e-9));
}

TEST_CASE("energy integration") {
  Trajectory zero;
  zero.dt = 0.01;
  zero.dofs = {0, 1};
  zero.steps = 100;
  zero.data.assign(200, 0.0);
  const std::vector<std::size_t> both = {0, 1};
  for (double e : integrate_energy(zero, both)) CHECK(e == 0.0);

  Trajectory one = zero;
  one.data.assign(200, 1.0);
  for (double e : integrate_energy(one, both)) CHECK(e == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("classification") {
  const std::vector<double> e = {0.7, 0.2, 0.1};
  const auto c = classify(e);
  CHECK(c.label == 0);
  CHECK(c.probabilities[0] == doctest::Approx(0.7));
  CHECK(c.probabilities[1] == doctest::Approx(0.2));
  const std::vector<double> tie = {1.0, 1.0, 1.0};
  const auto t = classify(tie);
  CHECK(t.label == 0);
  for (double p : t.probabilities) CHECK(p == doctest::Approx(1.0 / 3.0));
  const std::vector<double> scaled = {0.7e4, 0.2e4, 0.1e4};
  CHECK(classify(scaled).probabilities[2] == doctest::Approx(0.1).epsilon(1e-14));
  const std::vector<double> none = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(classify(none), Error);
}

TEST_CASE("comparator") {
  const double rate = 1000.0;
  ComparatorConfig cfg;
  cfg.tau = 0.02;
  cfg.hysteresis = 0.1;
  Trajectory traj;
  traj.dt = 1.0 / rate;
  traj.dofs = {0, 1, 2};
  traj.steps = 400;
  for (std::size_t t = 0; t < traj.steps; ++t) {
    traj.data.push_back(std::sin(kTwoPi * 50.0 * static_cast<double>(t) / rate));
    traj.data.push_back(0.0);
    traj.data.push_back(0.0);
  }
  auto out = comparator(traj, cfg);
  const auto after = static_cast<std::size_t>(3.0 * cfg.tau * rate);
  for (std::size_t t = after; t < traj.steps; ++t) {
    CHECK(out[0][t] == 1);
    CHECK(out[1][t] == 0);
  }

  std::fill(traj.data.begin(), traj.data.end(), 0.0);
  out = comparator(traj, cfg);
  for (const auto& ch : out) {
    for (auto v : ch) CHECK(v == 0);
  }

  // Dominance alternates every 0.2 s between channels 0 and 1. Oracle: the
  // same single-pole filter evaluated independently, and a bounded lag.
  traj.steps = 2000;
  traj.data.assign(traj.steps * 3, 0.0);
  for (std::size_t t = 0; t < traj.steps; ++t) {
    const bool first = (t / 200) % 2 == 0;
    const double s = std::sin(kTwoPi * 50.0 * static_cast<double>(t) / rate);
    traj.data[t * 3 + (first ? 0 : 1)] = s;
    traj.data[t * 3 + (first ? 1 : 0)] = 0.1 * s;
  }
  out = comparator(traj, cfg);
  const auto lag = static_cast<std::size_t>(5.0 * cfg.tau * rate);
  for (std::size_t block = 1; block < 10; ++block) {
    const std::size_t start = block * 200;
    const std::size_t hi = block % 2 == 0 ? 0 : 1;
    CHECK(out[hi][start + lag] == 1);
    CHECK(out[1 - hi][start + lag] == 0);
  }
}
