#include "r2nn/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <string>

#include <Eigen/Eigenvalues>

#include "r2nn/error.hpp"

namespace r2nn::sim {

using lattice::CellId;

std::optional<std::size_t> SystemMatrices::slot_of(CellId cell) const {
  for (std::size_t i = 0; i < dof_map.size(); ++i) {
    if (dof_map[i].cell == cell) return i;
  }
  return std::nullopt;
}

void restamp(SystemMatrices& sys) {
  const auto n = static_cast<Eigen::Index>(sys.dofs());
  sys.Y = Eigen::MatrixXd::Zero(n, n);
  for (const auto& b : sys.branches) {
    const double g = b.conductance;
    sys.Y(b.dof_a, b.dof_a) += g;
    if (b.dof_b != kGround) {
      sys.Y(b.dof_b, b.dof_b) += g;
      sys.Y(b.dof_a, b.dof_b) -= g;
      sys.Y(b.dof_b, b.dof_a) -= g;
    }
  }
}

SystemMatrices assemble(const lattice::LatticeSpec& spec, const lattice::CircuitParams& circ, double damping) {
  circ.validate(spec);
  if (!(damping >= 0.0) || !std::isfinite(damping)) fail(ErrorCode::InvalidParameter, "damping must be >= 0");

  SystemMatrices sys;
  sys.damping = damping;
  const auto active = spec.active_cells();
  std::vector<int> outer_of(spec.cell_count(), kGround);
  sys.D.resize(static_cast<Eigen::Index>(2 * active.size()));
  for (std::size_t slot = 0; slot < active.size(); ++slot) {
    const CellId c = active[slot];
    const std::size_t outer = 2 * slot;
    const std::size_t inner = outer + 1;
    outer_of[c] = static_cast<int>(outer);
    sys.dof_map.push_back({c, outer, inner});
    sys.D(static_cast<Eigen::Index>(outer)) = circ.D_M[c];
    sys.D(static_cast<Eigen::Index>(inner)) = circ.D_m[c];
    sys.branches.push_back({Branch::Kind::Internal, c, static_cast<int>(outer), static_cast<int>(inner),
                            1.0 / circ.R_n[c]});
  }
  for (std::size_t e = 0; e < spec.edges().size(); ++e) {
    if (!spec.edge_active(e)) continue;
    const auto& edge = spec.edges()[e];
    int a = outer_of[edge.a];
    int b = outer_of[edge.b];
    if (a == kGround) std::swap(a, b);
    sys.branches.push_back({Branch::Kind::Coupling, e, a, b, 1.0 / circ.R_c[e]});
  }
  restamp(sys);

  sys.input_dof = static_cast<std::size_t>(outer_of[spec.input_cell()]);
  for (CellId o : spec.output_cells()) sys.output_dofs.push_back(static_cast<std::size_t>(outer_of[o]) + 1);

  // Every output must be reachable from the input through coupling edges
  // between non-grounded cells.
  std::vector<bool> seen(spec.cell_count(), false);
  std::queue<CellId> frontier;
  frontier.push(spec.input_cell());
  seen[spec.input_cell()] = true;
  while (!frontier.empty()) {
    const CellId c = frontier.front();
    frontier.pop();
    for (const auto& edge : spec.edges()) {
      CellId next;
      if (edge.a == c) next = edge.b;
      else if (edge.b == c) next = edge.a;
      else continue;
      if (spec.is_grounded(next) || seen[next]) continue;
      seen[next] = true;
      frontier.push(next);
    }
  }
  for (CellId o : spec.output_cells()) {
    if (!seen[o]) fail(ErrorCode::Topology, "output cell " + std::to_string(o) + " is not connected to the input");
  }
  return sys;
}

SystemMatrices assemble(const lattice::Network& net, double damping) {
  return assemble(net.spec, net.circuit, damping);
}

SystemMatrices assemble_mechanical(const lattice::LatticeSpec& spec, const lattice::MechanicalParams& mech,
                                   double damping) {
  mech.validate(spec);
  return assemble(spec, lattice::mech_to_circuit(mech, lattice::ScalingFactor(1.0)), damping);
}

SystemMatrices single_cell(const unitcell::UnitCellParams& p) {
  p.validate();
  SystemMatrices sys;
  sys.D.resize(2);
  sys.D << p.D_M, p.D_m;
  sys.dof_map.push_back({0, 0, 1});
  sys.branches.push_back({Branch::Kind::Internal, 0, 0, 1, 1.0 / p.R_n});
  restamp(sys);
  sys.input_dof = 0;
  sys.output_dofs = {1};
  return sys;
}

std::vector<double> eigen_omegas(const SystemMatrices& sys) {
  // Symmetric form D^-1/2 Y D^-1/2 shares its spectrum with D^-1 Y.
  const Eigen::VectorXd s = sys.D.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd K = s.asDiagonal() * sys.Y * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(K, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) fail(ErrorCode::Numeric, "eigenvalue solve failed");
  std::vector<double> out;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
    out.push_back(std::sqrt(std::max(0.0, solver.eigenvalues()(i))));
  }
  return out;
}

double max_stable_dt(const SystemMatrices& sys) {
  const auto w = eigen_omegas(sys);
  const double w_max = w.empty() ? 0.0 : w.back();
  if (w_max <= 0.0) return std::numeric_limits<double>::infinity();
  return 2.0 / w_max;
}

double default_dt(const SystemMatrices& sys) {
  double f1_max = 0.0;
  for (const auto& b : sys.branches) {
    if (b.kind != Branch::Kind::Internal) continue;
    const double DM = sys.D(b.dof_a);
    const double Dm = sys.D(b.dof_b);
    const auto r = unitcell::resonance_freqs({DM, Dm, 1.0 / b.conductance});
    f1_max = std::max(f1_max, r.omega1 / (2.0 * std::numbers::pi));
  }
  const double cap = 0.5 * max_stable_dt(sys);
  if (f1_max <= 0.0) return cap;
  return std::min(1.0 / (20.0 * f1_max), cap);
}

SimState SimState::zero(std::size_t dofs) {
  const auto n = static_cast<Eigen::Index>(dofs);
  return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
}

Stepper::Stepper(const SystemMatrices& sys, double dt) : dt_(dt), dt2_(dt * dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) fail(ErrorCode::InvalidParameter, "time step must be positive");
  const double limit = max_stable_dt(sys);
  if (!(dt < limit)) {
    fail(ErrorCode::Unstable, "time step " + std::to_string(dt) + " s is not below the stability limit " +
                                  std::to_string(limit) + " s");
  }
  const double half = 0.5 * sys.damping * dt;
  gain_ = 1.0 / (1.0 + half);
  retain_ = (1.0 - half) * gain_;
  const std::size_t n = sys.dofs();
  dinv_.resize(n);
  for (std::size_t i = 0; i < n; ++i) dinv_[i] = 1.0 / sys.D(static_cast<Eigen::Index>(i));
  input_dof_ = sys.input_dof;
  input_gain_ = dt2_ * dinv_[input_dof_];
  row_start_.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = sys.Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (v != 0.0) {
        col_.push_back(j);
        val_.push_back(v);
      }
    }
    row_start_.push_back(col_.size());
  }
  scratch_.resize(n);
}

void Stepper::apply_y(const double* u, double* out) const {
  const std::size_t n = dinv_.size();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) acc += val_[k] * u[col_[k]];
    out[i] = acc;
  }
}

void Stepper::step(SimState& state, double i_t) const {
  const std::size_t n = dinv_.size();
  double* u = state.u_curr.data();
  double* up = state.u_prev.data();
  apply_y(u, scratch_.data());
  // u_prev becomes u_next in place, then the two buffers swap roles.
  for (std::size_t i = 0; i < n; ++i) {
    up[i] = gain_ * (2.0 * u[i] - dt2_ * dinv_[i] * scratch_[i]) - retain_ * up[i];
  }
  up[input_dof_] += gain_ * input_gain_ * i_t;
  state.u_curr.swap(state.u_prev);
  ++state.step_index;
}

SimState step(const SystemMatrices& sys, const SimState& state, double i_t, double dt) {
  Stepper stepper(sys, dt);
  SimState next = state;
  stepper.step(next, i_t);
  for (Eigen::Index i = 0; i < next.u_curr.size(); ++i) {
    if (!std::isfinite(next.u_curr(i))) {
      throw NumericError(next.step_index, "non-finite state at step " + std::to_string(next.step_index));
    }
  }
  return next;
}

std::vector<double> Trajectory::channel(std::size_t ch) const {
  std::vector<double> out(steps);
  for (std::size_t t = 0; t < steps; ++t) out[t] = at(t, ch);
  return out;
}

std::size_t Trajectory::column_of(std::size_t dof) const {
  auto it = std::find(dofs.begin(), dofs.end(), dof);
  if (it == dofs.end()) fail(ErrorCode::InvalidArgument, "dof " + std::to_string(dof) + " was not recorded");
  return static_cast<std::size_t>(it - dofs.begin());
}

namespace {

void check_rate(const Signal& signal, double dt) {
  signal.validate();
  if (!(dt > 0.0)) fail(ErrorCode::InvalidParameter, "time step must be positive");
  if (std::abs(signal.rate * dt - 1.0) > 1e-9) {
    fail(ErrorCode::RateMismatch, "signal rate " + std::to_string(signal.rate) + " Hz does not match dt = " +
                                      std::to_string(dt) + " s");
  }
}

std::vector<std::size_t> recorded_dofs(const SystemMatrices& sys, const SimConfig& cfg) {
  if (cfg.record == SimConfig::Record::Outputs) return sys.output_dofs;
  std::vector<std::size_t> all(sys.dofs());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

SimState initial_state(const SystemMatrices& sys, const SimConfig& cfg) {
  if (!cfg.initial) return SimState::zero(sys.dofs());
  const auto n = static_cast<Eigen::Index>(sys.dofs());
  if (cfg.initial->u_curr.size() != n || cfg.initial->u_prev.size() != n) {
    fail(ErrorCode::InvalidArgument, "initial state has the wrong dimension");
  }
  return *cfg.initial;
}

void check_blowup(const double* u, std::size_t n, std::size_t step, double limit) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!(std::abs(u[i]) <= limit)) {
      throw NumericError(step, "simulation blew up at step " + std::to_string(step) + " (|u| = " +
                                   std::to_string(std::abs(u[i])) + " V at dof " + std::to_string(i) + ")");
    }
  }
}

}  // namespace

Trajectory run(const SystemMatrices& sys, const Signal& signal, const SimConfig& cfg) {
  check_rate(signal, cfg.dt);
  Stepper stepper(sys, cfg.dt);
  SimState state = initial_state(sys, cfg);
  Trajectory traj;
  traj.dt = cfg.dt;
  traj.dofs = recorded_dofs(sys, cfg);
  traj.steps = signal.size();
  traj.data.resize(traj.steps * traj.dofs.size());
  const std::size_t n = sys.dofs();
  for (std::size_t t = 0; t < signal.size(); ++t) {
    stepper.step(state, signal.samples[t]);
    const double* u = state.u_curr.data();
    check_blowup(u, n, t, cfg.blowup_volts);
    double* row = traj.data.data() + t * traj.dofs.size();
    for (std::size_t c = 0; c < traj.dofs.size(); ++c) row[c] = u[traj.dofs[c]];
  }
  return traj;
}

RnnMatrices rnn_matrices(const SystemMatrices& sys, double dt) {
  const auto n = static_cast<Eigen::Index>(sys.dofs());
  const double half = 0.5 * sys.damping * dt;
  const double a = 1.0 / (1.0 + half);
  const double r = (1.0 - half) * a;
  const Eigen::VectorXd dinv = sys.D.cwiseInverse();
  RnnMatrices w;
  w.Wh = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  w.Wh.topLeftCorner(n, n) =
      a * (2.0 * Eigen::MatrixXd::Identity(n, n) - dt * dt * dinv.asDiagonal() * sys.Y);
  w.Wh.topRightCorner(n, n) = -r * Eigen::MatrixXd::Identity(n, n);
  w.Wh.bottomLeftCorner(n, n) = Eigen::MatrixXd::Identity(n, n);
  w.Wi = Eigen::VectorXd::Zero(2 * n);
  const auto in = static_cast<Eigen::Index>(sys.input_dof);
  w.Wi(in) = a * dt * dt * dinv(in);
  return w;
}

Trajectory run_matrix_form(const SystemMatrices& sys, const Signal& signal, const SimConfig& cfg) {
  check_rate(signal, cfg.dt);
  if (!(cfg.dt < max_stable_dt(sys))) fail(ErrorCode::Unstable, "time step is not below the stability limit");
  const auto w = rnn_matrices(sys, cfg.dt);
  const SimState init = initial_state(sys, cfg);
  const auto n = static_cast<Eigen::Index>(sys.dofs());
  Eigen::VectorXd h(2 * n);
  h << init.u_curr, init.u_prev;
  Trajectory traj;
  traj.dt = cfg.dt;
  traj.dofs = recorded_dofs(sys, cfg);
  traj.steps = signal.size();
  traj.data.resize(traj.steps * traj.dofs.size());
  for (std::size_t t = 0; t < signal.size(); ++t) {
    h = w.Wh * h + w.Wi * signal.samples[t];
    check_blowup(h.data(), static_cast<std::size_t>(n), t, cfg.blowup_volts);
    double* row = traj.data.data() + t * traj.dofs.size();
    for (std::size_t c = 0; c < traj.dofs.size(); ++c) row[c] = h(static_cast<Eigen::Index>(traj.dofs[c]));
  }
  return traj;
}

std::vector<double> integrate_energy(const Trajectory& traj, std::span<const std::size_t> dofs) {
  std::vector<double> out;
  for (std::size_t dof : dofs) {
    const std::size_t col = traj.column_of(dof);
    double acc = 0.0;
    for (std::size_t t = 0; t < traj.steps; ++t) {
      const double u = traj.at(t, col);
      acc += u * u;
    }
    out.push_back(acc * traj.dt);
  }
  return out;
}

Classification classify(std::span<const double> energies) {
  if (energies.empty()) fail(ErrorCode::InvalidArgument, "no energies to classify");
  double total = 0.0;
  for (double e : energies) {
    if (!(e >= 0.0) || !std::isfinite(e)) fail(ErrorCode::InvalidArgument, "energies must be finite and >= 0");
    total += e;
  }
  if (!(total > 0.0)) fail(ErrorCode::Undecidable, "all output energies are zero");
  Classification c;
  for (double e : energies) c.probabilities.push_back(e / total);
  c.label = static_cast<std::size_t>(std::max_element(energies.begin(), energies.end()) - energies.begin());
  return c;
}

double discrete_energy(const SystemMatrices& sys, const SimState& state, double dt) {
  const Eigen::VectorXd v = (state.u_curr - state.u_prev) / dt;
  return 0.5 * v.dot(sys.D.asDiagonal() * v) + 0.5 * state.u_curr.dot(sys.Y * state.u_prev);
}

double central_energy(const SystemMatrices& sys, const Eigen::VectorXd& u_prev, const Eigen::VectorXd& u_curr,
                      const Eigen::VectorXd& u_next, double dt) {
  const Eigen::VectorXd w = (u_next - u_prev) / (2.0 * dt);
  return 0.5 * w.dot(sys.D.asDiagonal() * w) + 0.5 * u_curr.dot(sys.Y * u_curr);
}

std::vector<std::vector<std::uint8_t>> comparator(const Trajectory& traj, const ComparatorConfig& cfg) {
  if (!(cfg.tau > 0.0)) fail(ErrorCode::InvalidParameter, "comparator time constant must be positive");
  if (!(cfg.hysteresis >= 0.0)) fail(ErrorCode::InvalidParameter, "hysteresis must be >= 0");
  const std::size_t channels = traj.dofs.size();
  std::vector<std::vector<std::uint8_t>> out(channels, std::vector<std::uint8_t>(traj.steps, 0));
  std::vector<double> smooth(channels, 0.0);
  const double alpha = 1.0 - std::exp(-traj.dt / cfg.tau);
  const std::size_t none = channels;
  std::size_t winner = none;
  for (std::size_t t = 0; t < traj.steps; ++t) {
    for (std::size_t c = 0; c < channels; ++c) smooth[c] += alpha * (std::abs(traj.at(t, c)) - smooth[c]);
    std::size_t best = 0;
    for (std::size_t c = 1; c < channels; ++c) {
      if (smooth[c] > smooth[best]) best = c;
    }
    double runner_up = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      if (c != best) runner_up = std::max(runner_up, smooth[c]);
    }
    if (smooth[best] <= cfg.threshold) {
      winner = none;
    } else if (smooth[best] > (1.0 + cfg.hysteresis) * runner_up) {
      winner = best;
    } else if (winner != best) {
      winner = none;
    }
    if (winner != none) out[winner][t] = 1;
  }
  return out;
}

}  // namespace r2nn::sim
