#pragma once

// Time-domain simulation of the lattice.
//
// The lattice obeys D u'' + Y u = e_in i(t) (plus an optional C = damping * D
// term). Central differences give the explicit recurrence
//
//   u[t+1] = 2 u[t] - u[t-1] - dt^2 D^-1 Y u[t] + dt^2 D^-1 e_in i[t]
//
// which is the RNN update h[t] = Wh h[t-1] + Wi i[t] with
// h[t] = [u[t+1], u[t]].

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "r2nn/lattice.hpp"
#include "r2nn/signal.hpp"
#include "r2nn/unitcell.hpp"

namespace r2nn::sim {

inline constexpr int kGround = -1;

// A two-terminal conductance. Internal branches join the outer and inner
// node of a cell (R_n); coupling branches join two outer nodes (R_c), or an
// outer node and ground when the neighbour is grounded.
struct Branch {
  enum class Kind { Internal, Coupling };
  Kind kind;
  std::size_t index;  // cell id for Internal, edge index for Coupling
  int dof_a;
  int dof_b;  // kGround for a grounded neighbour
  double conductance;
};

struct CellDofs {
  lattice::CellId cell;
  std::size_t outer;
  std::size_t inner;
};

struct SystemMatrices {
  Eigen::VectorXd D;  // diagonal FDNR (or mass) per dof
  Eigen::MatrixXd Y;  // admittance (or stiffness), symmetric
  std::vector<CellDofs> dof_map;
  std::size_t input_dof = 0;
  std::vector<std::size_t> output_dofs;
  std::vector<Branch> branches;
  double damping = 0.0;  // 1/s, velocity-proportional, C = damping * D

  std::size_t dofs() const { return static_cast<std::size_t>(D.size()); }
  // Position of a cell in dof_map, or nullopt for grounded / unknown cells.
  std::optional<std::size_t> slot_of(lattice::CellId cell) const;
};

// Two dofs per non-grounded cell: outer node (D_M) then inner node (D_m).
// Current enters the outer node of the input cell; outputs are read at the
// inner nodes of the output cells. Throws Topology if an output cannot be
// reached from the input.
SystemMatrices assemble(const lattice::LatticeSpec& spec, const lattice::CircuitParams& circ,
                        double damping = 0.0);
SystemMatrices assemble(const lattice::Network& net, double damping = 0.0);
// Mechanical domain: D = masses, Y = stiffnesses (scaling factor 1).
SystemMatrices assemble_mechanical(const lattice::LatticeSpec& spec, const lattice::MechanicalParams& mech,
                                   double damping = 0.0);
// A lone unit cell with no coupling: input at the outer node, output at the
// inner node.
SystemMatrices single_cell(const unitcell::UnitCellParams& p);

// Recomputes Y from the branch list (used after branch conductances change).
void restamp(SystemMatrices& sys);

// Natural angular frequencies (rad/s, ascending): sqrt of the eigenvalues of
// D^-1 Y.
std::vector<double> eigen_omegas(const SystemMatrices& sys);
// 2 / omega_max.
double max_stable_dt(const SystemMatrices& sys);
// 1/(20 f1_max) where f1_max is the largest out-of-phase resonance of any
// cell, capped at half the stability limit.
double default_dt(const SystemMatrices& sys);

struct SimState {
  Eigen::VectorXd u_curr;
  Eigen::VectorXd u_prev;
  std::size_t step_index = 0;

  static SimState zero(std::size_t dofs);
};

// Sparse form of the recurrence, built once per (system, dt).
class Stepper {
 public:
  Stepper(const SystemMatrices& sys, double dt);

  std::size_t dofs() const { return dinv_.size(); }
  double dt() const { return dt_; }

  // Advances state in place by one step with input current i_t.
  void step(SimState& state, double i_t) const;

  // out = Y * u using the sparse pattern.
  void apply_y(const double* u, double* out) const;
  // Raw pieces of the recurrence, shared with the adjoint pass.
  double gain() const { return gain_; }      // a
  double retain() const { return retain_; }  // r
  double input_gain() const { return input_gain_; }
  std::size_t input_dof() const { return input_dof_; }
  const std::vector<double>& dinv() const { return dinv_; }

 private:
  double dt_;
  double dt2_;
  double gain_;
  double retain_;
  double input_gain_;
  std::size_t input_dof_;
  std::vector<double> dinv_;
  std::vector<std::size_t> row_start_;
  std::vector<std::size_t> col_;
  std::vector<double> val_;
  mutable std::vector<double> scratch_;
};

// Validates dt against max_stable_dt and steps once. Throws NumericError when
// the new state is non-finite.
SimState step(const SystemMatrices& sys, const SimState& state, double i_t, double dt);

struct SimConfig {
  double dt = 0.0;
  enum class Record { Outputs, All } record = Record::Outputs;
  std::optional<SimState> initial;
  double blowup_volts = 1e12;
};

// Recorded voltages. Row t holds u[t+1], the state after consuming input
// sample t, so the trajectory has one row per input sample.
struct Trajectory {
  double dt = 0.0;
  std::vector<std::size_t> dofs;
  std::size_t steps = 0;
  std::vector<double> data;  // row-major steps x dofs.size()

  double at(std::size_t step, std::size_t channel) const { return data[step * dofs.size() + channel]; }
  std::vector<double> channel(std::size_t ch) const;
  // Column index of a dof, or throws InvalidArgument if it was not recorded.
  std::size_t column_of(std::size_t dof) const;
};

// Throws RateMismatch if signal.rate * dt != 1, Unstable if dt exceeds the
// stability limit, NumericError on blow-up.
Trajectory run(const SystemMatrices& sys, const Signal& signal, const SimConfig& cfg);

struct RnnMatrices {
  Eigen::MatrixXd Wh;  // 2n x 2n
  Eigen::VectorXd Wi;  // 2n
};

RnnMatrices rnn_matrices(const SystemMatrices& sys, double dt);
// Same contract as run(), iterated with dense Wh / Wi.
Trajectory run_matrix_form(const SystemMatrices& sys, const Signal& signal, const SimConfig& cfg);

// E_i = sum_t u_i(t)^2 dt for each requested dof.
std::vector<double> integrate_energy(const Trajectory& traj, std::span<const std::size_t> dofs);

struct Classification {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

// L1-normalized energies; argmax with lowest-index tie-breaking. Throws
// Undecidable when no energy is positive.
Classification classify(std::span<const double> energies);

// Leapfrog-consistent energy, conserved exactly (up to rounding) by the
// undamped recurrence:
//   1/2 v' D v + 1/2 u[t]' Y u[t-1],   v = (u[t] - u[t-1]) / dt
double discrete_energy(const SystemMatrices& sys, const SimState& state, double dt);
// 1/2 w' D w + 1/2 u' Y u with w the central-difference velocity over
// (u_prev, u_curr, u_next).
double central_energy(const SystemMatrices& sys, const Eigen::VectorXd& u_prev, const Eigen::VectorXd& u_curr,
                      const Eigen::VectorXd& u_next, double dt);

struct ComparatorConfig {
  double tau = 0.05;        // s
  double hysteresis = 0.1;  // fraction
  double threshold = 0.0;   // V, smoothed amplitudes at or below this are "no signal"
};

// Behavioural comparator: per-channel |u| through a single-pole low-pass;
// a channel goes high when its smoothed amplitude exceeds every other by the
// hysteresis fraction. Inside the band the previous winner holds if it is
// still the largest. Result is channels x steps.
std::vector<std::vector<std::uint8_t>> comparator(const Trajectory& traj, const ComparatorConfig& cfg);

}  // namespace r2nn::sim
