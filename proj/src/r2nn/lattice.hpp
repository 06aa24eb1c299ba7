#pragma once

// Lattice topology, mechanical and circuit parameter sets, and the
// mechanical-electrical mapping between them.
//
// Mapping (force ~ current, displacement ~ voltage):
//   D = s * mass          (FDNR value, Ohm F^2)
//   R = 1 / (s * k)       (resistance, Ohm)
// Every resonance of the lattice depends only on k/mass = 1/(D R), so the
// scaling factor s moves element values into a realizable range without
// touching the dynamics.

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace r2nn::lattice {

using CellId = std::size_t;

struct Edge {
  CellId a;
  CellId b;
};

class LatticeSpec {
 public:
  LatticeSpec(std::size_t rows, std::size_t cols, std::set<CellId> grounded, CellId input,
              std::vector<CellId> outputs);

  // 5x5, four corners grounded, input at the middle of the top row,
  // outputs at the three non-grounded cells of the bottom row.
  static LatticeSpec standard();

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t cell_count() const { return rows_ * cols_; }
  std::size_t row_of(CellId c) const { return c / cols_; }
  std::size_t col_of(CellId c) const { return c % cols_; }
  CellId cell_at(std::size_t row, std::size_t col) const { return row * cols_ + col; }

  bool is_grounded(CellId c) const { return grounded_.count(c) != 0; }
  const std::set<CellId>& grounded() const { return grounded_; }
  CellId input_cell() const { return input_; }
  const std::vector<CellId>& output_cells() const { return outputs_; }

  // Every 4-neighbour pair, row-major, each pair once with a < b.
  const std::vector<Edge>& edges() const { return edges_; }
  // An edge with two grounded ends carries no current and is not a component.
  bool edge_active(std::size_t e) const;
  // Non-grounded cells in index order.
  std::vector<CellId> active_cells() const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::set<CellId> grounded_;
  CellId input_;
  std::vector<CellId> outputs_;
  std::vector<Edge> edges_;
};

// Per-cell vectors have cell_count() entries (grounded cells included so the
// index is the cell id); per-edge vectors follow LatticeSpec::edges().
struct MechanicalParams {
  std::vector<double> M_outer;  // kg
  std::vector<double> m_inner;  // kg
  std::vector<double> k_n;      // N/m
  std::vector<double> k_c;      // N/m

  void validate(const LatticeSpec& spec) const;
  static MechanicalParams uniform(const LatticeSpec& spec, double M, double m, double kn, double kc);
};

struct CircuitParams {
  std::vector<double> D_M;  // Ohm F^2
  std::vector<double> D_m;  // Ohm F^2
  std::vector<double> R_n;  // Ohm
  std::vector<double> R_c;  // Ohm

  void validate(const LatticeSpec& spec) const;
  static CircuitParams uniform(const LatticeSpec& spec, double DM, double Dm, double Rn, double Rc);
};

class ScalingFactor {
 public:
  explicit ScalingFactor(double s);
  double value() const { return s_; }

 private:
  double s_;
};

CircuitParams mech_to_circuit(const MechanicalParams& mech, ScalingFactor s);
MechanicalParams circuit_to_mech(const CircuitParams& circ, ScalingFactor s);

// s such that the geometric mean of the realized resistances equals r_target.
// Only components that exist in the circuit (non-grounded cells, active
// edges) take part.
ScalingFactor choose_scaling(const LatticeSpec& spec, const MechanicalParams& mech, double r_target);

enum class ESeries { E24, E96 };

std::optional<ESeries> parse_eseries(const std::string& name);
const std::vector<double>& eseries_mantissas(ESeries series);  // in [1, 10)
// Nearest preferred value by relative error.
double nearest_preferred(double value, ESeries series);

struct QuantizedValue {
  std::string ref;  // e.g. "RN7", "RC12"
  double before;
  double after;
};

struct QuantizeReport {
  CircuitParams params;
  double max_rel_error = 0.0;
  std::vector<QuantizedValue> changed;
};

// Resistances snap to the series; FDNR values are left alone. Only realized
// components are quantized and reported.
QuantizeReport quantize_eseries(const LatticeSpec& spec, const CircuitParams& circ, ESeries series);

// A lattice with concrete circuit values; the unit of exchange for files,
// the CLI and the C API.
struct Network {
  LatticeSpec spec;
  CircuitParams circuit;
  double scaling = 1.0;
};

nlohmann::json to_json(const LatticeSpec& spec);
LatticeSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);

Network load_network(const std::string& path);
void save_network(const Network& net, const std::string& path);

struct Component {
  std::string ref;
  std::string kind;  // "FDNR" or "R"
  double value;
  std::string unit;
  std::string node_a;
  std::string node_b;
};

// Flat component list; node names are "c<id>o" / "c<id>i" for the outer and
// inner node of a cell and "0" for ground.
std::vector<Component> components(const Network& net);
std::string components_csv(const Network& net);

}  // namespace r2nn::lattice
