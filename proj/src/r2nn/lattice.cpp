#include "r2nn/lattice.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "r2nn/error.hpp"

namespace r2nn::lattice {

namespace {

void require_positive(const std::vector<double>& values, std::size_t expected, const char* name) {
  if (values.size() != expected) {
    fail(ErrorCode::InvalidParameter, std::string(name) + ": expected " + std::to_string(expected) +
                                          " values, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
      fail(ErrorCode::InvalidParameter,
           std::string(name) + "[" + std::to_string(i) + "] must be positive and finite");
    }
  }
}

const std::vector<double> kE24 = {1.0, 1.1, 1.2, 1.3, 1.5, 1.6, 1.8, 2.0, 2.2, 2.4, 2.7, 3.0,
                                  3.3, 3.6, 3.9, 4.3, 4.7, 5.1, 5.6, 6.2, 6.8, 7.5, 8.2, 9.1};

const std::vector<double> kE96 = {
    1.00, 1.02, 1.05, 1.07, 1.10, 1.13, 1.15, 1.18, 1.21, 1.24, 1.27, 1.30, 1.33, 1.37, 1.40, 1.43,
    1.47, 1.50, 1.54, 1.58, 1.62, 1.65, 1.69, 1.74, 1.78, 1.82, 1.87, 1.91, 1.96, 2.00, 2.05, 2.10,
    2.15, 2.21, 2.26, 2.32, 2.37, 2.43, 2.49, 2.55, 2.61, 2.67, 2.74, 2.80, 2.87, 2.94, 3.01, 3.09,
    3.16, 3.24, 3.32, 3.40, 3.48, 3.57, 3.65, 3.74, 3.83, 3.92, 4.02, 4.12, 4.22, 4.32, 4.42, 4.53,
    4.64, 4.75, 4.87, 4.99, 5.11, 5.23, 5.36, 5.49, 5.62, 5.76, 5.90, 6.04, 6.19, 6.34, 6.49, 6.65,
    6.81, 6.98, 7.15, 7.32, 7.50, 7.68, 7.87, 8.06, 8.25, 8.45, 8.66, 8.87, 9.09, 9.31, 9.53, 9.76};

double snap_decimal(double mantissa, int exponent) {
  // Rebuild the value from its printed form so 1.24 * 10^6 is exactly 1240000.
  std::ostringstream os;
  os.precision(3);
  os << std::fixed << mantissa << "e" << exponent;
  return std::stod(os.str());
}

}  // namespace

LatticeSpec::LatticeSpec(std::size_t rows, std::size_t cols, std::set<CellId> grounded, CellId input,
                         std::vector<CellId> outputs)
    : rows_(rows), cols_(cols), grounded_(std::move(grounded)), input_(input), outputs_(std::move(outputs)) {
  if (rows_ == 0 || cols_ == 0) fail(ErrorCode::InvalidParameter, "lattice must have at least one cell");
  const std::size_t n = rows_ * cols_;
  for (CellId g : grounded_) {
    if (g >= n) fail(ErrorCode::InvalidParameter, "grounded cell " + std::to_string(g) + " is off the grid");
  }
  if (input_ >= n) fail(ErrorCode::InvalidParameter, "input cell is off the grid");
  if (is_grounded(input_)) fail(ErrorCode::InvalidParameter, "input cell is grounded");
  if (outputs_.empty()) fail(ErrorCode::InvalidParameter, "at least one output cell is required");
  std::set<CellId> seen{input_};
  for (CellId o : outputs_) {
    if (o >= n) fail(ErrorCode::InvalidParameter, "output cell " + std::to_string(o) + " is off the grid");
    if (is_grounded(o)) fail(ErrorCode::InvalidParameter, "output cell " + std::to_string(o) + " is grounded");
    if (!seen.insert(o).second) {
      fail(ErrorCode::InvalidParameter, "output cell " + std::to_string(o) + " repeats another site");
    }
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) {
      const CellId id = cell_at(r, c);
      if (c + 1 < cols_) edges_.push_back({id, id + 1});
      if (r + 1 < rows_) edges_.push_back({id, id + cols_});
    }
  }
}

LatticeSpec LatticeSpec::standard() {
  return LatticeSpec(5, 5, {0, 4, 20, 24}, 2, {21, 22, 23});
}

bool LatticeSpec::edge_active(std::size_t e) const {
  return !(is_grounded(edges_[e].a) && is_grounded(edges_[e].b));
}

std::vector<CellId> LatticeSpec::active_cells() const {
  std::vector<CellId> out;
  for (CellId c = 0; c < cell_count(); ++c) {
    if (!is_grounded(c)) out.push_back(c);
  }
  return out;
}

void MechanicalParams::validate(const LatticeSpec& spec) const {
  require_positive(M_outer, spec.cell_count(), "M_outer");
  require_positive(m_inner, spec.cell_count(), "m_inner");
  require_positive(k_n, spec.cell_count(), "k_n");
  require_positive(k_c, spec.edges().size(), "k_c");
}

MechanicalParams MechanicalParams::uniform(const LatticeSpec& spec, double M, double m, double kn, double kc) {
  const std::size_t n = spec.cell_count();
  return {std::vector<double>(n, M), std::vector<double>(n, m), std::vector<double>(n, kn),
          std::vector<double>(spec.edges().size(), kc)};
}

void CircuitParams::validate(const LatticeSpec& spec) const {
  require_positive(D_M, spec.cell_count(), "D_M");
  require_positive(D_m, spec.cell_count(), "D_m");
  require_positive(R_n, spec.cell_count(), "R_n");
  require_positive(R_c, spec.edges().size(), "R_c");
}

CircuitParams CircuitParams::uniform(const LatticeSpec& spec, double DM, double Dm, double Rn, double Rc) {
  const std::size_t n = spec.cell_count();
  return {std::vector<double>(n, DM), std::vector<double>(n, Dm), std::vector<double>(n, Rn),
          std::vector<double>(spec.edges().size(), Rc)};
}

ScalingFactor::ScalingFactor(double s) : s_(s) {
  if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorCode::InvalidParameter, "scaling factor must be positive");
}

CircuitParams mech_to_circuit(const MechanicalParams& mech, ScalingFactor s) {
  const double k = s.value();
  auto check = [](const std::vector<double>& v, const char* name) {
    require_positive(v, v.size(), name);
  };
  check(mech.M_outer, "M_outer");
  check(mech.m_inner, "m_inner");
  check(mech.k_n, "k_n");
  check(mech.k_c, "k_c");
  CircuitParams c;
  for (double M : mech.M_outer) c.D_M.push_back(k * M);
  for (double m : mech.m_inner) c.D_m.push_back(k * m);
  for (double kn : mech.k_n) c.R_n.push_back(1.0 / (k * kn));
  for (double kc : mech.k_c) c.R_c.push_back(1.0 / (k * kc));
  return c;
}

MechanicalParams circuit_to_mech(const CircuitParams& circ, ScalingFactor s) {
  const double k = s.value();
  auto check = [](const std::vector<double>& v, const char* name) {
    require_positive(v, v.size(), name);
  };
  check(circ.D_M, "D_M");
  check(circ.D_m, "D_m");
  check(circ.R_n, "R_n");
  check(circ.R_c, "R_c");
  MechanicalParams m;
  for (double D : circ.D_M) m.M_outer.push_back(D / k);
  for (double D : circ.D_m) m.m_inner.push_back(D / k);
  for (double R : circ.R_n) m.k_n.push_back(1.0 / (k * R));
  for (double R : circ.R_c) m.k_c.push_back(1.0 / (k * R));
  return m;
}

ScalingFactor choose_scaling(const LatticeSpec& spec, const MechanicalParams& mech, double r_target) {
  mech.validate(spec);
  if (!(r_target > 0.0) || !std::isfinite(r_target)) {
    fail(ErrorCode::InvalidParameter, "target resistance must be positive");
  }
  double log_sum = 0.0;
  std::size_t count = 0;
  for (CellId c : spec.active_cells()) {
    log_sum += std::log(mech.k_n[c]);
    ++count;
  }
  for (std::size_t e = 0; e < spec.edges().size(); ++e) {
    if (!spec.edge_active(e)) continue;
    log_sum += std::log(mech.k_c[e]);
    ++count;
  }
  const double log_k_mean = log_sum / static_cast<double>(count);
  return ScalingFactor(std::exp(-std::log(r_target) - log_k_mean));
}

std::optional<ESeries> parse_eseries(const std::string& name) {
  std::string lower;
  for (char ch : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (lower == "e24") return ESeries::E24;
  if (lower == "e96") return ESeries::E96;
  return std::nullopt;
}

const std::vector<double>& eseries_mantissas(ESeries series) {
  return series == ESeries::E24 ? kE24 : kE96;
}

double nearest_preferred(double value, ESeries series) {
  if (!(value > 0.0) || !std::isfinite(value)) fail(ErrorCode::InvalidParameter, "value must be positive");
  const auto& table = eseries_mantissas(series);
  const int exponent = static_cast<int>(std::floor(std::log10(value)));
  double best = value;
  double best_err = std::numeric_limits<double>::infinity();
  // Candidates from the decade below through the decade above cover any
  // rounding of log10 at decade boundaries.
  for (int e = exponent - 1; e <= exponent + 1; ++e) {
    for (double mant : table) {
      const double cand = snap_decimal(mant, e);
      const double err = std::abs(cand - value) / value;
      if (err < best_err) {
        best_err = err;
        best = cand;
      }
    }
  }
  return best;
}

QuantizeReport quantize_eseries(const LatticeSpec& spec, const CircuitParams& circ, ESeries series) {
  circ.validate(spec);
  QuantizeReport rep{circ, 0.0, {}};
  auto apply = [&](double& value, const std::string& ref) {
    const double q = nearest_preferred(value, series);
    const double err = std::abs(q - value) / value;
    rep.max_rel_error = std::max(rep.max_rel_error, err);
    if (q != value) rep.changed.push_back({ref, value, q});
    value = q;
  };
  for (CellId c : spec.active_cells()) apply(rep.params.R_n[c], "RN" + std::to_string(c));
  for (std::size_t e = 0; e < spec.edges().size(); ++e) {
    if (spec.edge_active(e)) apply(rep.params.R_c[e], "RC" + std::to_string(e));
  }
  return rep;
}

nlohmann::json to_json(const LatticeSpec& spec) {
  return {{"rows", spec.rows()},
          {"cols", spec.cols()},
          {"grounded", std::vector<CellId>(spec.grounded().begin(), spec.grounded().end())},
          {"input", spec.input_cell()},
          {"outputs", spec.output_cells()}};
}

LatticeSpec spec_from_json(const nlohmann::json& j) {
  try {
    auto grounded = j.at("grounded").get<std::vector<CellId>>();
    return LatticeSpec(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                       std::set<CellId>(grounded.begin(), grounded.end()), j.at("input").get<CellId>(),
                       j.at("outputs").get<std::vector<CellId>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("lattice spec: ") + e.what());
  }
}

nlohmann::json to_json(const Network& net) {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t c = 0; c < net.spec.cell_count(); ++c) {
    cells.push_back({{"D_M", net.circuit.D_M[c]}, {"D_m", net.circuit.D_m[c]}, {"R_n", net.circuit.R_n[c]}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (std::size_t e = 0; e < net.spec.edges().size(); ++e) {
    const auto& edge = net.spec.edges()[e];
    edges.push_back({{"a", edge.a}, {"b", edge.b}, {"R_c", net.circuit.R_c[e]}});
  }
  return {{"spec", to_json(net.spec)}, {"cells", cells}, {"edges", edges}, {"scaling", net.scaling}};
}

Network network_from_json(const nlohmann::json& j) {
  try {
    LatticeSpec spec = spec_from_json(j.at("spec"));
    CircuitParams circ;
    const auto& cells = j.at("cells");
    if (cells.size() != spec.cell_count()) {
      fail(ErrorCode::Parse, "network: expected " + std::to_string(spec.cell_count()) + " cells");
    }
    for (const auto& cell : cells) {
      circ.D_M.push_back(cell.at("D_M").get<double>());
      circ.D_m.push_back(cell.at("D_m").get<double>());
      circ.R_n.push_back(cell.at("R_n").get<double>());
    }
    const auto& edges = j.at("edges");
    if (edges.size() != spec.edges().size()) {
      fail(ErrorCode::Parse, "network: expected " + std::to_string(spec.edges().size()) + " edges");
    }
    circ.R_c.assign(spec.edges().size(), 0.0);
    std::vector<bool> filled(spec.edges().size(), false);
    for (const auto& edge : edges) {
      CellId a = edge.at("a").get<CellId>();
      CellId b = edge.at("b").get<CellId>();
      if (a > b) std::swap(a, b);
      const auto& list = spec.edges();
      auto it = std::find_if(list.begin(), list.end(), [&](const Edge& x) { return x.a == a && x.b == b; });
      if (it == list.end()) {
        fail(ErrorCode::Parse, "network: cells " + std::to_string(a) + " and " + std::to_string(b) +
                                   " are not adjacent");
      }
      const auto idx = static_cast<std::size_t>(it - list.begin());
      if (filled[idx]) fail(ErrorCode::Parse, "network: edge listed twice");
      filled[idx] = true;
      circ.R_c[idx] = edge.at("R_c").get<double>();
    }
    circ.validate(spec);
    const double s = j.value("scaling", 1.0);
    return Network{std::move(spec), std::move(circ), s};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("network: ") + e.what());
  }
}

Network load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, path + ": " + e.what());
  }
  return network_from_json(j);
}

void save_network(const Network& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out << to_json(net).dump(2) << "\n";
}

std::vector<Component> components(const Network& net) {
  const auto& spec = net.spec;
  const auto& p = net.circuit;
  auto outer = [&](CellId c) { return spec.is_grounded(c) ? std::string("0") : "c" + std::to_string(c) + "o"; };
  std::vector<Component> out;
  for (CellId c : spec.active_cells()) {
    const std::string id = std::to_string(c);
    out.push_back({"DM" + id, "FDNR", p.D_M[c], "ohm_f2", outer(c), "0"});
    out.push_back({"DI" + id, "FDNR", p.D_m[c], "ohm_f2", "c" + id + "i", "0"});
    out.push_back({"RN" + id, "R", p.R_n[c], "ohm", outer(c), "c" + id + "i"});
  }
  for (std::size_t e = 0; e < spec.edges().size(); ++e) {
    if (!spec.edge_active(e)) continue;
    const auto& edge = spec.edges()[e];
    out.push_back({"RC" + std::to_string(e), "R", p.R_c[e], "ohm", outer(edge.a), outer(edge.b)});
  }
  return out;
}

std::string components_csv(const Network& net) {
  std::ostringstream os;
  os.precision(17);
  os << "ref,kind,value,unit,node_a,node_b\n";
  for (const auto& c : components(net)) {
    os << c.ref << ',' << c.kind << ',' << c.value << ',' << c.unit << ',' << c.node_a << ',' << c.node_b << '\n';
  }
  return os.str();
}

}  // namespace r2nn::lattice
