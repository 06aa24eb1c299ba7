#include "r2nn/r2nn.h"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <new>
#include <numbers>
#include <string>

#include "r2nn/acsolver.hpp"
#include "r2nn/error.hpp"
#include "r2nn/lattice.hpp"
#include "r2nn/signals.hpp"
#include "r2nn/simulator.hpp"
#include "r2nn/trainer.hpp"
#include "r2nn/unitcell.hpp"

using nlohmann::json;
using namespace r2nn;

struct r2nn_network {
  lattice::Network net;
};
struct r2nn_signal {
  Signal sig;
};
struct r2nn_dataset {
  signals::Dataset ds;
};
struct r2nn_trajectory {
  sim::Trajectory traj;
};

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

thread_local std::string g_last_error;
std::atomic<unsigned> g_threads{1};

r2nn_status set_error(r2nn_status st, const std::string& msg) {
  g_last_error = msg;
  return st;
}

template <class F>
r2nn_status guard(F&& f) {
  g_last_error.clear();
  try {
    f();
    return R2NN_OK;
  } catch (const Error& e) {
    return set_error(static_cast<r2nn_status>(e.code()), e.what());
  } catch (const json::exception& e) {
    return set_error(R2NN_PARSE, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(R2NN_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(R2NN_INTERNAL, e.what());
  }
}

void need(const void* p, const char* name) {
  if (p == nullptr) fail(ErrorCode::InvalidArgument, std::string(name) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

double* dup_array(const std::vector<double>& v) {
  auto* out = static_cast<double*>(std::malloc(std::max<std::size_t>(v.size(), 1) * sizeof(double)));
  if (out == nullptr) throw std::bad_alloc();
  std::copy(v.begin(), v.end(), out);
  return out;
}

json parse_json(const char* text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, std::string(what) + ": " + e.what());
  }
}

lattice::LatticeSpec lattice_of(const char* lattice_json) {
  if (lattice_json == nullptr) return lattice::LatticeSpec::standard();
  return lattice::spec_from_json(parse_json(lattice_json, "lattice"));
}

lattice::ESeries series_of(const char* name) {
  need(name, "series");
  auto s = lattice::parse_eseries(name);
  if (!s) fail(ErrorCode::InvalidArgument, std::string("unknown E-series '") + name + "'");
  return *s;
}

const char* flag_name(ac::ImpedanceFlag f) {
  switch (f) {
    case ac::ImpedanceFlag::Zero: return "zero";
    case ac::ImpedanceFlag::Pole: return "pole";
    default: return "ok";
  }
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

extern "C" {

const char* r2nn_last_error(void) { return g_last_error.c_str(); }

const char* r2nn_status_name(r2nn_status status) {
  switch (status) {
    case R2NN_OK: return "ok";
    case R2NN_INVALID_ARGUMENT: return "invalid argument";
    case R2NN_INVALID_PARAMETER: return "invalid parameter";
    case R2NN_TOPOLOGY: return "topology";
    case R2NN_POLE: return "pole";
    case R2NN_NEAR_RESONANCE: return "near resonance";
    case R2NN_UNSTABLE: return "unstable";
    case R2NN_NUMERIC: return "numeric";
    case R2NN_IO: return "io";
    case R2NN_PARSE: return "parse";
    case R2NN_UNDECIDABLE: return "undecidable";
    case R2NN_NYQUIST: return "nyquist";
    case R2NN_RATE_MISMATCH: return "rate mismatch";
    case R2NN_NON_UNIFORM: return "non-uniform";
    case R2NN_DIVERGED: return "diverged";
    case R2NN_EXISTS: return "exists";
    case R2NN_INTERNAL: return "internal";
  }
  return "unknown";
}

void r2nn_string_free(char* s) { std::free(s); }
void r2nn_array_free(double* a) { std::free(a); }

const char* r2nn_version(void) { return "1.0.0"; }

r2nn_status r2nn_set_threads(unsigned threads) {
  if (threads == 0) return set_error(R2NN_INVALID_ARGUMENT, "thread count must be at least 1");
  g_threads = threads;
  return R2NN_OK;
}

r2nn_status r2nn_cell_resonances(double D_M, double D_m, double R_n, double* f0_hz, double* f1_hz) {
  return guard([&] {
    need(f0_hz, "f0_hz");
    need(f1_hz, "f1_hz");
    const auto r = unitcell::resonance_freqs({D_M, D_m, R_n});
    *f0_hz = r.omega0 / kTwoPi;
    *f1_hz = r.omega1 / kTwoPi;
  });
}

r2nn_status r2nn_cell_response(double D_M, double D_m, double R_n, double freq_hz, double* d_eff, double* z_eff,
                               double* beta, double* h) {
  return guard([&] {
    const unitcell::UnitCellParams p{D_M, D_m, R_n};
    const double w = kTwoPi * freq_hz;
    if (d_eff) *d_eff = unitcell::d_eff(p, w);
    if (z_eff) *z_eff = unitcell::z_eff(p, w);
    if (beta) *beta = unitcell::beta(p, w);
    if (h) *h = unitcell::transfer_h(p, w);
  });
}

r2nn_status r2nn_network_standard(double D_M, double D_m, double R_n, double R_c, r2nn_network** out) {
  return guard([&] {
    need(out, "out");
    auto spec = lattice::LatticeSpec::standard();
    auto circ = lattice::CircuitParams::uniform(spec, D_M, D_m, R_n, R_c);
    circ.validate(spec);
    *out = new r2nn_network{{spec, circ, 1.0}};
  });
}

r2nn_status r2nn_network_load(const char* path, r2nn_network** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new r2nn_network{lattice::load_network(path)};
  });
}

r2nn_status r2nn_network_from_json(const char* text, r2nn_network** out) {
  return guard([&] {
    need(text, "json");
    need(out, "out");
    *out = new r2nn_network{lattice::network_from_json(parse_json(text, "network"))};
  });
}

r2nn_status r2nn_network_save(const r2nn_network* net, const char* path) {
  return guard([&] {
    need(net, "network");
    need(path, "path");
    lattice::save_network(net->net, path);
  });
}

r2nn_status r2nn_network_to_json(const r2nn_network* net, char** out) {
  return guard([&] {
    need(net, "network");
    need(out, "out");
    *out = dup_string(lattice::to_json(net->net).dump(2));
  });
}

void r2nn_network_free(r2nn_network* net) { delete net; }

r2nn_status r2nn_network_info(const r2nn_network* net, size_t* rows, size_t* cols, size_t* outputs, size_t* dofs) {
  return guard([&] {
    need(net, "network");
    const auto& s = net->net.spec;
    if (rows) *rows = s.rows();
    if (cols) *cols = s.cols();
    if (outputs) *outputs = s.output_cells().size();
    if (dofs) *dofs = 2 * s.active_cells().size();
  });
}

r2nn_status r2nn_network_max_stable_dt(const r2nn_network* net, double* dt) {
  return guard([&] {
    need(net, "network");
    need(dt, "dt");
    *dt = sim::max_stable_dt(sim::assemble(net->net));
  });
}

r2nn_status r2nn_network_eigenfrequencies(const r2nn_network* net, double* out_hz, size_t cap, size_t* count) {
  return guard([&] {
    need(net, "network");
    const auto w = sim::eigen_omegas(sim::assemble(net->net));
    if (count) *count = w.size();
    if (out_hz != nullptr) {
      for (std::size_t i = 0; i < w.size() && i < cap; ++i) out_hz[i] = w[i] / kTwoPi;
    }
  });
}

r2nn_status r2nn_network_rescale(const r2nn_network* net, double s, r2nn_network** out) {
  return guard([&] {
    need(net, "network");
    need(out, "out");
    const auto mech = lattice::circuit_to_mech(net->net.circuit, lattice::ScalingFactor(net->net.scaling));
    const lattice::ScalingFactor target(s);
    *out = new r2nn_network{{net->net.spec, lattice::mech_to_circuit(mech, target), s}};
  });
}

r2nn_status r2nn_network_quantize(const r2nn_network* net, const char* series, r2nn_network** out, char** report) {
  return guard([&] {
    need(net, "network");
    const auto ser = series_of(series);
    const auto rep = lattice::quantize_eseries(net->net.spec, net->net.circuit, ser);
    json changed = json::array();
    for (const auto& c : rep.changed) changed.push_back({{"ref", c.ref}, {"before", c.before}, {"after", c.after}});
    const json j = {{"series", series}, {"max_rel_error", rep.max_rel_error}, {"changed", changed}};
    if (out) *out = new r2nn_network{{net->net.spec, rep.params, net->net.scaling}};
    if (report) *report = dup_string(j.dump(2));
  });
}

r2nn_status r2nn_network_components_csv(const r2nn_network* net, char** out) {
  return guard([&] {
    need(net, "network");
    need(out, "out");
    *out = dup_string(lattice::components_csv(net->net));
  });
}

r2nn_status r2nn_signal_create(double rate_hz, const double* samples, size_t n, r2nn_signal** out) {
  return guard([&] {
    need(out, "out");
    if (n > 0) need(samples, "samples");
    Signal s;
    s.rate = rate_hz;
    s.samples.assign(samples, samples + n);
    s.validate();
    *out = new r2nn_signal{std::move(s)};
  });
}

r2nn_status r2nn_signal_load_csv(const char* path, double rate_hz, r2nn_signal** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    std::optional<double> rate;
    if (rate_hz > 0.0) rate = rate_hz;
    *out = new r2nn_signal{signals::load_csv(path, rate)};
  });
}

r2nn_status r2nn_signal_save_csv(const r2nn_signal* sig, const char* path) {
  return guard([&] {
    need(sig, "signal");
    need(path, "path");
    signals::save_csv(sig->sig, path);
  });
}

r2nn_status r2nn_signal_pulse(double center_hz, double sigma_s, double amplitude, double duration_s, double rate_hz,
                              double t_center, double phase, r2nn_signal** out) {
  return guard([&] {
    need(out, "out");
    *out = new r2nn_signal{signals::gen_pulse(center_hz, sigma_s, amplitude, duration_s, rate_hz, t_center, phase)};
  });
}

r2nn_status r2nn_signal_sweep(double f_start, double f_end, double duration_s, double rate_hz, r2nn_signal** out) {
  return guard([&] {
    need(out, "out");
    *out = new r2nn_signal{signals::gen_sweep(f_start, f_end, duration_s, rate_hz)};
  });
}

r2nn_status r2nn_signal_add_noise(const r2nn_signal* sig, double snr_db, uint64_t seed, r2nn_signal** out) {
  return guard([&] {
    need(sig, "signal");
    need(out, "out");
    *out = new r2nn_signal{signals::add_noise(sig->sig, snr_db, seed)};
  });
}

r2nn_status r2nn_signal_info(const r2nn_signal* sig, double* rate_hz, size_t* n) {
  return guard([&] {
    need(sig, "signal");
    if (rate_hz) *rate_hz = sig->sig.rate;
    if (n) *n = sig->sig.size();
  });
}

r2nn_status r2nn_signal_samples(const r2nn_signal* sig, const double** samples) {
  return guard([&] {
    need(sig, "signal");
    need(samples, "samples");
    *samples = sig->sig.samples.data();
  });
}

void r2nn_signal_free(r2nn_signal* sig) { delete sig; }

r2nn_status r2nn_simulate(const r2nn_network* net, const r2nn_signal* sig, double g_m, double damping,
                          r2nn_trajectory** out) {
  return guard([&] {
    need(net, "network");
    need(sig, "signal");
    need(out, "out");
    if (!(g_m > 0.0) || !std::isfinite(g_m)) fail(ErrorCode::InvalidParameter, "g_m must be positive");
    if (!(damping >= 0.0)) fail(ErrorCode::InvalidParameter, "damping must be non-negative");
    sig->sig.validate();
    Signal drive = sig->sig;
    for (double& x : drive.samples) x *= g_m;
    drive.unit = SignalUnit::Ampere;
    const auto sys = sim::assemble(net->net, damping);
    sim::SimConfig cfg;
    cfg.dt = 1.0 / drive.rate;
    *out = new r2nn_trajectory{sim::run(sys, drive, cfg)};
  });
}

r2nn_status r2nn_trajectory_shape(const r2nn_trajectory* traj, size_t* steps, size_t* channels, double* dt) {
  return guard([&] {
    need(traj, "trajectory");
    if (steps) *steps = traj->traj.steps;
    if (channels) *channels = traj->traj.dofs.size();
    if (dt) *dt = traj->traj.dt;
  });
}

r2nn_status r2nn_trajectory_data(const r2nn_trajectory* traj, const double** data) {
  return guard([&] {
    need(traj, "trajectory");
    need(data, "data");
    *data = traj->traj.data.data();
  });
}

r2nn_status r2nn_trajectory_energies(const r2nn_trajectory* traj, double* out) {
  return guard([&] {
    need(traj, "trajectory");
    need(out, "out");
    const auto e = sim::integrate_energy(traj->traj, traj->traj.dofs);
    std::copy(e.begin(), e.end(), out);
  });
}

r2nn_status r2nn_trajectory_comparator(const r2nn_trajectory* traj, double tau_s, double hysteresis,
                                       double threshold_v, uint8_t* out) {
  return guard([&] {
    need(traj, "trajectory");
    need(out, "out");
    const auto logic = sim::comparator(traj->traj, {tau_s, hysteresis, threshold_v});
    std::size_t k = 0;
    for (const auto& ch : logic) {
      for (auto b : ch) out[k++] = b;
    }
  });
}

void r2nn_trajectory_free(r2nn_trajectory* traj) { delete traj; }

r2nn_status r2nn_classify(const double* energies, size_t n, double* probabilities, size_t* label) {
  return guard([&] {
    need(energies, "energies");
    const auto c = sim::classify(std::span<const double>(energies, n));
    if (probabilities) std::copy(c.probabilities.begin(), c.probabilities.end(), probabilities);
    if (label) *label = c.label;
  });
}

r2nn_status r2nn_transmission(const r2nn_network* net, const double* freq_hz, size_t n, double guard_hz,
                              double* mag, uint8_t* flags) {
  return guard([&] {
    need(net, "network");
    need(mag, "mag");
    if (n > 0) need(freq_hz, "freq_hz");
    if (!(guard_hz >= 0.0)) fail(ErrorCode::InvalidParameter, "guard band must be non-negative");
    ac::AcOptions opt;
    opt.guard_hz = guard_hz;
    const ac::AcSolver solver(sim::assemble(net->net), opt);
    const auto res = ac::transmission(solver, std::vector<double>(freq_hz, freq_hz + n));
    for (std::size_t o = 0; o < res.magnitude.size(); ++o) {
      std::copy(res.magnitude[o].begin(), res.magnitude[o].end(), mag + o * n);
    }
    if (flags) {
      for (std::size_t k = 0; k < n; ++k) flags[k] = static_cast<uint8_t>(res.flags[k]);
    }
  });
}

r2nn_status r2nn_measure_transfer(const r2nn_network* net, const char* preset, double f_start, double f_end,
                                  double duration_s, double rate_hz, double g_m, double** freq_hz, double** mag,
                                  size_t* n, int* slow_enough) {
  return guard([&] {
    need(net, "network");
    need(freq_hz, "freq_hz");
    need(mag, "mag");
    need(n, "n");
    signals::SweepConfig cfg;
    if (preset != nullptr) {
      cfg = signals::sweep_preset(preset);
    } else {
      cfg.f_start = f_start;
      cfg.f_end = f_end;
    }
    if (duration_s > 0.0) cfg.duration_s = duration_s;
    if (rate_hz > 0.0) cfg.rate_hz = rate_hz;
    const auto m = signals::measure_transfer(sim::assemble(net->net), cfg, g_m);
    std::vector<double> flat;
    for (const auto& row : m.h) flat.insert(flat.end(), row.begin(), row.end());
    *freq_hz = dup_array(m.freq_hz);
    *mag = dup_array(flat);
    *n = m.freq_hz.size();
    if (slow_enough != nullptr) *slow_enough = m.slow_enough ? 1 : 0;
  });
}

r2nn_status r2nn_impedance_map(const r2nn_network* net, double freq_hz, char** out) {
  return guard([&] {
    need(net, "network");
    need(out, "out");
    const auto& spec = net->net.spec;
    json cells = json::array();
    for (const auto& c : ac::impedance_map(spec, net->net.circuit, kTwoPi * freq_hz)) {
      cells.push_back({{"cell", c.cell},
                       {"row", spec.row_of(c.cell)},
                       {"col", spec.col_of(c.cell)},
                       {"z_eff", nullable(c.z_eff)},
                       {"flag", flag_name(c.flag)}});
    }
    *out = dup_string(cells.dump(2));
  });
}

r2nn_status r2nn_branch_currents(const r2nn_network* net, double freq_hz, char** out) {
  return guard([&] {
    need(net, "network");
    need(out, "out");
    const auto sys = sim::assemble(net->net);
    const ac::AcSolver solver(sys);
    const auto sol = solver.solve(kTwoPi * freq_hz, ac::Complex(1.0));
    const auto map = ac::branch_currents(sys, sol);
    const auto& edges = net->net.spec.edges();
    json couplings = json::array();
    for (const auto& bc : map.couplings) {
      const auto& e = edges[bc.branch.index];
      couplings.push_back({{"edge", bc.branch.index},
                           {"a", e.a},
                           {"b", e.b},
                           {"current", bc.current.real()},
                           {"current_imag", bc.current.imag()},
                           {"magnitude", std::abs(bc.current)}});
    }
    json cells = json::array();
    for (const auto& c : map.cells) {
      cells.push_back({{"cell", c.cell},
                       {"total", c.total.real()},
                       {"magnitude", std::abs(c.total)},
                       {"outer_fdnr", c.outer_fdnr.real()},
                       {"internal", c.internal.real()},
                       {"inner_fdnr", c.inner_fdnr.real()}});
    }
    json outputs = json::array();
    for (auto cell : net->net.spec.output_cells()) outputs.push_back(cell);
    const json j = {{"freq_hz", freq_hz},
                    {"outputs", outputs},
                    {"couplings", couplings},
                    {"cells", cells},
                    {"max_kcl_error", map.max_kcl_error}};
    *out = dup_string(j.dump(2));
  });
}

r2nn_status r2nn_dataset_generate(const char* spec_json, uint64_t seed, r2nn_dataset** out) {
  return guard([&] {
    need(out, "out");
    signals::DatasetSpec spec =
        spec_json ? signals::dataset_spec_from_json(parse_json(spec_json, "dataset spec")) : signals::DatasetSpec::standard(seed);
    spec.seed = seed;
    *out = new r2nn_dataset{signals::gen_dataset(spec)};
  });
}

r2nn_status r2nn_dataset_save(const r2nn_dataset* ds, const char* dir, int force) {
  return guard([&] {
    need(ds, "dataset");
    need(dir, "dir");
    signals::save_dataset(ds->ds, dir, force != 0);
  });
}

r2nn_status r2nn_dataset_load(const char* manifest_or_dir, r2nn_dataset** out) {
  return guard([&] {
    need(manifest_or_dir, "path");
    need(out, "out");
    *out = new r2nn_dataset{signals::load_dataset(manifest_or_dir)};
  });
}

r2nn_status r2nn_dataset_info(const r2nn_dataset* ds, size_t* train, size_t* test, size_t* classes, double* rate_hz) {
  return guard([&] {
    need(ds, "dataset");
    if (train) *train = ds->ds.split(signals::Split::Train).size();
    if (test) *test = ds->ds.split(signals::Split::Test).size();
    if (classes) *classes = ds->ds.class_count();
    if (rate_hz) *rate_hz = ds->ds.rate_hz;
  });
}

void r2nn_dataset_free(r2nn_dataset* ds) { delete ds; }

r2nn_status r2nn_train(const r2nn_dataset* ds, const char* lattice_json, const char* config_json,
                       const char* resume_json, r2nn_epoch_callback callback, void* user, char** checkpoint) {
  return guard([&] {
    need(ds, "dataset");
    need(checkpoint, "checkpoint");
    const auto spec = lattice_of(lattice_json);
    train::TrainConfig cfg =
        config_json ? train::train_config_from_json(parse_json(config_json, "training config")) : train::TrainConfig{};
    cfg.threads = g_threads;
    std::optional<train::Checkpoint> resume;
    if (resume_json) resume = train::checkpoint_from_json(parse_json(resume_json, "checkpoint"));
    train::EpochCallback cb;
    if (callback) {
      cb = [&](const train::EpochRecord& r, const train::Checkpoint& ck) {
        const std::string text = train::to_json(ck).dump();
        callback(r.epoch, r.loss, r.train_acc, r.val_acc, text.c_str(), user);
      };
    }
    const auto res = train::train(spec, ds->ds, cfg, cb, resume);
    *checkpoint = dup_string(train::to_json(res.last).dump());
  });
}

r2nn_status r2nn_export_checkpoint(const char* checkpoint_json, const char* lattice_json, double r_target,
                                   const char* series, const r2nn_dataset* ds, r2nn_network** circuit,
                                   r2nn_network** quantized, char** report) {
  return guard([&] {
    need(checkpoint_json, "checkpoint");
    const auto spec = lattice_of(lattice_json);
    const auto ck = train::checkpoint_from_json(parse_json(checkpoint_json, "checkpoint"));
    const auto mech = ck.params.realize(ck.base);
    const auto ser = series_of(series);
    std::vector<train::Sample> held_out;
    double dt = 0.0;
    if (ds != nullptr) {
      held_out = train::samples_of(ds->ds, signals::Split::Test);
      dt = 1.0 / ds->ds.rate_hz;
    }
    const auto ex = train::export_trained(spec, mech, r_target, ser, held_out, dt, g_threads);
    json changed = json::array();
    for (const auto& c : ex.report.changed) changed.push_back({{"ref", c.ref}, {"before", c.before}, {"after", c.after}});
    json j = {{"series", series},
              {"scaling", ex.circuit.scaling},
              {"r_target_ohm", r_target},
              {"max_rel_error", ex.report.max_rel_error},
              {"changed", changed}};
    if (ds != nullptr) {
      j["test_samples"] = held_out.size();
      j["accuracy"] = ex.accuracy;
      j["quantized_accuracy"] = ex.quantized_accuracy;
    }
    if (circuit) *circuit = new r2nn_network{ex.circuit};
    if (quantized) *quantized = new r2nn_network{ex.quantized};
    if (report) *report = dup_string(j.dump(2));
  });
}

}  // extern "C"
