// r2nn command-line tool. Talks to the library only through the C API.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "r2nn/r2nn.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Failure {
  int code;
  std::string message;
};

int exit_code_for(r2nn_status st) {
  switch (st) {
    case R2NN_INVALID_ARGUMENT:
      return kExitUsage;
    case R2NN_INVALID_PARAMETER:
    case R2NN_TOPOLOGY:
    case R2NN_IO:
    case R2NN_PARSE:
    case R2NN_NYQUIST:
    case R2NN_RATE_MISMATCH:
    case R2NN_NON_UNIFORM:
    case R2NN_EXISTS:
      return kExitConfig;
    default:
      return kExitNumeric;
  }
}

void check(r2nn_status st, const std::string& context = {}) {
  if (st == R2NN_OK) return;
  std::string msg = r2nn_last_error();
  if (!context.empty()) msg = context + ": " + msg;
  throw Failure{exit_code_for(st), msg};
}

[[noreturn]] void usage(const std::string& msg) { throw Failure{kExitUsage, msg}; }
[[noreturn]] void config(const std::string& msg) { throw Failure{kExitConfig, msg}; }

struct Global {
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  unsigned threads = 1;
  bool force = false;
  int verbose = 0;
};

Global g;

void log(int level, const std::string& msg) {
  if (g.verbose >= level) std::cerr << msg << '\n';
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Network = std::unique_ptr<r2nn_network, Deleter<r2nn_network, r2nn_network_free>>;
using SignalH = std::unique_ptr<r2nn_signal, Deleter<r2nn_signal, r2nn_signal_free>>;
using Dataset = std::unique_ptr<r2nn_dataset, Deleter<r2nn_dataset, r2nn_dataset_free>>;
using Traj = std::unique_ptr<r2nn_trajectory, Deleter<r2nn_trajectory, r2nn_trajectory_free>>;

std::string take(char* s) {
  std::string out = s ? s : "";
  r2nn_string_free(s);
  return out;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) config("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    config(path + ": " + e.what());
  }
}

fs::path out_path(const std::string& name) { return fs::path(g.out) / name; }

// Refuses to replace an existing file without --force.
fs::path writable(const std::string& name) {
  const fs::path p = out_path(name);
  if (fs::exists(p) && !g.force) config(p.string() + " already exists (use --force to overwrite)");
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) config("cannot create " + p.parent_path().string() + ": " + ec.message());
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) config("cannot write " + p.string());
  out << text;
  if (!out) config("cannot write " + p.string());
  log(1, "wrote " + p.string());
}

Network load_network(const std::string& path) {
  r2nn_network* n = nullptr;
  check(r2nn_network_load(path.c_str(), &n), path);
  return Network(n);
}

std::size_t output_count(const r2nn_network* net) {
  std::size_t outputs = 0;
  check(r2nn_network_info(net, nullptr, nullptr, &outputs, nullptr));
  return outputs;
}

std::string channel_header(const std::string& first, const std::string& prefix, std::size_t n) {
  std::string h = first;
  for (std::size_t i = 1; i <= n; ++i) h += "," + prefix + std::to_string(i);
  return h;
}

std::uint64_t require_seed(const char* cmd) {
  if (!g.seed) usage(std::string(cmd) + " needs --seed");
  return *g.seed;
}

// ---- gen-dataset ------------------------------------------------------------

struct GenDatasetArgs {
  std::string spec;
};

void cmd_gen_dataset(const GenDatasetArgs& a) {
  const auto seed = require_seed("gen-dataset");
  std::string spec_text;
  if (!a.spec.empty()) spec_text = read_file(a.spec);
  r2nn_dataset* raw = nullptr;
  check(r2nn_dataset_generate(a.spec.empty() ? nullptr : spec_text.c_str(), seed, &raw), "dataset spec");
  Dataset ds(raw);
  std::error_code ec;
  fs::create_directories(g.out, ec);
  check(r2nn_dataset_save(ds.get(), g.out.c_str(), g.force ? 1 : 0));
  std::size_t train = 0, test = 0, classes = 0;
  double rate = 0.0;
  check(r2nn_dataset_info(ds.get(), &train, &test, &classes, &rate));
  std::cout << "classes " << classes << ", train " << train << ", test " << test << ", files " << train + test
            << ", rate " << num(rate) << " Hz -> " << (fs::path(g.out) / "manifest.json").string() << '\n';
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string config;
  std::string lattice;
  std::string resume;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  double r_target = 1e6;
  std::string series = "E96";
};

struct TrainContext {
  std::vector<std::string> rows;
  std::string error;
};

void on_epoch(size_t epoch, double loss, double train_acc, double val_acc, const char* checkpoint, void* user) {
  auto* ctx = static_cast<TrainContext*>(user);
  if (!ctx->error.empty()) return;
  try {
    char name[64];
    std::snprintf(name, sizeof name, "checkpoints/epoch_%04zu.json", epoch);
    write_text(writable(name), json::parse(checkpoint).dump(2));
    // The checkpoint carries the full history, so the CSV is rebuilt from it.
    const json ck = json::parse(checkpoint);
    std::string csv = "epoch,loss,train_acc,val_acc\n";
    for (const auto& h : ck.at("history")) {
      csv += std::to_string(h.at("epoch").get<std::size_t>()) + "," + num(h.at("loss").get<double>()) + "," +
             num(h.at("train_acc").get<double>()) + "," + num(h.at("val_acc").get<double>()) + "\n";
    }
    const fs::path metrics = out_path("metrics.csv");
    write_text(metrics, csv);
    std::cerr << "epoch " << epoch << "  loss " << num(loss) << "  train_acc " << num(train_acc) << "  val_acc "
              << num(val_acc) << '\n';
  } catch (const Failure& f) {
    ctx->error = f.message;
  } catch (const std::exception& e) {
    ctx->error = e.what();
  }
}

void cmd_train(const TrainArgs& a) {
  json cfg = a.config.empty() ? json::object() : read_json(a.config);
  std::string data = a.data;
  if (data.empty() && cfg.contains("dataset")) data = cfg.at("dataset").get<std::string>();
  if (data.empty()) usage("train needs --data (or \"dataset\" in the config)");
  std::optional<std::string> lattice_text;
  if (!a.lattice.empty()) {
    lattice_text = read_file(a.lattice);
  } else if (cfg.contains("lattice")) {
    lattice_text = cfg.at("lattice").dump();
  }
  cfg.erase("dataset");
  cfg.erase("lattice");
  if (a.resume.empty()) {
    cfg["seed"] = require_seed("train");
  } else if (g.seed) {
    cfg["seed"] = *g.seed;
  }
  if (a.epochs) cfg["epochs"] = *a.epochs;
  if (a.lr) cfg["lr"] = *a.lr;

  if (a.resume.empty() && fs::exists(out_path("metrics.csv")) && !g.force) {
    config(out_path("metrics.csv").string() + " already exists (use --force to overwrite)");
  }
  std::optional<std::string> resume_text;
  if (!a.resume.empty()) resume_text = read_file(a.resume);

  r2nn_dataset* raw = nullptr;
  check(r2nn_dataset_load(data.c_str(), &raw), data);
  Dataset ds(raw);
  std::error_code ec;
  fs::create_directories(out_path("checkpoints"), ec);

  TrainContext ctx;
  const std::string cfg_text = cfg.dump();
  // Resuming rewrites files this run owns.
  const bool saved_force = g.force;
  if (resume_text) g.force = true;
  char* final_ck = nullptr;
  const r2nn_status st =
      r2nn_train(ds.get(), lattice_text ? lattice_text->c_str() : nullptr, cfg_text.c_str(),
                 resume_text ? resume_text->c_str() : nullptr, on_epoch, &ctx, &final_ck);
  g.force = saved_force || resume_text.has_value();
  if (st != R2NN_OK) {
    throw Failure{exit_code_for(st), std::string(r2nn_last_error()) + " (last good checkpoint in " +
                                         out_path("checkpoints").string() + ")"};
  }
  if (!ctx.error.empty()) config(ctx.error);
  const std::string ck_text = take(final_ck);

  r2nn_network* circ_raw = nullptr;
  r2nn_network* quant_raw = nullptr;
  char* report_raw = nullptr;
  check(r2nn_export_checkpoint(ck_text.c_str(), lattice_text ? lattice_text->c_str() : nullptr, a.r_target,
                               a.series.c_str(), ds.get(), &circ_raw, &quant_raw, &report_raw),
        "export");
  Network circ(circ_raw), quant(quant_raw);
  const json report = json::parse(take(report_raw));
  const json circ_json = json::parse(take([&] {
    char* s = nullptr;
    check(r2nn_network_to_json(circ.get(), &s));
    return s;
  }()));
  const json quant_json = json::parse(take([&] {
    char* s = nullptr;
    check(r2nn_network_to_json(quant.get(), &s));
    return s;
  }()));

  json final_json = json::parse(ck_text);
  final_json["export"] = {{"circuit", circ_json}, {"quantized", quant_json}, {"report", report}};
  write_text(writable("checkpoint_final.json"), final_json.dump(2));
  write_text(writable("system.json"), circ_json.dump(2));
  std::string lower = a.series;
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  write_text(writable("system_" + lower + ".json"), quant_json.dump(2));
  write_text(writable("quantization.json"), report.dump(2));
  std::cout << "held-out accuracy " << num(report.value("accuracy", 0.0)) << ", " << a.series << " "
            << num(report.value("quantized_accuracy", 0.0)) << " (" << report.value("test_samples", 0)
            << " samples)\n";
}

// ---- classify ---------------------------------------------------------------

struct ClassifyArgs {
  std::string system;
  std::vector<std::string> files;
  std::string manifest;
  std::string split = "test";
  double rate = 0.0;
  double gm = 1e-6;
};

void cmd_classify(const ClassifyArgs& a) {
  struct Item {
    std::string file;
    std::optional<std::size_t> label;
    double rate = 0.0;
  };
  std::vector<Item> items;
  for (const auto& f : a.files) items.push_back({f, std::nullopt, a.rate});
  std::vector<std::string> class_names;
  if (!a.manifest.empty()) {
    const json m = read_json(a.manifest);
    const fs::path base = fs::path(a.manifest).parent_path();
    const double rate = m.at("rate").get<double>();
    for (const auto& c : m.at("classes")) class_names.push_back(num(c.at("center_hz").get<double>()) + " Hz");
    for (const auto& s : m.at("samples")) {
      const std::string split = s.at("split").get<std::string>();
      if (a.split != "all" && split != a.split) continue;
      items.push_back({(base / s.at("path").get<std::string>()).string(), s.at("label").get<std::size_t>(), rate});
    }
  }
  if (items.empty()) usage("classify needs at least one signal file");
  const bool labeled = std::all_of(items.begin(), items.end(), [](const Item& i) { return i.label.has_value(); });

  const auto net = load_network(a.system);
  const std::size_t outputs = output_count(net.get());
  json verdicts = json::array();
  std::vector<std::vector<std::size_t>> confusion(outputs, std::vector<std::size_t>(outputs, 0));
  std::size_t correct = 0;
  for (const auto& it : items) {
    r2nn_signal* sraw = nullptr;
    check(r2nn_signal_load_csv(it.file.c_str(), it.rate, &sraw), it.file);
    SignalH sig(sraw);
    r2nn_trajectory* traw = nullptr;
    check(r2nn_simulate(net.get(), sig.get(), a.gm, 0.0, &traw), it.file);
    Traj traj(traw);
    std::vector<double> e(outputs), p(outputs);
    std::size_t label = 0;
    check(r2nn_trajectory_energies(traj.get(), e.data()), it.file);
    check(r2nn_classify(e.data(), outputs, p.data(), &label), it.file);
    json v = {{"file", it.file}, {"energies", e}, {"probs", p}, {"class", label}};
    if (it.label) {
      v["label"] = *it.label;
      if (*it.label < outputs) ++confusion[*it.label][label];
      if (*it.label == label) ++correct;
    }
    verdicts.push_back(v);
    log(1, it.file + " -> " + std::to_string(label));
  }
  json out = {{"system", a.system}, {"verdicts", verdicts}};
  if (labeled) {
    const double acc = static_cast<double>(correct) / static_cast<double>(items.size());
    out["confusion"] = confusion;
    out["accuracy"] = acc;
    if (!class_names.empty()) out["classes"] = class_names;
    std::cout << "accuracy " << num(acc) << " (" << correct << "/" << items.size() << ")\n";
  } else {
    std::cout << "classified " << items.size() << " signals\n";
  }
  write_text(writable("verdicts.json"), out.dump(2));
}

// ---- simulate -----------------------------------------------------------------

struct SimulateArgs {
  std::string system;
  std::string input;
  double rate = 0.0;
  double pulse_hz = 0.0;
  double duration = 1.0;
  double pulse_rate = 2000.0;
  double gm = 1e-6;
  double damping = 0.0;
  bool logic = false;
  double tau = 0.05;
  double hysteresis = 0.1;
};

void cmd_simulate(const SimulateArgs& a) {
  const auto net = load_network(a.system);
  r2nn_signal* sraw = nullptr;
  if (!a.input.empty()) {
    check(r2nn_signal_load_csv(a.input.c_str(), a.rate, &sraw), a.input);
  } else if (a.pulse_hz > 0.0) {
    check(r2nn_signal_pulse(a.pulse_hz, 0.1, 1.0, a.duration, a.pulse_rate, a.duration / 2.0, 0.0, &sraw), "pulse");
  } else {
    usage("simulate needs --input or --pulse-hz");
  }
  SignalH sig(sraw);
  r2nn_trajectory* traw = nullptr;
  check(r2nn_simulate(net.get(), sig.get(), a.gm, a.damping, &traw), "simulation");
  Traj traj(traw);
  std::size_t steps = 0, ch = 0;
  double dt = 0.0;
  check(r2nn_trajectory_shape(traj.get(), &steps, &ch, &dt));
  const double* data = nullptr;
  check(r2nn_trajectory_data(traj.get(), &data));

  std::string csv = channel_header("t", "out", ch) + "\n";
  for (std::size_t t = 0; t < steps; ++t) {
    csv += num(static_cast<double>(t + 1) * dt);
    for (std::size_t c = 0; c < ch; ++c) csv += "," + num(data[t * ch + c]);
    csv += "\n";
  }
  write_text(writable("trajectory.csv"), csv);

  std::vector<double> e(ch), p(ch, 0.0);
  check(r2nn_trajectory_energies(traj.get(), e.data()));
  json ej = {{"energies", e}, {"dt", dt}, {"steps", steps}};
  std::size_t label = 0;
  const r2nn_status st = r2nn_classify(e.data(), ch, p.data(), &label);
  if (st == R2NN_OK) {
    ej["probs"] = p;
    ej["class"] = label;
  } else if (st == R2NN_UNDECIDABLE) {
    ej["class"] = nullptr;
  } else {
    check(st);
  }
  write_text(writable("energies.json"), ej.dump(2));

  if (a.logic) {
    std::vector<std::uint8_t> bits(ch * steps);
    check(r2nn_trajectory_comparator(traj.get(), a.tau, a.hysteresis, 0.0, bits.data()));
    std::string lc = channel_header("t", "out", ch) + "\n";
    for (std::size_t t = 0; t < steps; ++t) {
      lc += num(static_cast<double>(t + 1) * dt);
      for (std::size_t c = 0; c < ch; ++c) lc += "," + std::to_string(bits[c * steps + t]);
      lc += "\n";
    }
    write_text(writable("logic.csv"), lc);
  }
  std::cout << "simulated " << steps << " steps, energies";
  for (double x : e) std::cout << ' ' << num(x);
  std::cout << '\n';
}

// ---- ac-sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string system;
  std::string method = "ac";
  std::string preset;
  double f_start = 1.0;
  double f_end = 100.0;
  double step = 0.1;
  double guard = 0.25;
  double duration = 0.0;
  double rate = 0.0;
  double gm = 1e-6;
  std::vector<double> cell;
};

std::vector<double> freq_grid(double f0, double f1, double step) {
  if (!(f0 > 0.0) || !(f1 >= f0) || !(step > 0.0)) usage("need 0 < f-start <= f-end and step > 0");
  std::vector<double> f;
  const auto n = static_cast<std::size_t>(std::floor((f1 - f0) / step + 1e-9)) + 1;
  for (std::size_t i = 0; i < n; ++i) f.push_back(f0 + static_cast<double>(i) * step);
  return f;
}

void cmd_ac_sweep(const SweepArgs& a) {
  if (!a.cell.empty()) {
    if (a.cell.size() != 3) usage("--cell takes D_M,D_m,R_n");
    std::string csv = "freq_hz,d_eff,z_eff,beta,h\n";
    for (double f : freq_grid(a.f_start, a.f_end, a.step)) {
      double d = NAN, z = NAN, b = NAN, h = NAN;
      const r2nn_status st = r2nn_cell_response(a.cell[0], a.cell[1], a.cell[2], f, &d, &z, &b, &h);
      if (st != R2NN_OK && st != R2NN_POLE) check(st);
      if (st == R2NN_POLE) {
        // Evaluate what is finite at this frequency.
        r2nn_cell_response(a.cell[0], a.cell[1], a.cell[2], f, &d, nullptr, nullptr, nullptr);
      }
      csv += num(f) + "," + num(d) + "," + num(z) + "," + num(b) + "," + num(h) + "\n";
    }
    write_text(writable("cell.csv"), csv);
    return;
  }
  if (a.system.empty()) usage("ac-sweep needs --system or --cell");
  const auto net = load_network(a.system);
  const std::size_t outputs = output_count(net.get());
  std::vector<double> freqs;
  std::vector<double> mag;
  std::vector<std::uint8_t> flags;

  if (a.method == "ac") {
    double f0 = a.f_start, f1 = a.f_end;
    if (!a.preset.empty()) {
      if (a.preset == "pulse") { f0 = 1; f1 = 100; }
      else if (a.preset == "speech") { f0 = 50; f1 = 250; }
      else if (a.preset == "drone") { f0 = 1; f1 = 120; }
      else usage("unknown preset " + a.preset);
    }
    freqs = freq_grid(f0, f1, a.step);
    mag.resize(outputs * freqs.size());
    flags.resize(freqs.size());
    check(r2nn_transmission(net.get(), freqs.data(), freqs.size(), a.guard, mag.data(), flags.data()));
  } else if (a.method == "swept-sine") {
    double* fr = nullptr;
    double* mg = nullptr;
    std::size_t n = 0;
    int slow = 1;
    check(r2nn_measure_transfer(net.get(), a.preset.empty() ? nullptr : a.preset.c_str(), a.f_start, a.f_end,
                                a.duration, a.rate, a.gm, &fr, &mg, &n, &slow),
          "swept-sine");
    if (!slow) std::cerr << "warning: sweep faster than 1 Hz per 10 periods; readings may be biased\n";
    freqs.assign(fr, fr + n);
    mag.assign(mg, mg + outputs * n);
    r2nn_array_free(fr);
    r2nn_array_free(mg);
    std::size_t count = 0;
    check(r2nn_network_eigenfrequencies(net.get(), nullptr, 0, &count));
    std::vector<double> eig(count);
    check(r2nn_network_eigenfrequencies(net.get(), eig.data(), count, &count));
    for (double f : freqs) {
      bool near = false;
      for (double e : eig) near = near || std::abs(e - f) < a.guard;
      flags.push_back(near ? 1 : 0);
    }
  } else {
    usage("--method must be ac or swept-sine");
  }

  std::string csv = channel_header("freq_hz", "h", outputs) + ",flags\n";
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    csv += num(freqs[k]);
    for (std::size_t o = 0; o < outputs; ++o) csv += "," + num(mag[o * freqs.size() + k]);
    csv += "," + std::to_string(flags[k]) + "\n";
  }
  write_text(writable("transmission.csv"), csv);
  std::cout << a.method << " sweep: " << freqs.size() << " points\n";
}

// ---- landscape ----------------------------------------------------------------

struct LandscapeArgs {
  std::string system;
  double freq = 0.0;
};

void cmd_landscape(const LandscapeArgs& a) {
  const auto net = load_network(a.system);
  const json cells = json::parse(take([&] {
    char* s = nullptr;
    check(r2nn_impedance_map(net.get(), a.freq, &s), "impedance map");
    return s;
  }()));
  const json currents = json::parse(take([&] {
    char* s = nullptr;
    check(r2nn_branch_currents(net.get(), a.freq, &s), "branch currents");
    return s;
  }()));

  std::string cc = "cell,row,col,z_eff_ohm,flag\n";
  for (const auto& c : cells) {
    cc += std::to_string(c.at("cell").get<std::size_t>()) + "," + std::to_string(c.at("row").get<std::size_t>()) +
          "," + std::to_string(c.at("col").get<std::size_t>()) + "," +
          (c.at("z_eff").is_null() ? std::string("nan") : num(c.at("z_eff").get<double>())) + "," +
          c.at("flag").get<std::string>() + "\n";
  }
  std::string ec = "a,b,current_a,sign\n";
  for (const auto& e : currents.at("couplings")) {
    const double i = e.at("current").get<double>();
    ec += std::to_string(e.at("a").get<std::size_t>()) + "," + std::to_string(e.at("b").get<std::size_t>()) + "," +
          num(std::abs(i)) + "," + (i > 0 ? "1" : i < 0 ? "-1" : "0") + "\n";
  }
  write_text(writable("cells.csv"), cc);
  write_text(writable("edges.csv"), ec);
  write_text(writable("currents.json"), currents.dump(2));
  std::cout << cells.size() << " cells, " << currents.at("couplings").size() << " edges at " << num(a.freq)
            << " Hz\n";
}

// ---- export-netlist -----------------------------------------------------------

struct NetlistArgs {
  std::string system;
  std::string checkpoint;
  std::string series = "E96";
  double r_target = 1e6;
  double scale = 0.0;
};

void cmd_export_netlist(const NetlistArgs& a) {
  Network net;
  if (!a.checkpoint.empty()) {
    const std::string ck = read_file(a.checkpoint);
    r2nn_network* raw = nullptr;
    check(r2nn_export_checkpoint(ck.c_str(), nullptr, a.r_target, "E96", nullptr, &raw, nullptr, nullptr),
          a.checkpoint);
    net.reset(raw);
  } else if (!a.system.empty()) {
    net = load_network(a.system);
  } else {
    usage("export-netlist needs --system or --checkpoint");
  }
  if (a.scale > 0.0) {
    r2nn_network* raw = nullptr;
    check(r2nn_network_rescale(net.get(), a.scale, &raw), "rescale");
    net.reset(raw);
  }
  r2nn_network* qraw = nullptr;
  char* report = nullptr;
  check(r2nn_network_quantize(net.get(), a.series.c_str(), &qraw, &report), "quantize");
  Network quant(qraw);
  const json rep = json::parse(take(report));
  char* csv = nullptr;
  check(r2nn_network_components_csv(quant.get(), &csv));
  char* sys = nullptr;
  check(r2nn_network_to_json(quant.get(), &sys));
  std::string lower = a.series;
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  write_text(writable("components.csv"), take(csv));
  write_text(writable("system_" + lower + ".json"), take(sys));
  write_text(writable("quantization.json"), rep.dump(2));
  std::cout << rep.at("changed").size() << " values changed, max relative error "
            << num(rep.at("max_rel_error").get<double>()) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metacircuit recurrent network toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", g.seed, "Random seed (required by stochastic commands)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_flag("--force", g.force, "Overwrite existing outputs");
  app.add_flag("-v,--verbose", g.verbose, "More logging (repeatable)");

  GenDatasetArgs gd;
  auto* c_gd = app.add_subcommand("gen-dataset", "Generate the labeled pulse dataset");
  c_gd->add_option("--spec", gd.spec, "Dataset spec JSON (default: 30/50/70 Hz)");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train stiffnesses by backpropagation through time");
  c_tr->add_option("--data", tr.data, "Dataset directory or manifest");
  c_tr->add_option("--config", tr.config, "Training config JSON");
  c_tr->add_option("--lattice", tr.lattice, "Lattice JSON (default: standard 5x5)");
  c_tr->add_option("--resume", tr.resume, "Checkpoint to resume from");
  c_tr->add_option("--epochs", tr.epochs, "Override the epoch budget");
  c_tr->add_option("--lr", tr.lr, "Override the learning rate");
  c_tr->add_option("--r-target", tr.r_target, "Geometric-mean resistance of the exported circuit (ohm)")
      ->capture_default_str();
  c_tr->add_option("--series", tr.series, "E-series for the quantized export")->capture_default_str();

  ClassifyArgs cl;
  auto* c_cl = app.add_subcommand("classify", "Classify signals by output energy");
  c_cl->add_option("--system", cl.system, "System JSON")->required();
  c_cl->add_option("files", cl.files, "Signal CSV files");
  c_cl->add_option("--manifest", cl.manifest, "Dataset manifest (labels enable the confusion matrix)");
  c_cl->add_option("--split", cl.split, "Manifest split: train, test or all")
      ->check(CLI::IsMember({"train", "test", "all"}))
      ->capture_default_str();
  c_cl->add_option("--rate", cl.rate, "Sample rate for single-column files (Hz)");
  c_cl->add_option("--gm", cl.gm, "Input transconductance (S)")->capture_default_str();

  SimulateArgs si;
  auto* c_si = app.add_subcommand("simulate", "Time-domain simulation");
  c_si->add_option("--system", si.system, "System JSON")->required();
  c_si->add_option("--input", si.input, "Input signal CSV");
  c_si->add_option("--rate", si.rate, "Sample rate for single-column files (Hz)");
  c_si->add_option("--pulse-hz", si.pulse_hz, "Drive with a Gaussian pulse at this frequency instead");
  c_si->add_option("--duration", si.duration, "Pulse duration (s)")->capture_default_str();
  c_si->add_option("--pulse-rate", si.pulse_rate, "Pulse sample rate (Hz)")->capture_default_str();
  c_si->add_option("--gm", si.gm, "Input transconductance (S)")->capture_default_str();
  c_si->add_option("--damping", si.damping, "Uniform damping (1/s)")->capture_default_str();
  c_si->add_flag("--logic", si.logic, "Also write comparator logic levels");
  c_si->add_option("--tau", si.tau, "Comparator smoothing time constant (s)")->capture_default_str();
  c_si->add_option("--hysteresis", si.hysteresis, "Comparator hysteresis fraction")->capture_default_str();

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("ac-sweep", "Output transmission versus frequency");
  c_sw->add_option("--system", sw.system, "System JSON");
  c_sw->add_option("--method", sw.method, "ac or swept-sine")
      ->check(CLI::IsMember({"ac", "swept-sine"}))
      ->capture_default_str();
  c_sw->add_option("--preset", sw.preset, "pulse (1-100 Hz), speech (50-250 Hz) or drone (1-120 Hz)");
  c_sw->add_option("--f-start", sw.f_start, "Start frequency (Hz)")->capture_default_str();
  c_sw->add_option("--f-end", sw.f_end, "End frequency (Hz)")->capture_default_str();
  c_sw->add_option("--step", sw.step, "AC grid step (Hz)")->capture_default_str();
  c_sw->add_option("--guard", sw.guard, "Eigenfrequency guard band (Hz)")->capture_default_str();
  c_sw->add_option("--duration", sw.duration, "Swept-sine duration (s)");
  c_sw->add_option("--rate", sw.rate, "Swept-sine simulation rate (Hz)");
  c_sw->add_option("--gm", sw.gm, "Swept-sine transconductance (S)")->capture_default_str();
  c_sw->add_option("--cell", sw.cell, "Single-cell response for D_M,D_m,R_n instead of a system")->delimiter(',');

  LandscapeArgs la;
  auto* c_la = app.add_subcommand("landscape", "Impedance landscape and current routing");
  c_la->add_option("--system", la.system, "System JSON")->required();
  c_la->add_option("--freq", la.freq, "Excitation frequency (Hz)")->required();

  NetlistArgs nl;
  auto* c_nl = app.add_subcommand("export-netlist", "Quantized component list");
  c_nl->add_option("--system", nl.system, "System JSON");
  c_nl->add_option("--checkpoint", nl.checkpoint, "Training checkpoint to convert instead");
  c_nl->add_option("--series", nl.series, "E24 or E96")->capture_default_str();
  c_nl->add_option("--r-target", nl.r_target, "Geometric-mean resistance for --checkpoint (ohm)")
      ->capture_default_str();
  c_nl->add_option("--scale", nl.scale, "Re-realize with this scaling factor first");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    check(r2nn_set_threads(g.threads));
    if (c_gd->parsed()) cmd_gen_dataset(gd);
    else if (c_tr->parsed()) cmd_train(tr);
    else if (c_cl->parsed()) cmd_classify(cl);
    else if (c_si->parsed()) cmd_simulate(si);
    else if (c_sw->parsed()) cmd_ac_sweep(sw);
    else if (c_la->parsed()) cmd_landscape(la);
    else if (c_nl->parsed()) cmd_export_netlist(nl);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << '\n';
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return 0;
}
