#include "r2nn/signals.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <unsupported/Eigen/FFT>

#include "r2nn/error.hpp"

namespace fs = std::filesystem;

namespace r2nn {

void Signal::validate() const {
  if (!(rate > 0.0) || !std::isfinite(rate)) fail(ErrorCode::InvalidParameter, "signal rate must be positive");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i])) {
      fail(ErrorCode::InvalidParameter, "signal sample " + std::to_string(i) + " is not finite");
    }
  }
}

}  // namespace r2nn

namespace r2nn::signals {

namespace {

constexpr double kPi = std::numbers::pi;

void check_nyquist(double f, double rate, const char* what) {
  if (!(f >= 0.0) || !(f < 0.5 * rate)) {
    fail(ErrorCode::Nyquist, std::string(what) + " " + std::to_string(f) + " Hz is not below Nyquist (" +
                                 std::to_string(0.5 * rate) + " Hz)");
  }
}

std::size_t sample_count(double duration_s, double rate_hz) {
  if (!(rate_hz > 0.0) || !std::isfinite(rate_hz)) fail(ErrorCode::InvalidParameter, "rate must be positive");
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
    fail(ErrorCode::InvalidParameter, "duration must be positive");
  }
  return static_cast<std::size_t>(std::llround(duration_s * rate_hz));
}

std::optional<double> parse_number(std::string_view field) {
  while (!field.empty() && std::isspace(static_cast<unsigned char>(field.front()))) field.remove_prefix(1);
  while (!field.empty() && std::isspace(static_cast<unsigned char>(field.back()))) field.remove_suffix(1);
  if (field.empty()) return std::nullopt;
  if (field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::mt19937_64 sample_rng(std::uint64_t seed, Split split, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split == Split::Train ? 0x7a11u : 0x7e57u),
                    static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

Signal gen_pulse(double center_hz, double sigma_s, double amplitude, double duration_s, double rate_hz,
                 double t_center, double phase) {
  const std::size_t n = sample_count(duration_s, rate_hz);
  check_nyquist(center_hz, rate_hz, "pulse centre frequency");
  if (!(sigma_s > 0.0)) fail(ErrorCode::InvalidParameter, "pulse width must be positive");
  Signal s;
  s.rate = rate_hz;
  s.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate_hz;
    const double d = t - t_center;
    s.samples[i] = amplitude * std::exp(-d * d / (2.0 * sigma_s * sigma_s)) * std::cos(2.0 * kPi * center_hz * d + phase);
  }
  return s;
}

Signal add_noise(const Signal& sig, double snr_db, std::uint64_t seed) {
  sig.validate();
  if (std::isinf(snr_db) && snr_db > 0.0) return sig;
  if (!std::isfinite(snr_db)) fail(ErrorCode::InvalidParameter, "snr must be finite or +inf");
  double power = 0.0;
  for (double x : sig.samples) power += x * x;
  if (sig.samples.empty() || !(power > 0.0)) fail(ErrorCode::InvalidParameter, "cannot set an SNR on a zero-power signal");
  power /= static_cast<double>(sig.samples.size());
  const double sd = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sd);
  Signal out = sig;
  for (double& x : out.samples) x += noise(rng);
  return out;
}

Signal gen_sweep(double f_start, double f_end, double duration_s, double rate_hz) {
  const std::size_t n = sample_count(duration_s, rate_hz);
  check_nyquist(f_start, rate_hz, "sweep start");
  check_nyquist(f_end, rate_hz, "sweep end");
  Signal s;
  s.rate = rate_hz;
  s.samples.resize(n);
  const double k = (f_end - f_start) / duration_s;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate_hz;
    s.samples[i] = std::cos(2.0 * kPi * (f_start * t + 0.5 * k * t * t));
  }
  return s;
}

Signal load_csv(const std::string& path, std::optional<double> rate_hz) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::vector<double> times;
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_fields(line);
    if (line_no == 1 && !parse_number(fields.front())) continue;  // header
    if (columns == 0) columns = fields.size();
    if (fields.size() != columns) {
      fail(ErrorCode::Parse, path + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) + " fields");
    }
    std::vector<double> row;
    for (auto f : fields) {
      const auto v = parse_number(f);
      if (!v) fail(ErrorCode::Parse, path + ":" + std::to_string(line_no) + ": non-numeric field '" + std::string(f) + "'");
      row.push_back(*v);
    }
    if (columns == 1) {
      values.push_back(row[0]);
    } else {
      times.push_back(row[0]);
      values.push_back(row[1]);
    }
  }
  if (values.empty()) fail(ErrorCode::Parse, path + ": no samples");

  Signal s;
  s.samples = std::move(values);
  if (columns == 1) {
    if (!rate_hz) fail(ErrorCode::InvalidArgument, path + ": single-column file needs a sample rate");
    s.rate = *rate_hz;
  } else {
    if (times.size() < 2) fail(ErrorCode::Parse, path + ": need at least two rows to infer the rate");
    const double step = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    if (!(step > 0.0)) fail(ErrorCode::NonUniform, path + ": time column is not increasing");
    for (std::size_t i = 1; i < times.size(); ++i) {
      const double d = times[i] - times[i - 1];
      if (std::abs(d - step) > 1e-6 * step) {
        fail(ErrorCode::NonUniform, path + ":" + std::to_string(i + 1) + ": non-uniform time step");
      }
    }
    double rate = 1.0 / step;
    const double nearest = std::round(rate);
    if (std::abs(rate - nearest) <= 1e-6 * rate) rate = nearest;
    if (rate_hz && std::abs(*rate_hz - rate) > 1e-6 * rate) {
      fail(ErrorCode::RateMismatch, path + ": time column implies " + std::to_string(rate) + " Hz");
    }
    s.rate = rate;
  }
  s.validate();
  return s;
}

void save_csv(const Signal& sig, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out << "value\n";
  for (double v : sig.samples) out << format_double(v) << '\n';
}

DatasetSpec DatasetSpec::standard(std::uint64_t seed) {
  DatasetSpec spec;
  for (double f : {30.0, 50.0, 70.0}) spec.classes.push_back({f, 0.1, 1.0, 100, 20});
  spec.seed = seed;
  return spec;
}

void DatasetSpec::validate() const {
  if (classes.empty()) fail(ErrorCode::InvalidParameter, "dataset needs at least one class");
  sample_count(duration_s, rate_hz);
  for (const auto& c : classes) {
    check_nyquist(c.center_hz, rate_hz, "class centre frequency");
    if (c.count == 0) fail(ErrorCode::InvalidParameter, "class sample counts must be positive");
    if (!(c.sigma_s > 0.0)) fail(ErrorCode::InvalidParameter, "pulse width must be positive");
  }
  if (!(jitter_s >= 0.0)) fail(ErrorCode::InvalidParameter, "jitter must be >= 0");
  if (std::isnan(snr_db)) fail(ErrorCode::InvalidParameter, "snr must be a number");
}

std::vector<const LabeledSignal*> Dataset::split(Split which) const {
  std::vector<const LabeledSignal*> out;
  for (const auto& s : samples) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

Dataset gen_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.rate_hz = spec.rate_hz;
  ds.classes = spec.classes;
  for (Split split : {Split::Train, Split::Test}) {
    auto count_of = [&](const ClassSpec& c) { return split == Split::Train ? c.count : c.test_count; };
    std::size_t rounds = 0;
    for (const auto& c : spec.classes) rounds = std::max(rounds, count_of(c));
    std::size_t index = 0;
    for (std::size_t r = 0; r < rounds; ++r) {
      for (std::size_t label = 0; label < spec.classes.size(); ++label) {
        const auto& c = spec.classes[label];
        if (r >= count_of(c)) continue;
        auto rng = sample_rng(spec.seed, split, index);
        std::uniform_real_distribution<double> jitter(-spec.jitter_s, spec.jitter_s);
        std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
        const double t_c = 0.5 * spec.duration_s + jitter(rng);
        const double ph = phase(rng);
        const std::uint64_t noise_seed = rng();
        Signal clean = gen_pulse(c.center_hz, c.sigma_s, c.amplitude, spec.duration_s, spec.rate_hz, t_c, ph);
        char id[32];
        std::snprintf(id, sizeof(id), "%s_%04zu", split == Split::Train ? "train" : "test", index);
        ds.samples.push_back({id, label, split, add_noise(clean, spec.snr_db, noise_seed)});
        ++index;
      }
    }
  }
  return ds;
}

nlohmann::json to_json(const DatasetSpec& spec) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : spec.classes) {
    classes.push_back({{"center_hz", c.center_hz},
                       {"sigma_s", c.sigma_s},
                       {"amplitude", c.amplitude},
                       {"count", c.count},
                       {"test_count", c.test_count}});
  }
  nlohmann::json snr = std::isinf(spec.snr_db) ? nlohmann::json("inf") : nlohmann::json(spec.snr_db);
  return {{"classes", classes},     {"snr_db", snr},           {"duration_s", spec.duration_s},
          {"rate_hz", spec.rate_hz}, {"jitter_s", spec.jitter_s}, {"seed", spec.seed}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  try {
    DatasetSpec spec = DatasetSpec::standard(j.value("seed", std::uint64_t{0}));
    if (j.contains("classes")) {
      spec.classes.clear();
      for (const auto& c : j.at("classes")) {
        ClassSpec cs;
        cs.center_hz = c.at("center_hz").get<double>();
        cs.sigma_s = c.value("sigma_s", cs.sigma_s);
        cs.amplitude = c.value("amplitude", cs.amplitude);
        cs.count = c.value("count", cs.count);
        cs.test_count = c.value("test_count", cs.test_count);
        spec.classes.push_back(cs);
      }
    }
    if (j.contains("snr_db")) {
      const auto& s = j.at("snr_db");
      if (s.is_string() && (s.get<std::string>() == "inf" || s.get<std::string>() == "+inf")) {
        spec.snr_db = std::numeric_limits<double>::infinity();
      } else {
        spec.snr_db = s.get<double>();
      }
    }
    spec.duration_s = j.value("duration_s", spec.duration_s);
    spec.rate_hz = j.value("rate_hz", spec.rate_hz);
    spec.jitter_s = j.value("jitter_s", spec.jitter_s);
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("dataset spec: ") + e.what());
  }
}

void save_dataset(const Dataset& ds, const std::string& dir, bool force) {
  const fs::path root(dir);
  const fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path) && !force) {
    fail(ErrorCode::Exists, manifest_path.string() + " exists (use force to overwrite)");
  }
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());

  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : ds.classes) {
    classes.push_back({{"center_hz", c.center_hz},
                       {"sigma_s", c.sigma_s},
                       {"amplitude", c.amplitude},
                       {"count", c.count},
                       {"test_count", c.test_count}});
  }
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    const std::string file = s.id + ".csv";
    save_csv(s.signal, (root / file).string());
    samples.push_back({{"path", file}, {"label", s.label}, {"split", s.split == Split::Train ? "train" : "test"}});
  }
  nlohmann::json manifest = {{"rate", ds.rate_hz}, {"classes", classes}, {"samples", samples}};
  std::ofstream out(manifest_path);
  if (!out) fail(ErrorCode::Io, "cannot write " + manifest_path.string());
  out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& manifest_or_dir) {
  fs::path manifest_path(manifest_or_dir);
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorCode::Io, "cannot open " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
    Dataset ds;
    ds.rate_hz = j.at("rate").get<double>();
    for (const auto& c : j.at("classes")) {
      ClassSpec cs;
      cs.center_hz = c.at("center_hz").get<double>();
      cs.sigma_s = c.value("sigma_s", cs.sigma_s);
      cs.amplitude = c.value("amplitude", cs.amplitude);
      cs.count = c.value("count", cs.count);
      cs.test_count = c.value("test_count", cs.test_count);
      ds.classes.push_back(cs);
    }
    const fs::path root = manifest_path.parent_path();
    for (const auto& s : j.at("samples")) {
      LabeledSignal ls;
      const auto file = s.at("path").get<std::string>();
      ls.id = fs::path(file).stem().string();
      ls.label = s.at("label").get<std::size_t>();
      if (ls.label >= ds.classes.size()) fail(ErrorCode::Parse, file + ": label out of range");
      const auto split = s.at("split").get<std::string>();
      if (split != "train" && split != "test") fail(ErrorCode::Parse, file + ": unknown split '" + split + "'");
      ls.split = split == "train" ? Split::Train : Split::Test;
      ls.signal = load_csv((root / file).string(), ds.rate_hz);
      ds.samples.push_back(std::move(ls));
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, manifest_path.string() + ": " + e.what());
  }
}

double Spectrogram::energy() const {
  if (window == 0) return 0.0;
  double wsum = 0.0;
  for (std::size_t n = 0; n < window; ++n) {
    const double w = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(n) / static_cast<double>(window)));
    wsum += w * w;
  }
  double total = 0.0;
  for (const auto& frame : magnitude) {
    for (std::size_t k = 0; k < frame.size(); ++k) {
      const bool unpaired = k == 0 || (window % 2 == 0 && k == window / 2);
      total += (unpaired ? 1.0 : 2.0) * frame[k] * frame[k];
    }
  }
  return total * static_cast<double>(hop) / (static_cast<double>(window) * wsum);
}

Spectrogram stft(const Signal& sig, double window_s, double hop_s) {
  sig.validate();
  Spectrogram sp;
  sp.rate = sig.rate;
  sp.window = static_cast<std::size_t>(std::llround(window_s * sig.rate));
  sp.hop = static_cast<std::size_t>(std::llround(hop_s * sig.rate));
  if (sp.window < 2) fail(ErrorCode::InvalidArgument, "STFT window is shorter than two samples");
  if (sp.hop == 0) fail(ErrorCode::InvalidArgument, "STFT hop is shorter than one sample");
  if (sp.window > sig.size()) fail(ErrorCode::InvalidArgument, "STFT window is longer than the signal");

  const std::size_t N = sp.window;
  std::vector<double> win(N);
  for (std::size_t n = 0; n < N; ++n) {
    win[n] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(n) / static_cast<double>(N)));
  }
  const std::size_t bins = N / 2 + 1;
  for (std::size_t k = 0; k < bins; ++k) sp.freq_hz.push_back(static_cast<double>(k) * sig.rate / static_cast<double>(N));

  Eigen::FFT<double> fft;
  std::vector<double> frame(N);
  std::vector<std::complex<double>> spec;
  const auto L = static_cast<long long>(sig.size());
  const auto half = static_cast<long long>(N / 2);
  for (long long centre = 0; centre - half < L; centre += static_cast<long long>(sp.hop)) {
    for (std::size_t n = 0; n < N; ++n) {
      const long long idx = centre - half + static_cast<long long>(n);
      frame[n] = (idx >= 0 && idx < L) ? sig.samples[static_cast<std::size_t>(idx)] * win[n] : 0.0;
    }
    fft.fwd(spec, frame);
    std::vector<double> mag(bins);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(spec[k]);
    sp.magnitude.push_back(std::move(mag));
    sp.time_s.push_back(static_cast<double>(centre) / sig.rate);
  }
  return sp;
}

SweepConfig sweep_preset(const std::string& name) {
  SweepConfig cfg;
  if (name == "pulse") {
    cfg.f_start = 1.0;
    cfg.f_end = 100.0;
  } else if (name == "speech") {
    cfg.f_start = 50.0;
    cfg.f_end = 250.0;
    cfg.duration_s = 60.0;
  } else if (name == "drone") {
    cfg.f_start = 1.0;
    cfg.f_end = 120.0;
    cfg.duration_s = 1200.0;
  } else {
    fail(ErrorCode::InvalidArgument, "unknown sweep preset '" + name + "'");
  }
  return cfg;
}

namespace {

struct SweepRun {
  std::vector<double> input;
  std::vector<std::vector<double>> outputs;
};

SweepRun run_sweep(const sim::SystemMatrices& sys, const SweepConfig& cfg, double f_from, double f_to, double g_m) {
  Signal u = gen_sweep(f_from, f_to, cfg.duration_s, cfg.rate_hz);
  for (double& x : u.samples) x *= cfg.amplitude;
  Signal drive = u;
  drive.unit = SignalUnit::Ampere;
  for (double& x : drive.samples) x *= g_m;
  sim::SimConfig sc;
  sc.dt = 1.0 / cfg.rate_hz;
  const auto traj = sim::run(sys, drive, sc);
  SweepRun r;
  r.input = std::move(u.samples);
  for (std::size_t c = 0; c < traj.dofs.size(); ++c) r.outputs.push_back(traj.channel(c));
  return r;
}

// 4-term Blackman-Harris, sidelobes below -92 dB.
double bh_window(double x) {
  const double a = 2.0 * kPi * x;
  return 0.35875 - 0.48829 * std::cos(a) + 0.14128 * std::cos(2.0 * a) - 0.01168 * std::cos(3.0 * a);
}

// One pass of the sweep in one direction. For every frame the input and each
// output are fitted, by window-weighted least squares, with a component
// locked to the sweep phase plus free sinusoids at the lattice's natural
// frequencies near the frame. The locked amplitudes give |H|; the free terms
// absorb the ringing of modes the sweep has already crossed, which never
// decays in a lossless lattice.
struct FramePoint {
  double freq;
  std::vector<std::complex<double>> g;  // locked output / locked input, per channel
};

std::vector<FramePoint> measure_direction(const sim::SystemMatrices& sys, const SweepConfig& cfg, double f_from,
                                          double f_to, double g_m, const std::vector<double>& modes_hz) {
  const SweepRun run = run_sweep(sys, cfg, f_from, f_to, g_m);
  const double k = (f_to - f_from) / cfg.duration_s;
  const double rate = cfg.rate_hz;
  const double f_top = std::max({f_from, f_to, modes_hz.empty() ? 0.0 : modes_hz.back()});
  // Thin the rows while keeping every tone below a quarter of the fitting rate.
  const auto stride = static_cast<std::size_t>(std::max(1.0, std::floor(rate / (4.0 * f_top))));
  const auto N = static_cast<std::size_t>(std::llround(cfg.window_s * rate));
  const std::size_t L = run.input.size();
  const std::size_t channels = run.outputs.size();
  const double resolution = 1.0 / cfg.window_s;

  std::vector<FramePoint> out;
  for (std::size_t m = 0;; ++m) {
    const double t_c = static_cast<double>(m) * cfg.hop_s;
    const auto centre = static_cast<long long>(std::llround(t_c * rate));
    const long long first = centre - static_cast<long long>(N / 2);
    if (first + static_cast<long long>(N) > static_cast<long long>(L)) break;
    if (first < 0) continue;
    const double f = f_from + k * t_c;

    std::vector<double> tones;
    for (double fm : modes_hz) {
      if (std::abs(fm - f) > cfg.tone_band_hz || std::abs(fm - f) < resolution) continue;
      if (fm <= 0.0 || (!tones.empty() && fm - tones.back() < 1e-6 * fm)) continue;
      tones.push_back(fm);
    }
    const std::size_t rows = (N + stride - 1) / stride;
    const std::size_t locked = 2 * (cfg.amplitude_order + 1);
    const auto cols = static_cast<Eigen::Index>(locked + 2 * tones.size());
    Eigen::MatrixXd A(static_cast<Eigen::Index>(rows), cols);
    Eigen::MatrixXd B(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(1 + channels));
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t n = r * stride;
      const auto idx = static_cast<std::size_t>(first) + n;
      const double t = static_cast<double>(idx) / rate;
      const double w = std::sqrt(bh_window(static_cast<double>(n) / static_cast<double>(N)));
      const double phase = 2.0 * kPi * (f_from * t + 0.5 * k * t * t);
      const auto ri = static_cast<Eigen::Index>(r);
      // Locked amplitude as a polynomial in time across the frame, so the
      // constant term is the value at the centre frequency.
      const double tau = (t - t_c) / cfg.window_s;
      double p = w;
      for (std::size_t q = 0; q <= cfg.amplitude_order; ++q) {
        A(ri, static_cast<Eigen::Index>(2 * q)) = p * std::cos(phase);
        A(ri, static_cast<Eigen::Index>(2 * q + 1)) = p * std::sin(phase);
        p *= tau;
      }
      for (std::size_t j = 0; j < tones.size(); ++j) {
        // Time measured from the frame centre keeps the columns well scaled.
        const double a = 2.0 * kPi * tones[j] * (t - t_c);
        A(ri, static_cast<Eigen::Index>(locked + 2 * j)) = w * std::cos(a);
        A(ri, static_cast<Eigen::Index>(locked + 2 * j + 1)) = w * std::sin(a);
      }
      B(ri, 0) = w * run.input[idx];
      for (std::size_t c = 0; c < channels; ++c) B(ri, static_cast<Eigen::Index>(1 + c)) = w * run.outputs[c][idx];
    }
    const Eigen::MatrixXd X = A.colPivHouseholderQr().solve(B);
    // a cos + b sin is the real part of (a - jb) e^{j phase}.
    const std::complex<double> u(X(0, 0), -X(1, 0));
    if (!(std::abs(u) > 0.0)) fail(ErrorCode::Numeric, "sweep input vanished in an analysis frame");
    FramePoint fp{f, {}};
    for (std::size_t c = 0; c < channels; ++c) {
      const auto ci = static_cast<Eigen::Index>(1 + c);
      fp.g.push_back(std::complex<double>(X(0, ci), -X(1, ci)) / (u * g_m));
    }
    out.push_back(std::move(fp));
  }
  if (cfg.chirp_order == 0) return out;
  // A linear chirp with angular rate a sees, to second order in a,
  //   G = H - (j a / 2) H'' - (a^2 / 8) H''''
  // so H = G + (j a / 2) G'' - (a^2 / 8) G''''. Derivatives come from
  // central differences across frames. A narrow stencil amplifies per-frame
  // fit error and a wide one blurs fine structure, so each frame tries spans
  // of 1..max_span hops, finds the neighbouring pair of spans whose
  // corrections agree best and keeps the wider one. Frames without a span-1
  // stencil are dropped.
  const double a_rate = 2.0 * kPi * k;
  const auto max_span = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.diff_span_s / cfg.hop_s)));
  const std::size_t arms = cfg.chirp_order >= 2 ? 2 : 1;
  std::vector<FramePoint> fixed;
  for (std::size_t i = arms; i + arms < out.size(); ++i) {
    FramePoint fp{out[i].freq, {}};
    for (std::size_t c = 0; c < channels; ++c) {
      auto correction = [&](std::size_t span) {
        auto g = [&](long off) {
          return out[static_cast<std::size_t>(static_cast<long>(i) + off * static_cast<long>(span))].g[c];
        };
        const double dw = a_rate * cfg.hop_s * static_cast<double>(span);
        std::complex<double> corr = std::complex<double>(0.0, 0.5 * a_rate) * (g(1) - 2.0 * g(0) + g(-1)) / (dw * dw);
        if (cfg.chirp_order >= 2) {
          corr -= a_rate * a_rate / 8.0 * (g(2) - 4.0 * g(1) + 6.0 * g(0) - 4.0 * g(-1) + g(-2)) / (dw * dw * dw * dw);
        }
        return corr;
      };
      std::vector<std::complex<double>> corr;
      for (std::size_t s = 1; s <= max_span && i >= arms * s && i + arms * s < out.size(); ++s) {
        corr.push_back(correction(s));
      }
      std::size_t best = 0;
      double best_gap = std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s + 1 < corr.size(); ++s) {
        const double gap = std::abs(corr[s] - corr[s + 1]);
        if (gap < best_gap) best_gap = gap, best = s;
      }
      fp.g.push_back(out[i].g[c] + corr[std::min(best + 1, corr.size() - 1)]);
    }
    fixed.push_back(std::move(fp));
  }
  return fixed;
}

}  // namespace

TransferMeasurement measure_transfer(const sim::SystemMatrices& sys, const SweepConfig& cfg, double g_m) {
  if (!(g_m > 0.0) || !std::isfinite(g_m)) fail(ErrorCode::InvalidParameter, "transconductance must be positive");
  if (!(cfg.duration_s > 0.0) || !(cfg.window_s > 0.0) || !(cfg.hop_s > 0.0) || !(cfg.rate_hz > 0.0)) {
    fail(ErrorCode::InvalidParameter, "sweep duration, rate, window and hop must be positive");
  }
  if (!(cfg.amplitude > 0.0)) fail(ErrorCode::InvalidParameter, "sweep amplitude must be positive");
  if (cfg.window_s > cfg.duration_s) fail(ErrorCode::InvalidArgument, "analysis window is longer than the sweep");
  if (2.0 * std::max(cfg.f_start, cfg.f_end) >= cfg.rate_hz) {
    fail(ErrorCode::Nyquist, "sweep reaches the Nyquist frequency of the simulation rate");
  }
  std::vector<double> modes_hz;
  if (cfg.tone_band_hz > 0.0) {
    // Free oscillation of the central-difference recurrence runs at
    // (2/dt) asin(w dt / 2), slightly above the continuous-time mode.
    const double step = 1.0 / cfg.rate_hz;
    for (double w : sim::eigen_omegas(sys)) {
      const double x = 0.5 * w * step;
      if (x < 1.0) modes_hz.push_back(std::asin(x) / (kPi * step));
    }
  }
  const auto points = measure_direction(sys, cfg, cfg.f_start, cfg.f_end, g_m, modes_hz);

  TransferMeasurement tm;
  tm.h.resize(sys.output_dofs.size());
  const double f_lo = std::min(cfg.f_start, cfg.f_end);
  const double sweep_rate = std::abs(cfg.f_end - cfg.f_start) / cfg.duration_s;
  // Less than 1 Hz of change over ten periods of the lowest frequency.
  tm.slow_enough = sweep_rate * 10.0 < std::max(f_lo, 1e-12);
  // The central-difference recurrence responds at w exactly as the
  // continuous lattice does at (2/dt) sin(w dt / 2); report that frequency.
  const double dt = 1.0 / cfg.rate_hz;
  for (const auto& p : points) {
    tm.freq_hz.push_back(std::sin(kPi * p.freq * dt) / (kPi * dt));
    for (std::size_t c = 0; c < p.g.size(); ++c) tm.h[c].push_back(std::abs(p.g[c]));
  }
  return tm;
}

}  // namespace r2nn::signals
