#pragma once

// Signal synthesis, ingestion and time-frequency analysis.

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "r2nn/signal.hpp"
#include "r2nn/simulator.hpp"

namespace r2nn::signals {

// A exp(-(t - t_c)^2 / (2 sigma^2)) cos(2 pi f_c (t - t_c) + phase)
// sampled at t = n / rate for n in [0, duration * rate).
Signal gen_pulse(double center_hz, double sigma_s, double amplitude, double duration_s, double rate_hz,
                 double t_center, double phase = 0.0);

// Additive white Gaussian noise at power P_signal / 10^(snr_db / 10).
// snr_db = +inf returns the signal unchanged.
Signal add_noise(const Signal& sig, double snr_db, std::uint64_t seed);

// Unit-amplitude linear chirp, instantaneous frequency f_start -> f_end.
Signal gen_sweep(double f_start, double f_end, double duration_s, double rate_hz);

// Reads `value` or `t,value` rows. A header row is skipped when its first
// field is not numeric. Without a time column `rate_hz` is required.
Signal load_csv(const std::string& path, std::optional<double> rate_hz);
void save_csv(const Signal& sig, const std::string& path);

struct ClassSpec {
  double center_hz = 0.0;
  double sigma_s = 0.1;
  double amplitude = 1.0;
  std::size_t count = 100;       // training samples
  std::size_t test_count = 20;   // held-out samples
};

struct DatasetSpec {
  std::vector<ClassSpec> classes;
  double snr_db = 20.0;
  double duration_s = 1.0;
  double rate_hz = 2000.0;
  double jitter_s = 0.1;  // t_center drawn uniformly from duration/2 +- jitter
  std::uint64_t seed = 0;

  // 30/50/70 Hz with the defaults above.
  static DatasetSpec standard(std::uint64_t seed);
  void validate() const;
};

enum class Split { Train, Test };

struct LabeledSignal {
  std::string id;  // "train_0007", "test_0012"
  std::size_t label = 0;
  Split split = Split::Train;
  Signal signal;
};

struct Dataset {
  double rate_hz = 0.0;
  std::vector<ClassSpec> classes;
  std::vector<LabeledSignal> samples;

  std::vector<const LabeledSignal*> split(Split which) const;
  std::size_t class_count() const { return classes.size(); }
};

// Per split, labels cycle through the classes in order. Each sample draws
// its jitter, phase and noise from a seed derived from (seed, split, index).
Dataset gen_dataset(const DatasetSpec& spec);

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

// One CSV per sample plus manifest.json. Refuses to touch an existing
// manifest unless force is set.
void save_dataset(const Dataset& ds, const std::string& dir, bool force);
// Accepts the manifest path or its directory.
Dataset load_dataset(const std::string& manifest_or_dir);

struct Spectrogram {
  std::size_t window = 0;  // samples
  std::size_t hop = 0;     // samples
  double rate = 0.0;
  std::vector<double> freq_hz;                // bins 0..window/2
  std::vector<double> time_s;                 // frame centres
  std::vector<std::vector<double>> magnitude; // [frame][bin]

  // sum |X|^2 over frames and the two-sided spectrum, scaled so that it
  // estimates sum x^2 for a periodic Hann window.
  double energy() const;
};

// Hann-windowed STFT. Frames are centred at multiples of the hop with zero
// padding at both ends. Throws InvalidArgument when the window is longer
// than the signal.
Spectrogram stft(const Signal& sig, double window_s, double hop_s);

struct SweepConfig {
  double f_start = 1.0;
  double f_end = 100.0;
  double duration_s = 1000.0;
  double rate_hz = 10000.0;
  double amplitude = 1.0;  // V
  double window_s = 4.0;   // analysis frame length
  double hop_s = 0.5;
  // Natural frequencies within this distance of a frame's sweep frequency
  // are fitted as free tones; 0 disables ringing rejection.
  double tone_band_hz = 1e3;
  // Degree of the polynomial that lets the locked amplitude follow |H|
  // across a frame.
  std::size_t amplitude_order = 2;
  // Order (0, 1 or 2) of the correction for the sweep's own rate of change.
  std::size_t chirp_order = 2;
  // Widest finite-difference stencil spacing tried for that correction.
  double diff_span_s = 3.0;
};

// The presets used for the three demonstrated tasks.
// "pulse" 1-100, "speech" 50-250, "drone" 1-120 Hz, each slow enough for the
// sweep-rate guidance.
SweepConfig sweep_preset(const std::string& name);

struct TransferMeasurement {
  std::vector<double> freq_hz;            // instantaneous sweep frequency at each frame
  std::vector<std::vector<double>> h;     // [output][frame], V/A
  bool slow_enough = true;                // sweep-rate guidance satisfied
};

// Drives the lattice with g_m * U_sweep(t) and reads input and outputs along
// the sweep's time-frequency trajectory: in each Blackman-Harris weighted
// frame the component locked to the sweep phase is separated, by least
// squares, from free ringing at the lattice's natural frequencies. H_i is the
// ratio of the locked output and input amplitudes divided by g_m. Frames whose
// window runs off either end are dropped.
TransferMeasurement measure_transfer(const sim::SystemMatrices& sys, const SweepConfig& cfg, double g_m = 1e-6);

}  // namespace r2nn::signals
