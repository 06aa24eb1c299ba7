#pragma once

// Backpropagation-through-time training of the mechanical lattice.
//
// Masses are fixed; every stiffness is trained in log space, k = exp(theta),
// with theta projected back into [ln k_min, ln k_max] after each update.
// Class probabilities are the L1-normalized output energies
//   p_c = (E_c + eps) / sum_j (E_j + eps),   eps = prob_epsilon * sum_j E_j
// and the loss is the mean of -ln p_label over a batch.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "r2nn/lattice.hpp"
#include "r2nn/signals.hpp"
#include "r2nn/simulator.hpp"

namespace r2nn::train {

struct Bounds {
  double k_min = 1e-2;  // N/m
  double k_max = 1e4;   // N/m
};

struct TrainableParams {
  std::vector<double> theta_kn;  // per cell
  std::vector<double> theta_kc;  // per edge
  Bounds bounds;

  static TrainableParams from_mechanical(const lattice::MechanicalParams& mech, Bounds bounds);
  // Masses from `base`, stiffnesses exp(theta).
  lattice::MechanicalParams realize(const lattice::MechanicalParams& base) const;

  std::size_t size() const { return theta_kn.size() + theta_kc.size(); }
  std::vector<double> flat() const;
  void assign(std::span<const double> flat);
  // Clamps every theta into [ln k_min, ln k_max].
  void project();
};

struct AdamHyper {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  AdamHyper hyper;

  static AdamState zeros(std::size_t n, AdamHyper hyper);
};

// Bias-corrected Adam; updates params and state in place.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

struct Sample {
  const Signal* signal;
  std::size_t label;
  std::string id;  // used in error messages
};

struct SampleResult {
  std::vector<double> energies;
  std::vector<double> probabilities;
  std::size_t predicted = 0;
  double loss = 0.0;
};

struct BatchResult {
  std::vector<SampleResult> samples;
  double mean_loss = 0.0;
  std::vector<double> grad_theta;  // same layout as TrainableParams::flat(); empty for forward()
};

// Probabilities and loss for a vector of output energies.
SampleResult score(std::span<const double> energies, std::size_t label, double prob_epsilon);

// Simulates every sample and scores it. Throws the simulation error with
// the failing sample's index in the message.
BatchResult forward(const sim::SystemMatrices& sys, double dt, std::span<const Sample> batch, double prob_epsilon,
                    unsigned threads = 1);

// Forward pass plus reverse-mode accumulation through the recurrence.
// Gradients are with respect to theta = ln k of `params` (sys must be the
// mechanical system built from those params).
BatchResult backward(const sim::SystemMatrices& sys, const TrainableParams& params, double dt,
                     std::span<const Sample> batch, double prob_epsilon, unsigned threads = 1);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 20;
  double lr = 1e-2;
  double dt = 0.0;  // 0 = one step per sample of the dataset
  std::uint64_t seed = 1;
  double loss_floor = 1e-3;
  double prob_epsilon = 1e-12;
  unsigned threads = 1;
  Bounds bounds;
  double mass_outer = 1.307e-3;  // kg
  double mass_inner = 3.530e-3;  // kg
  // Initial resonance band as fractions of the lowest / highest class centre.
  double init_low = 0.8;
  double init_high = 1.2;
  double kc_init_min = 50.0;  // N/m; initial k_c uniform in [min, 10 min]

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct Checkpoint {
  std::size_t epoch = 0;  // completed epochs
  lattice::MechanicalParams base;  // masses (stiffness entries are ignored)
  TrainableParams params;
  AdamState adam;
  std::string rng_state;
  std::vector<EpochRecord> history;
  bool finished = false;
};

nlohmann::json to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

// Initial stiffnesses: every cell's local resonance drawn uniformly in
// [init_low * f_lowest, init_high * f_highest], k_c uniform within a decade.
lattice::MechanicalParams initial_params(const lattice::LatticeSpec& spec, const TrainConfig& cfg,
                                         std::span<const double> class_hz, std::mt19937_64& rng);

struct TrainResult {
  lattice::MechanicalParams mech;
  std::vector<EpochRecord> history;
  Checkpoint last;
};

using EpochCallback = std::function<void(const EpochRecord&, const Checkpoint&)>;

// Deterministic for a given seed. Resuming from a checkpoint continues the
// exact trajectory of an uninterrupted run. Throws Diverged when the loss
// goes non-finite or a simulation blows up; the callback has already seen
// the last good checkpoint by then.
TrainResult train(const lattice::LatticeSpec& spec, const signals::Dataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {}, const std::optional<Checkpoint>& resume = std::nullopt);

// Accuracy (fraction correct) of a system on labeled samples.
double accuracy(const sim::SystemMatrices& sys, double dt, std::span<const Sample> samples, unsigned threads = 1);

std::vector<Sample> samples_of(const signals::Dataset& data, signals::Split split);

struct ExportResult {
  lattice::Network circuit;
  lattice::Network quantized;
  lattice::QuantizeReport report;
  double accuracy = 0.0;
  double quantized_accuracy = 0.0;
};

// choose_scaling + mech_to_circuit + quantize_eseries, with both networks
// re-evaluated on `held_out`.
ExportResult export_trained(const lattice::LatticeSpec& spec, const lattice::MechanicalParams& mech, double r_target,
                            lattice::ESeries series, std::span<const Sample> held_out, double dt,
                            unsigned threads = 1);

}  // namespace r2nn::train
