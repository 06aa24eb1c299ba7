#include "r2nn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "r2nn/error.hpp"

namespace r2nn::train {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kBlowup = 1e12;

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first failure
// by index is rethrown after every worker has finished.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) guarded(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Re-raises an error with the sample id prepended, keeping the code.
[[noreturn]] void rethrow_for(const Sample& s) {
  try {
    throw;
  } catch (const NumericError& e) {
    throw NumericError(e.step(), "sample " + s.id + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.code(), "sample " + s.id + ": " + e.what());
  }
}

void check_rate(const Sample& s, double dt) {
  if (std::abs(s.signal->rate * dt - 1.0) > 1e-9) {
    fail(ErrorCode::RateMismatch, "sample " + s.id + " is sampled at " + std::to_string(s.signal->rate) +
                                      " Hz, which does not match dt = " + std::to_string(dt) + " s");
  }
}

void check_state(const sim::SimState& st, std::size_t step) {
  for (Eigen::Index i = 0; i < st.u_curr.size(); ++i) {
    const double v = st.u_curr(i);
    if (!std::isfinite(v) || std::abs(v) > kBlowup) {
      throw NumericError(step, "state diverged at step " + std::to_string(step));
    }
  }
}

std::vector<double> run_energies(const sim::SystemMatrices& sys, const sim::Stepper& stepper, const Signal& sig) {
  sim::SimState st = sim::SimState::zero(sys.dofs());
  std::vector<double> e(sys.output_dofs.size(), 0.0);
  for (std::size_t t = 0; t < sig.samples.size(); ++t) {
    stepper.step(st, sig.samples[t]);
    check_state(st, t);
    for (std::size_t c = 0; c < e.size(); ++c) {
      const double u = st.u_curr(static_cast<Eigen::Index>(sys.output_dofs[c]));
      e[c] += u * u;
    }
  }
  for (double& x : e) x *= stepper.dt();
  return e;
}

struct SampleGrad {
  SampleResult result;
  std::vector<double> grad_k;  // by branch
};

SampleGrad sample_gradient(const sim::SystemMatrices& sys, const sim::Stepper& stepper, const Sample& s,
                           double prob_epsilon) {
  const std::size_t n = sys.dofs();
  const std::size_t steps = s.signal->samples.size();
  const double dt = stepper.dt();
  const double dt2 = dt * dt;

  // U row t holds u[t] for t = 0..steps, u[0] = 0.
  std::vector<double> U((steps + 1) * n, 0.0);
  sim::SimState st = sim::SimState::zero(n);
  std::vector<double> energies(sys.output_dofs.size(), 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    stepper.step(st, s.signal->samples[t]);
    check_state(st, t);
    std::copy(st.u_curr.data(), st.u_curr.data() + n, U.begin() + static_cast<std::ptrdiff_t>((t + 1) * n));
    for (std::size_t c = 0; c < energies.size(); ++c) {
      const double u = st.u_curr(static_cast<Eigen::Index>(sys.output_dofs[c]));
      energies[c] += u * u;
    }
  }
  for (double& x : energies) x *= dt;

  SampleGrad out;
  out.result = score(energies, s.label, prob_epsilon);
  out.grad_k.assign(sys.branches.size(), 0.0);

  // dL/dE_c; all zero when the outputs are silent (loss is flat there).
  const double total = std::accumulate(energies.begin(), energies.end(), 0.0);
  std::vector<double> dl_de(energies.size(), 0.0);
  if (total > 0.0) {
    const double eps = prob_epsilon * total;
    const double denom = energies[s.label] + eps;
    for (std::size_t c = 0; c < energies.size(); ++c) {
      dl_de[c] = 1.0 / total - (prob_epsilon + (c == s.label ? 1.0 : 0.0)) / denom;
    }
  } else {
    return out;
  }

  const double a = stepper.gain();
  const double r = stepper.retain();
  const auto& dinv = stepper.dinv();
  std::vector<double> lam(n, 0.0), lam1(n, 0.0), lam2(n, 0.0), mu(n), ymu(n);
  for (std::size_t t = steps; t >= 1; --t) {
    for (std::size_t i = 0; i < n; ++i) mu[i] = dinv[i] * lam1[i];
    stepper.apply_y(mu.data(), ymu.data());
    for (std::size_t i = 0; i < n; ++i) lam[i] = a * (2.0 * lam1[i] - dt2 * ymu[i]) - r * lam2[i];
    const double* ut = &U[t * n];
    for (std::size_t c = 0; c < dl_de.size(); ++c) {
      const std::size_t o = sys.output_dofs[c];
      lam[o] += dl_de[c] * 2.0 * dt * ut[o];
    }
    // u[t] depends on each conductance through -a dt^2 D^-1 s s' u[t-1].
    const double* up = &U[(t - 1) * n];
    for (std::size_t i = 0; i < n; ++i) mu[i] = dinv[i] * lam[i];
    for (std::size_t b = 0; b < sys.branches.size(); ++b) {
      const auto& br = sys.branches[b];
      const auto ia = static_cast<std::size_t>(br.dof_a);
      double dm = mu[ia];
      double du = up[ia];
      if (br.dof_b != sim::kGround) {
        const auto ib = static_cast<std::size_t>(br.dof_b);
        dm -= mu[ib];
        du -= up[ib];
      }
      out.grad_k[b] -= a * dt2 * dm * du;
    }
    std::swap(lam2, lam1);
    std::swap(lam1, lam);
  }
  return out;
}

std::size_t flat_index(const sim::Branch& b, std::size_t cells) {
  return b.kind == sim::Branch::Kind::Internal ? b.index : cells + b.index;
}

std::vector<double> class_centres(const signals::Dataset& data) {
  std::vector<double> out;
  for (const auto& c : data.classes) out.push_back(c.center_hz);
  return out;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) fail(ErrorCode::Parse, "checkpoint RNG state is corrupt");
}

}  // namespace

TrainableParams TrainableParams::from_mechanical(const lattice::MechanicalParams& mech, Bounds bounds) {
  TrainableParams p;
  p.bounds = bounds;
  for (double k : mech.k_n) p.theta_kn.push_back(std::log(k));
  for (double k : mech.k_c) p.theta_kc.push_back(std::log(k));
  p.project();
  return p;
}

lattice::MechanicalParams TrainableParams::realize(const lattice::MechanicalParams& base) const {
  lattice::MechanicalParams m = base;
  m.k_n.resize(theta_kn.size());
  m.k_c.resize(theta_kc.size());
  for (std::size_t i = 0; i < theta_kn.size(); ++i) m.k_n[i] = std::exp(theta_kn[i]);
  for (std::size_t i = 0; i < theta_kc.size(); ++i) m.k_c[i] = std::exp(theta_kc[i]);
  return m;
}

std::vector<double> TrainableParams::flat() const {
  std::vector<double> out = theta_kn;
  out.insert(out.end(), theta_kc.begin(), theta_kc.end());
  return out;
}

void TrainableParams::assign(std::span<const double> flat) {
  if (flat.size() != size()) fail(ErrorCode::InvalidArgument, "parameter vector has the wrong length");
  std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(theta_kn.size()), theta_kn.begin());
  std::copy(flat.begin() + static_cast<std::ptrdiff_t>(theta_kn.size()), flat.end(), theta_kc.begin());
}

void TrainableParams::project() {
  const double lo = std::log(bounds.k_min);
  const double hi = std::log(bounds.k_max);
  for (double& x : theta_kn) x = std::clamp(x, lo, hi);
  for (double& x : theta_kc) x = std::clamp(x, lo, hi);
}

AdamState AdamState::zeros(std::size_t n, AdamHyper hyper) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.hyper = hyper;
  return s;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != state.m.size() || grads.size() != state.m.size()) {
    fail(ErrorCode::InvalidArgument, "Adam state, parameters and gradients differ in length");
  }
  const auto& h = state.hyper;
  ++state.t;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grads[i];
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
  }
}

SampleResult score(std::span<const double> energies, std::size_t label, double prob_epsilon) {
  const std::size_t n = energies.size();
  if (n == 0) fail(ErrorCode::InvalidArgument, "no output energies");
  if (label >= n) fail(ErrorCode::InvalidArgument, "label out of range");
  SampleResult r;
  r.energies.assign(energies.begin(), energies.end());
  const double total = std::accumulate(energies.begin(), energies.end(), 0.0);
  if (!(total > 0.0)) {
    r.probabilities.assign(n, 1.0 / static_cast<double>(n));
    r.loss = std::log(static_cast<double>(n));
    r.predicted = 0;
    return r;
  }
  const double eps = prob_epsilon * total;
  const double z = total + static_cast<double>(n) * eps;
  for (double e : energies) r.probabilities.push_back((e + eps) / z);
  r.loss = -std::log(r.probabilities[label]);
  r.predicted = static_cast<std::size_t>(std::max_element(energies.begin(), energies.end()) - energies.begin());
  return r;
}

BatchResult forward(const sim::SystemMatrices& sys, double dt, std::span<const Sample> batch, double prob_epsilon,
                    unsigned threads) {
  const sim::Stepper proto(sys, dt);
  BatchResult out;
  out.samples.resize(batch.size());
  const unsigned workers = std::max(1u, threads);
  std::vector<sim::Stepper> steppers(std::min<std::size_t>(workers, std::max<std::size_t>(batch.size(), 1)), proto);
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    const Sample& s = batch[i];
    try {
      check_rate(s, dt);
      const auto e = run_energies(sys, steppers[i % steppers.size()], *s.signal);
      out.samples[i] = score(e, s.label, prob_epsilon);
    } catch (const Error&) {
      rethrow_for(s);
    }
  });
  double sum = 0.0;
  for (const auto& r : out.samples) sum += r.loss;
  out.mean_loss = batch.empty() ? 0.0 : sum / static_cast<double>(batch.size());
  return out;
}

BatchResult backward(const sim::SystemMatrices& sys, const TrainableParams& params, double dt,
                     std::span<const Sample> batch, double prob_epsilon, unsigned threads) {
  const sim::Stepper proto(sys, dt);
  const unsigned workers = std::max(1u, threads);
  std::vector<sim::Stepper> steppers(std::min<std::size_t>(workers, std::max<std::size_t>(batch.size(), 1)), proto);
  std::vector<SampleGrad> per(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    const Sample& s = batch[i];
    try {
      check_rate(s, dt);
      per[i] = sample_gradient(sys, steppers[i % steppers.size()], s, prob_epsilon);
    } catch (const Error&) {
      rethrow_for(s);
    }
  });

  // Index-ordered reduction keeps the result independent of the thread count.
  BatchResult out;
  const std::size_t cells = params.theta_kn.size();
  out.grad_theta.assign(params.size(), 0.0);
  double sum = 0.0;
  for (auto& p : per) {
    sum += p.result.loss;
    for (std::size_t b = 0; b < sys.branches.size(); ++b) {
      out.grad_theta[flat_index(sys.branches[b], cells)] += p.grad_k[b];
    }
    out.samples.push_back(std::move(p.result));
  }
  if (!batch.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.mean_loss = sum * inv;
    // dJ/dtheta = k dJ/dk with k = exp(theta).
    const auto flat = params.flat();
    for (std::size_t i = 0; i < flat.size(); ++i) out.grad_theta[i] *= std::exp(flat[i]) * inv;
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs == 0) fail(ErrorCode::InvalidParameter, "epochs must be positive");
  if (batch_size == 0) fail(ErrorCode::InvalidParameter, "batch size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail(ErrorCode::InvalidParameter, "learning rate must be positive");
  if (!(dt >= 0.0) || !std::isfinite(dt)) fail(ErrorCode::InvalidParameter, "dt must be non-negative");
  if (!(prob_epsilon >= 0.0)) fail(ErrorCode::InvalidParameter, "probability epsilon must be non-negative");
  if (!(bounds.k_min > 0.0) || !(bounds.k_max > bounds.k_min)) {
    fail(ErrorCode::InvalidParameter, "stiffness bounds must satisfy 0 < k_min < k_max");
  }
  if (!(mass_outer > 0.0) || !(mass_inner > 0.0)) fail(ErrorCode::InvalidParameter, "masses must be positive");
  if (!(init_low > 0.0) || !(init_high >= init_low)) {
    fail(ErrorCode::InvalidParameter, "initial band must satisfy 0 < low <= high");
  }
  if (!(kc_init_min > 0.0)) fail(ErrorCode::InvalidParameter, "initial coupling stiffness must be positive");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.lr},
          {"dt", cfg.dt},
          {"seed", cfg.seed},
          {"loss_floor", cfg.loss_floor},
          {"prob_epsilon", cfg.prob_epsilon},
          {"k_min", cfg.bounds.k_min},
          {"k_max", cfg.bounds.k_max},
          {"mass_outer", cfg.mass_outer},
          {"mass_inner", cfg.mass_inner},
          {"init_low", cfg.init_low},
          {"init_high", cfg.init_high},
          {"kc_init_min", cfg.kc_init_min}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.dt = j.value("dt", c.dt);
    c.seed = j.value("seed", c.seed);
    c.loss_floor = j.value("loss_floor", c.loss_floor);
    c.prob_epsilon = j.value("prob_epsilon", c.prob_epsilon);
    c.bounds.k_min = j.value("k_min", c.bounds.k_min);
    c.bounds.k_max = j.value("k_max", c.bounds.k_max);
    c.mass_outer = j.value("mass_outer", c.mass_outer);
    c.mass_inner = j.value("mass_inner", c.mass_inner);
    c.init_low = j.value("init_low", c.init_low);
    c.init_high = j.value("init_high", c.init_high);
    c.kc_init_min = j.value("kc_init_min", c.kc_init_min);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const Checkpoint& ck) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : ck.history) {
    hist.push_back({{"epoch", h.epoch}, {"loss", h.loss}, {"train_acc", h.train_acc}, {"val_acc", h.val_acc}});
  }
  return {{"epoch", ck.epoch},
          {"finished", ck.finished},
          {"M_outer", ck.base.M_outer},
          {"m_inner", ck.base.m_inner},
          {"theta_kn", ck.params.theta_kn},
          {"theta_kc", ck.params.theta_kc},
          {"k_min", ck.params.bounds.k_min},
          {"k_max", ck.params.bounds.k_max},
          {"adam",
           {{"m", ck.adam.m},
            {"v", ck.adam.v},
            {"t", ck.adam.t},
            {"lr", ck.adam.hyper.lr},
            {"beta1", ck.adam.hyper.beta1},
            {"beta2", ck.adam.hyper.beta2},
            {"eps", ck.adam.hyper.eps}}},
          {"rng", ck.rng_state},
          {"history", hist}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ck;
  try {
    ck.epoch = j.at("epoch").get<std::size_t>();
    ck.finished = j.value("finished", false);
    ck.base.M_outer = j.at("M_outer").get<std::vector<double>>();
    ck.base.m_inner = j.at("m_inner").get<std::vector<double>>();
    ck.params.theta_kn = j.at("theta_kn").get<std::vector<double>>();
    ck.params.theta_kc = j.at("theta_kc").get<std::vector<double>>();
    ck.params.bounds.k_min = j.at("k_min").get<double>();
    ck.params.bounds.k_max = j.at("k_max").get<double>();
    const auto& a = j.at("adam");
    ck.adam.m = a.at("m").get<std::vector<double>>();
    ck.adam.v = a.at("v").get<std::vector<double>>();
    ck.adam.t = a.at("t").get<std::uint64_t>();
    ck.adam.hyper.lr = a.at("lr").get<double>();
    ck.adam.hyper.beta1 = a.at("beta1").get<double>();
    ck.adam.hyper.beta2 = a.at("beta2").get<double>();
    ck.adam.hyper.eps = a.at("eps").get<double>();
    ck.rng_state = j.at("rng").get<std::string>();
    for (const auto& h : j.at("history")) {
      ck.history.push_back({h.at("epoch").get<std::size_t>(), h.at("loss").get<double>(),
                            h.at("train_acc").get<double>(), h.at("val_acc").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("checkpoint: ") + e.what());
  }
  if (ck.adam.m.size() != ck.params.size() || ck.adam.v.size() != ck.params.size()) {
    fail(ErrorCode::Parse, "checkpoint: optimizer state does not match the parameters");
  }
  ck.base.k_n = std::vector<double>(ck.params.theta_kn.size(), 1.0);
  ck.base.k_c = std::vector<double>(ck.params.theta_kc.size(), 1.0);
  return ck;
}

lattice::MechanicalParams initial_params(const lattice::LatticeSpec& spec, const TrainConfig& cfg,
                                         std::span<const double> class_hz, std::mt19937_64& rng) {
  if (class_hz.empty()) fail(ErrorCode::InvalidArgument, "no classes");
  const auto [lo_it, hi_it] = std::minmax_element(class_hz.begin(), class_hz.end());
  std::uniform_real_distribution<double> f0(cfg.init_low * *lo_it, cfg.init_high * *hi_it);
  std::uniform_real_distribution<double> kc(cfg.kc_init_min, 10.0 * cfg.kc_init_min);
  auto mech = lattice::MechanicalParams::uniform(spec, cfg.mass_outer, cfg.mass_inner, 1.0, 1.0);
  for (std::size_t c = 0; c < spec.cell_count(); ++c) {
    const double w = kTwoPi * f0(rng);
    mech.k_n[c] = std::clamp(mech.m_inner[c] * w * w, cfg.bounds.k_min, cfg.bounds.k_max);
  }
  for (auto& k : mech.k_c) k = kc(rng);
  return mech;
}

double accuracy(const sim::SystemMatrices& sys, double dt, std::span<const Sample> samples, unsigned threads) {
  if (samples.empty()) return 0.0;
  const auto res = forward(sys, dt, samples, 0.0, threads);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (res.samples[i].predicted == samples[i].label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

std::vector<Sample> samples_of(const signals::Dataset& data, signals::Split split) {
  std::vector<Sample> out;
  for (const auto* s : data.split(split)) out.push_back({&s->signal, s->label, s->id});
  return out;
}

TrainResult train(const lattice::LatticeSpec& spec, const signals::Dataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch, const std::optional<Checkpoint>& resume) {
  cfg.validate();
  if (data.class_count() != spec.output_cells().size()) {
    fail(ErrorCode::InvalidArgument, "dataset has " + std::to_string(data.class_count()) + " classes but the lattice has " +
                                         std::to_string(spec.output_cells().size()) + " outputs");
  }
  if (!(data.rate_hz > 0.0)) fail(ErrorCode::InvalidArgument, "dataset has no sample rate");
  const double dt = cfg.dt > 0.0 ? cfg.dt : 1.0 / data.rate_hz;
  if (std::abs(data.rate_hz * dt - 1.0) > 1e-9) {
    fail(ErrorCode::RateMismatch, "dt does not match the dataset sample rate");
  }
  const auto train_set = samples_of(data, signals::Split::Train);
  const auto test_set = samples_of(data, signals::Split::Test);
  if (train_set.empty()) fail(ErrorCode::InvalidArgument, "dataset has no training samples");

  std::mt19937_64 rng(cfg.seed);
  Checkpoint ck;
  if (resume) {
    ck = *resume;
    if (ck.params.theta_kn.size() != spec.cell_count() || ck.params.theta_kc.size() != spec.edges().size()) {
      fail(ErrorCode::InvalidArgument, "checkpoint does not match the lattice");
    }
    rng_from_string(rng, ck.rng_state);
    // A run stopped by its epoch cap may be extended; one that met the loss
    // floor may not.
    ck.finished = !ck.history.empty() && ck.history.back().loss <= cfg.loss_floor;
  } else {
    const auto centres = class_centres(data);
    const auto init = initial_params(spec, cfg, centres, rng);
    ck.base = init;
    ck.params = TrainableParams::from_mechanical(init, cfg.bounds);
    AdamHyper h;
    h.lr = cfg.lr;
    ck.adam = AdamState::zeros(ck.params.size(), h);
  }

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = ck.epoch; epoch < cfg.epochs && !ck.finished; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<Sample> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);

      BatchResult res;
      try {
        const auto sys = sim::assemble_mechanical(spec, ck.params.realize(ck.base));
        res = backward(sys, ck.params, dt, batch, cfg.prob_epsilon, cfg.threads);
      } catch (const Error& e) {
        fail(ErrorCode::Diverged, "training diverged in epoch " + std::to_string(epoch + 1) + ": " + e.what());
      }
      if (!std::isfinite(res.mean_loss)) {
        fail(ErrorCode::Diverged, "training loss became non-finite in epoch " + std::to_string(epoch + 1));
      }
      for (std::size_t i = 0; i < batch.size(); ++i) {
        loss_sum += res.samples[i].loss;
        if (res.samples[i].predicted == batch[i].label) ++correct;
      }

      // Halve the step until the updated lattice is still stable at dt.
      const auto before = ck.params.flat();
      auto after = before;
      adam_step(ck.adam, after, res.grad_theta);
      TrainableParams trial = ck.params;
      for (int tries = 0;; ++tries) {
        trial.assign(after);
        trial.project();
        const auto sys = sim::assemble_mechanical(spec, trial.realize(ck.base));
        if (dt < sim::max_stable_dt(sys)) break;
        if (tries == 30) {
          trial = ck.params;
          break;
        }
        for (std::size_t i = 0; i < after.size(); ++i) after[i] = before[i] + 0.5 * (after[i] - before[i]);
      }
      ck.params = trial;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (!test_set.empty()) {
      try {
        const auto sys = sim::assemble_mechanical(spec, ck.params.realize(ck.base));
        rec.val_acc = accuracy(sys, dt, test_set, cfg.threads);
      } catch (const Error& e) {
        fail(ErrorCode::Diverged, "evaluation diverged after epoch " + std::to_string(epoch + 1) + ": " + e.what());
      }
    }
    ck.epoch = epoch + 1;
    ck.history.push_back(rec);
    ck.rng_state = rng_to_string(rng);
    ck.finished = rec.loss <= cfg.loss_floor || ck.epoch >= cfg.epochs;
    if (on_epoch) on_epoch(rec, ck);
  }
  if (ck.epoch >= cfg.epochs) ck.finished = true;

  TrainResult out;
  out.mech = ck.params.realize(ck.base);
  out.history = ck.history;
  out.last = ck;
  return out;
}

ExportResult export_trained(const lattice::LatticeSpec& spec, const lattice::MechanicalParams& mech, double r_target,
                            lattice::ESeries series, std::span<const Sample> held_out, double dt, unsigned threads) {
  const auto s = lattice::choose_scaling(spec, mech, r_target);
  ExportResult out{{spec, lattice::mech_to_circuit(mech, s), s.value()}, {spec, {}, s.value()}, {}, 0.0, 0.0};
  out.report = lattice::quantize_eseries(spec, out.circuit.circuit, series);
  out.quantized.circuit = out.report.params;
  if (!held_out.empty()) {
    out.accuracy = accuracy(sim::assemble(out.circuit), dt, held_out, threads);
    out.quantized_accuracy = accuracy(sim::assemble(out.quantized), dt, held_out, threads);
  }
  return out;
}

}  // namespace r2nn::train
