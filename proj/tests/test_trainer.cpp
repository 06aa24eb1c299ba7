#include <cmath>
#include <numbers>

#include "doctest.h"
#include "r2nn/error.hpp"
#include "r2nn/trainer.hpp"

using namespace r2nn;
using namespace r2nn::train;

namespace {

// 2x2 lattice, one grounded corner, two outputs.
lattice::LatticeSpec small_spec() { return lattice::LatticeSpec(2, 2, {3}, 0, {1, 2}); }

signals::Dataset small_dataset(std::size_t per_class, double duration_s) {
  signals::DatasetSpec spec;
  spec.classes = {{30.0, 0.05, 1.0, per_class, 1}, {50.0, 0.05, 1.0, per_class, 1}};
  spec.duration_s = duration_s;
  spec.jitter_s = 0.02;
  spec.seed = 11;
  return signals::gen_dataset(spec);
}

signals::Dataset tiny_standard() {
  auto spec = signals::DatasetSpec::standard(4);
  for (auto& c : spec.classes) c.count = 3, c.test_count = 1;
  spec.duration_s = 0.25;
  spec.jitter_s = 0.02;
  return signals::gen_dataset(spec);
}

lattice::MechanicalParams small_mech(const lattice::LatticeSpec& spec) {
  auto mech = lattice::MechanicalParams::uniform(spec, 1.307e-3, 3.53e-3, 100.0, 80.0);
  // Spread the stiffnesses so no two parameters play symmetric roles.
  for (std::size_t c = 0; c < mech.k_n.size(); ++c) mech.k_n[c] *= 1.0 + 0.17 * static_cast<double>(c);
  for (std::size_t e = 0; e < mech.k_c.size(); ++e) mech.k_c[e] *= 1.0 + 0.23 * static_cast<double>(e);
  return mech;
}

double loss_at(const lattice::LatticeSpec& spec, const lattice::MechanicalParams& base, const TrainableParams& p,
               double dt, std::span<const Sample> batch) {
  const auto sys = sim::assemble_mechanical(spec, p.realize(base));
  return forward(sys, dt, batch, 1e-12).mean_loss;
}

}  // namespace

TEST_CASE("score") {
  const std::vector<double> equal{2.0, 2.0, 2.0};
  const auto r = score(equal, 1, 1e-12);
  CHECK(r.loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  for (double p : r.probabilities) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const std::vector<double> e{1.0, 3.0, 0.0};
  const auto s = score(e, 1, 0.0);
  CHECK(s.predicted == 1);
  CHECK(s.probabilities[0] == doctest::Approx(0.25));
  CHECK(s.loss == doctest::Approx(-std::log(0.75)));
  // The floor keeps the loss finite for a silent target channel.
  CHECK(std::isfinite(score(e, 2, 1e-12).loss));

  const std::vector<double> zero{0.0, 0.0, 0.0};
  CHECK(score(zero, 0, 1e-12).loss == doctest::Approx(std::log(3.0)));
  CHECK_THROWS_AS(score(e, 3, 1e-12), Error);
}

TEST_CASE("adam") {
  AdamHyper h;
  h.lr = 0.01;
  auto st = AdamState::zeros(3, h);
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{3.0, -1e-3, 250.0};
  adam_step(st, p, g);
  // Bias correction makes the first step lr * sign(g).
  CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-4));
  CHECK(p[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-6));
  CHECK(st.t == 1);
  // A zero gradient leaves a fresh parameter alone.
  auto st2 = AdamState::zeros(1, h);
  std::vector<double> q{4.0};
  const std::vector<double> z{0.0};
  adam_step(st2, q, z);
  CHECK(q[0] == 4.0);
}

TEST_CASE("parameter projection") {
  const auto spec = small_spec();
  TrainableParams p = TrainableParams::from_mechanical(small_mech(spec), Bounds{1.0, 1e3});
  p.theta_kn[0] = 100.0;
  p.theta_kc[1] = -100.0;
  p.project();
  CHECK(p.theta_kn[0] == doctest::Approx(std::log(1e3)));
  CHECK(p.theta_kc[1] == doctest::Approx(0.0));
  const auto flat = p.flat();
  CHECK(flat.size() == p.size());
  TrainableParams q = p;
  q.assign(flat);
  CHECK(q.flat() == flat);
}

TEST_CASE("gradients match central finite differences") {
  const auto spec = small_spec();
  const auto base = small_mech(spec);
  const auto data = small_dataset(2, 0.25);  // 500 steps at 2 kHz
  const auto batch = samples_of(data, signals::Split::Train);
  REQUIRE(batch.size() == 4);
  REQUIRE(batch[0].signal->size() == 500);
  const double dt = 1.0 / data.rate_hz;
  const auto params = TrainableParams::from_mechanical(base, Bounds{});
  const auto sys = sim::assemble_mechanical(spec, params.realize(base));
  const auto res = backward(sys, params, dt, batch, 1e-12);
  CHECK(res.mean_loss == doctest::Approx(loss_at(spec, base, params, dt, batch)).epsilon(1e-12));

  const auto theta = params.flat();
  std::vector<double> fd(theta.size());
  const double h = 1e-5;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto plus = theta, minus = theta;
    plus[i] += h;
    minus[i] -= h;
    TrainableParams pp = params, pm = params;
    pp.assign(plus);
    pm.assign(minus);
    fd[i] = (loss_at(spec, base, pp, dt, batch) - loss_at(spec, base, pm, dt, batch)) / (2.0 * h);
    num += (res.grad_theta[i] - fd[i]) * (res.grad_theta[i] - fd[i]);
    den += fd[i] * fd[i];
  }
  REQUIRE(den > 0.0);
  CHECK(std::sqrt(num / den) < 1e-4);
  const double scale = std::sqrt(den);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (std::abs(fd[i]) > 1e-3 * scale) CHECK(std::abs(res.grad_theta[i] - fd[i]) / std::abs(fd[i]) < 1e-4);
  }
  // The grounded cell has no dofs, so its spring cannot matter.
  CHECK(res.grad_theta[3] == 0.0);
}

TEST_CASE("zero input has zero gradient") {
  const auto spec = small_spec();
  const auto base = small_mech(spec);
  Signal silent{2000.0, std::vector<double>(300, 0.0), SignalUnit::Volt};
  const std::vector<Sample> batch{{&silent, 0, "silent"}, {&silent, 1, "silent"}};
  const auto params = TrainableParams::from_mechanical(base, Bounds{});
  const auto sys = sim::assemble_mechanical(spec, params.realize(base));
  const auto res = backward(sys, params, 1.0 / 2000.0, batch, 1e-12);
  CHECK(res.mean_loss == doctest::Approx(std::log(2.0)));
  for (double g : res.grad_theta) CHECK(g == 0.0);
}

TEST_CASE("threads do not change results") {
  const auto spec = small_spec();
  const auto base = small_mech(spec);
  const auto data = small_dataset(3, 0.2);
  const auto batch = samples_of(data, signals::Split::Train);
  const auto params = TrainableParams::from_mechanical(base, Bounds{});
  const auto sys = sim::assemble_mechanical(spec, params.realize(base));
  const auto a = backward(sys, params, 1.0 / data.rate_hz, batch, 1e-12, 1);
  const auto b = backward(sys, params, 1.0 / data.rate_hz, batch, 1e-12, 3);
  CHECK(a.grad_theta == b.grad_theta);
  CHECK(a.mean_loss == b.mean_loss);
}

TEST_CASE("training is deterministic and resumable") {
  const auto spec = lattice::LatticeSpec::standard();
  const auto data = tiny_standard();
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 3;
  cfg.seed = 9;
  const auto full = train::train(spec, data, cfg);
  REQUIRE(full.history.size() == 4);
  const auto again = train::train(spec, data, cfg);
  CHECK(again.mech.k_n == full.mech.k_n);
  CHECK(again.mech.k_c == full.mech.k_c);

  auto half_cfg = cfg;
  half_cfg.epochs = 2;
  std::size_t calls = 0;
  const auto half = train::train(spec, data, half_cfg, [&](const EpochRecord& r, const Checkpoint& ck) {
    ++calls;
    CHECK(ck.epoch == r.epoch);
  });
  CHECK(calls == 2);
  // Through JSON, as a resumed run would see it.
  const auto ck = checkpoint_from_json(to_json(half.last));
  const auto resumed = train::train(spec, data, cfg, {}, ck);
  CHECK(resumed.mech.k_n == full.mech.k_n);
  CHECK(resumed.mech.k_c == full.mech.k_c);
  REQUIRE(resumed.history.size() == 4);
  CHECK(resumed.history[3].loss == full.history[3].loss);

  auto other = cfg;
  other.seed = 10;
  CHECK(train::train(spec, data, other).mech.k_n != full.mech.k_n);
}

TEST_CASE("training config") {
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.lr = 0.03;
  const auto back = train_config_from_json(to_json(cfg));
  CHECK(back.epochs == 7);
  CHECK(back.lr == 0.03);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.bounds = Bounds{10.0, 1.0};
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("initial resonances fall in the requested band") {
  const auto spec = lattice::LatticeSpec::standard();
  TrainConfig cfg;
  std::mt19937_64 rng(3);
  const std::vector<double> classes{30.0, 50.0, 70.0};
  const auto mech = initial_params(spec, cfg, classes, rng);
  for (auto c : spec.active_cells()) {
    const double f_local = std::sqrt(mech.k_n[c] / mech.m_inner[c]) / (2.0 * std::numbers::pi);
    CHECK(f_local >= 0.8 * 30.0 - 1e-9);
    CHECK(f_local <= 1.2 * 70.0 + 1e-9);
  }
}

TEST_CASE("a single sample is fitted") {
  auto ds_spec = signals::DatasetSpec::standard(2);
  for (auto& c : ds_spec.classes) c.count = 1, c.test_count = 0;
  ds_spec.duration_s = 0.25;
  ds_spec.jitter_s = 0.0;
  auto data = signals::gen_dataset(ds_spec);
  data.samples.resize(1);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 1;
  cfg.seed = 5;
  const auto res = train::train(lattice::LatticeSpec::standard(), data, cfg);
  REQUIRE(res.history.size() >= 2);
  for (std::size_t e = 1; e < res.history.size(); ++e) {
    CHECK(res.history[e].loss <= 1.05 * res.history[e - 1].loss);
  }
  CHECK(res.history.back().loss < res.history.front().loss);
}
