#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "r2nn/r2nn.h"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  r2nn_string_free(s);
  return out;
}

}  // namespace

TEST_CASE("status reporting") {
  CHECK(std::string(r2nn_status_name(R2NN_POLE)) == "pole");
  CHECK(std::strlen(r2nn_version()) > 0);
  double f0 = 0.0, f1 = 0.0;
  CHECK(r2nn_cell_resonances(-1.0, 1.0, 1.0, &f0, &f1) == R2NN_INVALID_PARAMETER);
  CHECK(std::strlen(r2nn_last_error()) > 0);
  CHECK(r2nn_cell_resonances(1.0, 1.0, 1.0, nullptr, &f1) == R2NN_INVALID_ARGUMENT);
  CHECK(r2nn_set_threads(0) == R2NN_INVALID_ARGUMENT);
  CHECK(r2nn_set_threads(1) == R2NN_OK);
}

TEST_CASE("unit cell") {
  double f0 = 0.0, f1 = 0.0;
  REQUIRE(r2nn_cell_resonances(1.307e-11, 3.53e-11, 1e6, &f0, &f1) == R2NN_OK);
  CHECK(std::abs(f0 - 26.8) < 0.1);
  CHECK(std::abs(f1 - 51.5) < 0.1);
  double d = 0, z = 0, b = 0, h = 0;
  REQUIRE(r2nn_cell_response(1.307e-11, 3.53e-11, 1e6, 40.0, &d, &z, &b, &h) == R2NN_OK);
  CHECK(z > 0.0);
  CHECK(h == doctest::Approx(b * z).epsilon(1e-12));
  CHECK(r2nn_cell_response(1.307e-11, 3.53e-11, 1e6, f1, &d, &z, &b, &h) == R2NN_POLE);
}

TEST_CASE("network lifecycle") {
  r2nn_network* net = nullptr;
  REQUIRE(r2nn_network_standard(1.307e-11, 3.53e-11, 1e6, 1e6, &net) == R2NN_OK);
  size_t rows = 0, cols = 0, outs = 0, dofs = 0;
  REQUIRE(r2nn_network_info(net, &rows, &cols, &outs, &dofs) == R2NN_OK);
  CHECK(rows == 5);
  CHECK(cols == 5);
  CHECK(outs == 3);
  CHECK(dofs == 42);

  char* json = nullptr;
  REQUIRE(r2nn_network_to_json(net, &json) == R2NN_OK);
  r2nn_network* copy = nullptr;
  REQUIRE(r2nn_network_from_json(json, &copy) == R2NN_OK);
  r2nn_string_free(json);
  CHECK(r2nn_network_from_json("{not json", &copy) == R2NN_PARSE);

  std::vector<double> e1(64), e2(64);
  size_t n1 = 0, n2 = 0;
  REQUIRE(r2nn_network_eigenfrequencies(net, e1.data(), e1.size(), &n1) == R2NN_OK);
  CHECK(n1 == 42);
  r2nn_network* scaled = nullptr;
  REQUIRE(r2nn_network_rescale(net, 1e-4, &scaled) == R2NN_OK);
  REQUIRE(r2nn_network_eigenfrequencies(scaled, e2.data(), e2.size(), &n2) == R2NN_OK);
  for (size_t i = 0; i < n1; ++i) CHECK(e2[i] == doctest::Approx(e1[i]).epsilon(1e-9).scale(1e-6));

  r2nn_network* q = nullptr;
  char* report = nullptr;
  CHECK(r2nn_network_quantize(net, "E12", &q, &report) == R2NN_INVALID_ARGUMENT);
  REQUIRE(r2nn_network_quantize(net, "E96", &q, &report) == R2NN_OK);
  CHECK(take(report).find("changed") != std::string::npos);
  char* csv = nullptr;
  REQUIRE(r2nn_network_components_csv(q, &csv) == R2NN_OK);
  const auto table = take(csv);
  CHECK(table.rfind("ref,kind,value,unit,node_a,node_b", 0) == 0);

  const auto path = (fs::temp_directory_path() / "r2nn_capi_net.json").string();
  REQUIRE(r2nn_network_save(copy, path.c_str()) == R2NN_OK);
  r2nn_network* loaded = nullptr;
  REQUIRE(r2nn_network_load(path.c_str(), &loaded) == R2NN_OK);
  double dt = 0.0;
  REQUIRE(r2nn_network_max_stable_dt(loaded, &dt) == R2NN_OK);
  CHECK(dt > 0.0);
  CHECK(r2nn_network_load("/nonexistent/net.json", &loaded) == R2NN_IO);
  fs::remove(path);

  for (auto* p : {net, copy, scaled, q, loaded}) r2nn_network_free(p);
}

TEST_CASE("simulate and classify") {
  r2nn_network* net = nullptr;
  REQUIRE(r2nn_network_standard(1.307e-11, 3.53e-11, 1e6, 1e6, &net) == R2NN_OK);
  r2nn_signal* pulse = nullptr;
  REQUIRE(r2nn_signal_pulse(30.0, 0.1, 1.0, 1.0, 2000.0, 0.5, 0.0, &pulse) == R2NN_OK);
  r2nn_trajectory* traj = nullptr;
  REQUIRE(r2nn_simulate(net, pulse, 1e-6, 0.0, &traj) == R2NN_OK);
  size_t steps = 0, ch = 0;
  double dt = 0.0;
  REQUIRE(r2nn_trajectory_shape(traj, &steps, &ch, &dt) == R2NN_OK);
  CHECK(steps == 2000);
  CHECK(ch == 3);
  CHECK(dt == doctest::Approx(1.0 / 2000.0));
  std::vector<double> energy(ch);
  REQUIRE(r2nn_trajectory_energies(traj, energy.data()) == R2NN_OK);
  std::vector<double> probs(ch);
  size_t label = 99;
  REQUIRE(r2nn_classify(energy.data(), ch, probs.data(), &label) == R2NN_OK);
  CHECK(label < 3);
  CHECK(probs[0] + probs[1] + probs[2] == doctest::Approx(1.0));
  std::vector<uint8_t> flags(ch * steps);
  CHECK(r2nn_trajectory_comparator(traj, 0.05, 0.1, 0.0, flags.data()) == R2NN_OK);

  const double zeros[3] = {0, 0, 0};
  CHECK(r2nn_classify(zeros, 3, probs.data(), &label) == R2NN_UNDECIDABLE);

  r2nn_signal* fast = nullptr;
  REQUIRE(r2nn_signal_sweep(1.0, 10.0, 0.1, 50.0, &fast) == R2NN_OK);
  r2nn_trajectory* bad = nullptr;
  CHECK(r2nn_simulate(net, fast, 1e-6, 0.0, &bad) == R2NN_UNSTABLE);

  r2nn_trajectory_free(traj);
  r2nn_signal_free(pulse);
  r2nn_signal_free(fast);
  r2nn_network_free(net);
}

TEST_CASE("signals") {
  const double xs[4] = {0.0, 1.0, 0.0, -1.0};
  r2nn_signal* s = nullptr;
  REQUIRE(r2nn_signal_create(100.0, xs, 4, &s) == R2NN_OK);
  r2nn_signal* n1 = nullptr;
  r2nn_signal* n2 = nullptr;
  REQUIRE(r2nn_signal_add_noise(s, 10.0, 3, &n1) == R2NN_OK);
  REQUIRE(r2nn_signal_add_noise(s, 10.0, 3, &n2) == R2NN_OK);
  const double* a = nullptr;
  const double* b = nullptr;
  REQUIRE(r2nn_signal_samples(n1, &a) == R2NN_OK);
  REQUIRE(r2nn_signal_samples(n2, &b) == R2NN_OK);
  CHECK(std::equal(a, a + 4, b));
  const auto path = (fs::temp_directory_path() / "r2nn_capi_sig.csv").string();
  REQUIRE(r2nn_signal_save_csv(s, path.c_str()) == R2NN_OK);
  r2nn_signal* back = nullptr;
  REQUIRE(r2nn_signal_load_csv(path.c_str(), 100.0, &back) == R2NN_OK);
  double rate = 0.0;
  size_t n = 0;
  REQUIRE(r2nn_signal_info(back, &rate, &n) == R2NN_OK);
  CHECK(n == 4);
  CHECK(r2nn_signal_create(0.0, xs, 4, &s) == R2NN_INVALID_PARAMETER);
  fs::remove(path);
  for (auto* p : {s, n1, n2, back}) r2nn_signal_free(p);
}

TEST_CASE("frequency domain") {
  r2nn_network* net = nullptr;
  REQUIRE(r2nn_network_standard(1.307e-11, 3.53e-11, 1e6, 1e6, &net) == R2NN_OK);
  const std::vector<double> f{10.0, 20.0, 40.0};
  std::vector<double> mag(3 * f.size());
  std::vector<uint8_t> flags(f.size());
  REQUIRE(r2nn_transmission(net, f.data(), f.size(), 0.25, mag.data(), flags.data()) == R2NN_OK);
  for (size_t i = 0; i < f.size(); ++i) {
    if (!flags[i]) CHECK(mag[i] > 0.0);
  }
  char* out = nullptr;
  REQUIRE(r2nn_branch_currents(net, 33.0, &out) == R2NN_OK);
  CHECK(take(out).find("max_kcl_error") != std::string::npos);
  REQUIRE(r2nn_impedance_map(net, 33.0, &out) == R2NN_OK);
  CHECK(take(out).find("z_eff") != std::string::npos);
  double* freq = nullptr;
  double* h = nullptr;
  size_t n = 0;
  CHECK(r2nn_measure_transfer(net, "radio", 0, 0, 0, 0, 1e-6, &freq, &h, &n, nullptr) == R2NN_INVALID_ARGUMENT);
  int slow = 1;
  REQUIRE(r2nn_measure_transfer(net, nullptr, 20.0, 60.0, 8.0, 2000.0, 1e-6, &freq, &h, &n, &slow) == R2NN_OK);
  CHECK(slow == 0);
  r2nn_array_free(freq);
  r2nn_array_free(h);
  r2nn_network_free(net);
}

TEST_CASE("dataset, training and export") {
  const char* spec =
      R"({"classes":[{"center_hz":30,"count":3,"test_count":1},{"center_hz":50,"count":3,"test_count":1},)"
      R"({"center_hz":70,"count":3,"test_count":1}],"duration_s":0.25,"jitter_s":0.02})";
  r2nn_dataset* ds = nullptr;
  REQUIRE(r2nn_dataset_generate(spec, 5, &ds) == R2NN_OK);
  size_t tr = 0, te = 0, classes = 0;
  double rate = 0.0;
  REQUIRE(r2nn_dataset_info(ds, &tr, &te, &classes, &rate) == R2NN_OK);
  CHECK(tr == 9);
  CHECK(te == 3);
  CHECK(classes == 3);

  size_t epochs = 0;
  auto cb = [](size_t, double, double, double, const char* ck, void* user) {
    CHECK(ck != nullptr);
    ++*static_cast<size_t*>(user);
  };
  char* ck = nullptr;
  REQUIRE(r2nn_train(ds, nullptr, R"({"epochs":2,"batch_size":3})", nullptr, cb, &epochs, &ck) == R2NN_OK);
  CHECK(epochs == 2);
  CHECK(r2nn_train(ds, nullptr, R"({"epochs":0})", nullptr, nullptr, nullptr, &ck) == R2NN_INVALID_PARAMETER);

  r2nn_network* circuit = nullptr;
  r2nn_network* quant = nullptr;
  char* report = nullptr;
  REQUIRE(r2nn_export_checkpoint(ck, nullptr, 1e6, "E96", ds, &circuit, &quant, &report) == R2NN_OK);
  CHECK(take(report).find("quantized_accuracy") != std::string::npos);
  r2nn_string_free(ck);
  r2nn_network_free(circuit);
  r2nn_network_free(quant);
  r2nn_dataset_free(ds);
}
