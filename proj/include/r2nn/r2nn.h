#ifndef R2NN_R2NN_H
#define R2NN_R2NN_H

/* C interface to the metacircuit recurrent network library.
 *
 * Every function returns an r2nn_status. On failure a message is available
 * from r2nn_last_error() until the next call on the same thread. Objects
 * are opaque handles released with their *_free function; strings returned
 * through char** are released with r2nn_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define R2NN_API __declspec(dllexport)
#else
#define R2NN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum r2nn_status {
  R2NN_OK = 0,
  R2NN_INVALID_ARGUMENT = 1,
  R2NN_INVALID_PARAMETER = 2,
  R2NN_TOPOLOGY = 3,
  R2NN_POLE = 4,
  R2NN_NEAR_RESONANCE = 5,
  R2NN_UNSTABLE = 6,
  R2NN_NUMERIC = 7,
  R2NN_IO = 8,
  R2NN_PARSE = 9,
  R2NN_UNDECIDABLE = 10,
  R2NN_NYQUIST = 11,
  R2NN_RATE_MISMATCH = 12,
  R2NN_NON_UNIFORM = 13,
  R2NN_DIVERGED = 14,
  R2NN_EXISTS = 15,
  R2NN_INTERNAL = 99
} r2nn_status;

typedef struct r2nn_network r2nn_network;
typedef struct r2nn_signal r2nn_signal;
typedef struct r2nn_dataset r2nn_dataset;
typedef struct r2nn_trajectory r2nn_trajectory;

R2NN_API const char* r2nn_last_error(void);
R2NN_API const char* r2nn_status_name(r2nn_status status);
R2NN_API void r2nn_string_free(char* s);
R2NN_API const char* r2nn_version(void);

/* Default worker count for training, classification and sweeps (>= 1). */
R2NN_API r2nn_status r2nn_set_threads(unsigned threads);

/* ---- unit cell ---------------------------------------------------------- */

R2NN_API r2nn_status r2nn_cell_resonances(double D_M, double D_m, double R_n, double* f0_hz, double* f1_hz);
/* Effective FDNR, effective impedance, amplification factor and transfer
 * function of one cell at freq_hz. Fails with R2NN_POLE at a pole. */
R2NN_API r2nn_status r2nn_cell_response(double D_M, double D_m, double R_n, double freq_hz, double* d_eff,
                                        double* z_eff, double* beta, double* h);

/* ---- networks ----------------------------------------------------------- */

/* 5x5 lattice, corners grounded, uniform values. */
R2NN_API r2nn_status r2nn_network_standard(double D_M, double D_m, double R_n, double R_c, r2nn_network** out);
R2NN_API r2nn_status r2nn_network_load(const char* path, r2nn_network** out);
R2NN_API r2nn_status r2nn_network_from_json(const char* json, r2nn_network** out);
R2NN_API r2nn_status r2nn_network_save(const r2nn_network* net, const char* path);
R2NN_API r2nn_status r2nn_network_to_json(const r2nn_network* net, char** out);
R2NN_API void r2nn_network_free(r2nn_network* net);

R2NN_API r2nn_status r2nn_network_info(const r2nn_network* net, size_t* rows, size_t* cols, size_t* outputs,
                                       size_t* dofs);
R2NN_API r2nn_status r2nn_network_max_stable_dt(const r2nn_network* net, double* dt);
/* Writes up to cap eigenfrequencies (Hz, ascending); *count gets the total. */
R2NN_API r2nn_status r2nn_network_eigenfrequencies(const r2nn_network* net, double* out_hz, size_t cap,
                                                   size_t* count);
/* Same mechanical system realized with scaling factor s. */
R2NN_API r2nn_status r2nn_network_rescale(const r2nn_network* net, double s, r2nn_network** out);
/* series: "E24" or "E96". report receives a JSON quantization report. */
R2NN_API r2nn_status r2nn_network_quantize(const r2nn_network* net, const char* series, r2nn_network** out,
                                           char** report);
/* CSV header: ref,kind,value,unit,node_a,node_b */
R2NN_API r2nn_status r2nn_network_components_csv(const r2nn_network* net, char** out);

/* ---- signals ------------------------------------------------------------ */

R2NN_API r2nn_status r2nn_signal_create(double rate_hz, const double* samples, size_t n, r2nn_signal** out);
/* rate_hz <= 0 requires a time column. */
R2NN_API r2nn_status r2nn_signal_load_csv(const char* path, double rate_hz, r2nn_signal** out);
R2NN_API r2nn_status r2nn_signal_save_csv(const r2nn_signal* sig, const char* path);
R2NN_API r2nn_status r2nn_signal_pulse(double center_hz, double sigma_s, double amplitude, double duration_s,
                                       double rate_hz, double t_center, double phase, r2nn_signal** out);
R2NN_API r2nn_status r2nn_signal_sweep(double f_start, double f_end, double duration_s, double rate_hz,
                                       r2nn_signal** out);
/* snr_db = INFINITY copies the signal. */
R2NN_API r2nn_status r2nn_signal_add_noise(const r2nn_signal* sig, double snr_db, uint64_t seed,
                                           r2nn_signal** out);
R2NN_API r2nn_status r2nn_signal_info(const r2nn_signal* sig, double* rate_hz, size_t* n);
/* Pointer valid until the signal is freed. */
R2NN_API r2nn_status r2nn_signal_samples(const r2nn_signal* sig, const double** samples);
R2NN_API void r2nn_signal_free(r2nn_signal* sig);

/* ---- time-domain simulation -------------------------------------------- */

/* Drives the input node with i(t) = g_m * signal(t) at dt = 1 / rate and
 * records the output voltages. */
R2NN_API r2nn_status r2nn_simulate(const r2nn_network* net, const r2nn_signal* sig, double g_m, double damping,
                                   r2nn_trajectory** out);
R2NN_API r2nn_status r2nn_trajectory_shape(const r2nn_trajectory* traj, size_t* steps, size_t* channels,
                                           double* dt);
/* Row-major steps x channels; row t holds the state after input sample t. */
R2NN_API r2nn_status r2nn_trajectory_data(const r2nn_trajectory* traj, const double** data);
/* out has room for `channels` values: sum_t v^2 dt per output. */
R2NN_API r2nn_status r2nn_trajectory_energies(const r2nn_trajectory* traj, double* out);
/* out has room for channels * steps flags, channel-major. */
R2NN_API r2nn_status r2nn_trajectory_comparator(const r2nn_trajectory* traj, double tau_s, double hysteresis,
                                                double threshold_v, uint8_t* out);
R2NN_API void r2nn_trajectory_free(r2nn_trajectory* traj);

/* L1-normalized probabilities and argmax; R2NN_UNDECIDABLE when all zero. */
R2NN_API r2nn_status r2nn_classify(const double* energies, size_t n, double* probabilities, size_t* label);

/* ---- frequency domain --------------------------------------------------- */

/* mag is outputs x n row-major (V/A, NaN when flagged); flags has n entries,
 * 1 = inside an eigenfrequency guard band. */
R2NN_API r2nn_status r2nn_transmission(const r2nn_network* net, const double* freq_hz, size_t n, double guard_hz,
                                       double* mag, uint8_t* flags);
/* Swept-sine measurement. preset: "pulse", "speech", "drone" or NULL for
 * the explicit range. Results are allocated by the library: *freq_hz holds
 * *n frame frequencies and *mag outputs x *n values; free both with
 * r2nn_array_free. *slow_enough (optional) is 0 when the sweep outran the
 * rate guidance of 1 Hz per 10 periods. */
R2NN_API r2nn_status r2nn_measure_transfer(const r2nn_network* net, const char* preset, double f_start,
                                           double f_end, double duration_s, double rate_hz, double g_m,
                                           double** freq_hz, double** mag, size_t* n, int* slow_enough);
R2NN_API void r2nn_array_free(double* a);
/* JSON array of {cell,row,col,z_eff,flag} for non-grounded cells. */
R2NN_API r2nn_status r2nn_impedance_map(const r2nn_network* net, double freq_hz, char** out);
/* JSON {freq_hz, couplings:[{a,b,current,phase}], cells:[{cell,total,...}],
 * max_kcl_error} for a unit current injected at the input. */
R2NN_API r2nn_status r2nn_branch_currents(const r2nn_network* net, double freq_hz, char** out);

/* ---- datasets and training --------------------------------------------- */

/* spec_json may be NULL for the default three-class set. */
R2NN_API r2nn_status r2nn_dataset_generate(const char* spec_json, uint64_t seed, r2nn_dataset** out);
R2NN_API r2nn_status r2nn_dataset_save(const r2nn_dataset* ds, const char* dir, int force);
R2NN_API r2nn_status r2nn_dataset_load(const char* manifest_or_dir, r2nn_dataset** out);
R2NN_API r2nn_status r2nn_dataset_info(const r2nn_dataset* ds, size_t* train, size_t* test, size_t* classes,
                                       double* rate_hz);
R2NN_API void r2nn_dataset_free(r2nn_dataset* ds);

typedef void (*r2nn_epoch_callback)(size_t epoch, double loss, double train_acc, double val_acc,
                                    const char* checkpoint_json, void* user);

/* lattice_json: NULL for the standard lattice. config_json: training
 * options (NULL for defaults). resume_json: a checkpoint or NULL. On
 * success *checkpoint receives the final checkpoint. */
R2NN_API r2nn_status r2nn_train(const r2nn_dataset* ds, const char* lattice_json, const char* config_json,
                                const char* resume_json, r2nn_epoch_callback callback, void* user,
                                char** checkpoint);

/* Converts a checkpoint's stiffnesses to circuit values with the resistance
 * geometric mean at r_target, quantizes to `series`, and evaluates both on
 * the held-out split of ds (which may be NULL). report receives JSON with
 * the quantization report and both accuracies. */
R2NN_API r2nn_status r2nn_export_checkpoint(const char* checkpoint_json, const char* lattice_json,
                                            double r_target, const char* series, const r2nn_dataset* ds,
                                            r2nn_network** circuit, r2nn_network** quantized, char** report);

#ifdef __cplusplus
}
#endif

#endif /* R2NN_R2NN_H */
