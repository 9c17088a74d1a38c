#ifndef SPECTATOR_H
#define SPECTATOR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpectatorStatus {
  SPECTATOR_STATUS_OK = 0,
  SPECTATOR_STATUS_NULL_POINTER = 1,
  SPECTATOR_STATUS_INVALID_PARAMETER = 2,
  SPECTATOR_STATUS_CONFIG = 3,
  SPECTATOR_STATUS_IMPOSSIBLE_OUTCOME = 4,
  SPECTATOR_STATUS_CORRUPTED_STATE = 5,
  SPECTATOR_STATUS_COVERAGE = 6,
  SPECTATOR_STATUS_FIT_FAILURE = 7,
  SPECTATOR_STATUS_RESOURCE_LIMIT = 8,
  SPECTATOR_STATUS_IO = 9,
  SPECTATOR_STATUS_INVALID_UTF8 = 10,
  SPECTATOR_STATUS_PANIC = 11,
} SpectatorStatus;

typedef enum SpectatorRole {
  SPECTATOR_ROLE_MEMORY = 0,
  SPECTATOR_ROLE_SPECTATOR = 1,
  SPECTATOR_ROLE_IDLE = 2,
} SpectatorRole;

typedef enum SpectatorMemoryState {
  SPECTATOR_MEMORY_STATE_PLUS_X = 0,
  SPECTATOR_MEMORY_STATE_PLUS_Y = 1,
  SPECTATOR_MEMORY_STATE_ZERO = 2,
} SpectatorMemoryState;

typedef enum SpectatorReadoutPolicy {
  SPECTATOR_READOUT_POLICY_PERPENDICULAR = 0,
  SPECTATOR_READOUT_POLICY_ARGMAX = 1,
} SpectatorReadoutPolicy;

typedef enum SpectatorProtocolKind {
  // `k` is ignored.
  SPECTATOR_PROTOCOL_KIND_NONE = 0,
  SPECTATOR_PROTOCOL_KIND_MEASUREMENT_BASED = 1,
  SPECTATOR_PROTOCOL_KIND_GATE_BASED = 2,
} SpectatorProtocolKind;

typedef struct SpectatorCurve SpectatorCurve;

typedef struct SpectatorPhaseGrid SpectatorPhaseGrid;

typedef struct SpectatorRegister SpectatorRegister;

typedef struct SpectatorSimulator SpectatorSimulator;

// Sequence, readout and protocol settings for a simulator.
typedef struct SpectatorSimOptions {
  double omega_l_khz;
  double t_e_us;
  double t_i_us;
  double tau_d_ns;
  double alpha_re;
  double alpha_im;
  bool echo_at_half;
  uint64_t seed;
  // Readout confusion `f_tr = P(report r | true t)`, outcome 0 = bright.
  double f00;
  double f01;
  double f10;
  double f11;
  bool spinflip_dephases;
  bool feedforward;
  bool gate_echo_idle;
  enum SpectatorMemoryState memory_state;
  enum SpectatorReadoutPolicy policy;
  size_t grid_points;
} SpectatorSimOptions;

typedef struct SpectatorEnsembleResult {
  double mean[3];
  double stderr[3];
  double bvl;
  double stderr_bvl;
  double fidelity;
  size_t n_traj;
  size_t forced;
} SpectatorEnsembleResult;

typedef struct SpectatorPhaseStats {
  double sharpness;
  double holevo_variance;
  // NaN when the distribution is too flat for a mean.
  double circular_mean;
} SpectatorPhaseStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length.
size_t spectator_last_error(char *buf, size_t len);

// Static NUL-terminated version string.
const char *spectator_version(void);

enum SpectatorStatus spectator_fidelity_one_spectator(double g, double sigma, double *out);

// Gate wait maximizing the memory BVL after `n_rea` attempts, in µs.
enum SpectatorStatus spectator_optimal_rephasing_time_us(double a_par_te,
                                                         double g,
                                                         uint64_t n_rea,
                                                         double a_par_mem_khz,
                                                         double *out);

enum SpectatorStatus spectator_register_new(struct SpectatorRegister **out);

// C0 memory with C1 and C2 spectators.
enum SpectatorStatus spectator_register_fixture(struct SpectatorRegister **out);

enum SpectatorStatus spectator_register_add(struct SpectatorRegister *reg,
                                            const char *label,
                                            double a_par_khz,
                                            double a_perp_khz,
                                            enum SpectatorRole role);

size_t spectator_register_len(const struct SpectatorRegister *reg);

void spectator_register_free(struct SpectatorRegister *reg);

// Library defaults, including the calibrated echo time.
enum SpectatorStatus spectator_sim_options_default(struct SpectatorSimOptions *out);

// Validates the register and options; the register handle stays owned by
// the caller.
enum SpectatorStatus spectator_simulator_new(const struct SpectatorRegister *reg,
                                             const struct SpectatorSimOptions *opts,
                                             struct SpectatorSimulator **out);

// Seeded ensemble of `n_traj` trajectories after `n_rea` attempts.
enum SpectatorStatus spectator_ensemble_run(const struct SpectatorSimulator *sim,
                                            uint64_t n_rea,
                                            enum SpectatorProtocolKind kind,
                                            size_t k,
                                            size_t n_traj,
                                            struct SpectatorEnsembleResult *out);

void spectator_simulator_free(struct SpectatorSimulator *sim);

enum SpectatorStatus spectator_phase_gaussian(double sigma,
                                              double mean,
                                              size_t n_points,
                                              struct SpectatorPhaseGrid **out);

// Posterior after reading a spectator of relative coupling `g` at basis
// angle `theta` with result `outcome` (0 or 1). `out_probability` may be
// null.
enum SpectatorStatus spectator_phase_update(const struct SpectatorPhaseGrid *prior,
                                            double g,
                                            double theta,
                                            uint8_t outcome,
                                            struct SpectatorPhaseGrid **out,
                                            double *out_probability);

enum SpectatorStatus spectator_phase_stats(const struct SpectatorPhaseGrid *grid,
                                           struct SpectatorPhaseStats *out);

// Readout angle chosen by `policy` for a spectator of coupling `g`.
enum SpectatorStatus spectator_phase_readout_angle(const struct SpectatorPhaseGrid *grid,
                                                   double g,
                                                   enum SpectatorReadoutPolicy policy_kind,
                                                   double *out);

// Syndrome-averaged `(mean σ, F_avg)` over `m` sequential spectators.
enum SpectatorStatus spectator_syndrome_average(const struct SpectatorPhaseGrid *prior,
                                                const double *g_list,
                                                size_t m,
                                                enum SpectatorReadoutPolicy policy_kind,
                                                double *out_mean_sigma,
                                                double *out_f_avg);

void spectator_phase_free(struct SpectatorPhaseGrid *grid);

// Curve through `len` points; `stderr` may be null.
enum SpectatorStatus spectator_curve_new(const uint64_t *n_rea,
                                         const double *fidelity,
                                         const double *stderr,
                                         size_t len,
                                         struct SpectatorCurve **out);

// Built-in fitted gate-based curve for `k` ∈ {0, 1, 2}.
enum SpectatorStatus spectator_curve_reference(size_t k, struct SpectatorCurve **out);

// Success-probability-weighted fidelity `F̄(p)`.
enum SpectatorStatus spectator_expected_fidelity(const struct SpectatorCurve *curve,
                                                 double p,
                                                 double tail_eps,
                                                 double *out);

void spectator_curve_free(struct SpectatorCurve *curve);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECTATOR_H */
