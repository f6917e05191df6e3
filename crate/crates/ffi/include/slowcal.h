#ifndef SLOWCAL_H
#define SLOWCAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlowcalStatus {
  SLOWCAL_STATUS_OK = 0,
  SLOWCAL_STATUS_NULL_POINTER = 1,
  SLOWCAL_STATUS_INVALID_STRING = 2,
  SLOWCAL_STATUS_INVALID_ARGUMENT = 3,
  SLOWCAL_STATUS_NUMERICAL = 4,
  SLOWCAL_STATUS_BUFFER_TOO_SMALL = 5,
  SLOWCAL_STATUS_PANIC = 6,
} SlowcalStatus;

/*
 Quadratic ensemble with its computed constants.
 */
typedef struct SlowcalProblem SlowcalProblem;

/*
 Result of one run.
 */
typedef struct SlowcalTrajectory SlowcalTrajectory;

typedef struct SlowcalMetadata {
  double smoothness;
  double sigma;
  double gstar;
  double b0;
  double optimum_value;
} SlowcalMetadata;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *slowcal_last_error(void);

/*
 Builds a random quadratic ensemble started at the origin.
 `gstar < 0` leaves the heterogeneity unnormalized.

 # Safety
 `out` must be a valid pointer to writable storage.
 */
enum SlowcalStatus slowcal_quadratic_new(size_t dim,
                                         size_t machines,
                                         bool shared_curvature,
                                         double eig_min,
                                         double eig_max,
                                         double center_norm,
                                         double gstar,
                                         double sigma,
                                         uint64_t seed,
                                         struct SlowcalProblem **out);

/*
 # Safety
 `problem` must come from `slowcal_quadratic_new` and not be used afterwards.
 */
void slowcal_problem_free(struct SlowcalProblem *problem);

/*
 # Safety
 `problem` must be a live handle or null.
 */
size_t slowcal_problem_dim(const struct SlowcalProblem *problem);

/*
 # Safety
 `problem` must be a live handle and `out` writable.
 */
enum SlowcalStatus slowcal_problem_metadata(const struct SlowcalProblem *problem,
                                            struct SlowcalMetadata *out);

/*
 Runs `algorithm` (`minibatch`, `local`, `local-weighted`, `anytime`,
 `slowcal`) with weight schedule `schedule` (`uniform`, `linear`,
 `poly:<p>`).

 # Safety
 `problem` must be a live handle, the strings NUL-terminated and `out`
 writable.
 */
enum SlowcalStatus slowcal_run(const struct SlowcalProblem *problem,
                               const char *algorithm,
                               const char *schedule,
                               size_t machines,
                               size_t local_steps,
                               size_t rounds,
                               double eta,
                               uint64_t seed,
                               struct SlowcalTrajectory **out);

/*
 # Safety
 `trajectory` must come from `slowcal_run` and not be used afterwards.
 */
void slowcal_trajectory_free(struct SlowcalTrajectory *trajectory);

/*
 Excess loss of the last round; `+inf` for a null handle.

 # Safety
 `trajectory` must be a live handle or null.
 */
double slowcal_trajectory_final_excess_loss(const struct SlowcalTrajectory *trajectory);

/*
 # Safety
 `trajectory` must be a live handle or null.
 */
bool slowcal_trajectory_diverged(const struct SlowcalTrajectory *trajectory);

/*
 # Safety
 `trajectory` must be a live handle or null.
 */
size_t slowcal_trajectory_rounds(const struct SlowcalTrajectory *trajectory);

/*
 Copies the output point into `buf`, which must hold `dim` values.

 # Safety
 `trajectory` must be a live handle and `buf` valid for `len` writes.
 */
enum SlowcalStatus slowcal_trajectory_output(const struct SlowcalTrajectory *trajectory,
                                             double *buf,
                                             size_t len);

/*
 Theoretical step size for SLowcal-SGD with linear weights.

 # Safety
 `out` must be writable.
 */
enum SlowcalStatus slowcal_theoretical_lr(double smoothness,
                                          double sigma,
                                          double gstar,
                                          double b0,
                                          size_t machines,
                                          size_t local_steps,
                                          size_t rounds,
                                          double *out);

/*
 Rounds needed before `method` (`minibatch`, `accelerated-minibatch`,
 `local`, `slowcal`) reaches its optimal rate.

 # Safety
 `method` must be NUL-terminated and `out` writable.
 */
enum SlowcalStatus slowcal_rmin(const char *method,
                                size_t machines,
                                size_t local_steps,
                                double gstar,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLOWCAL_H */
