#ifndef COOPMEC_H
#define COOPMEC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CoopmecStatus {
  COOPMEC_STATUS_OK = 0,
  COOPMEC_STATUS_NULL_POINTER = 1,
  COOPMEC_STATUS_INVALID_CONFIG = 2,
  COOPMEC_STATUS_OUT_OF_RANGE = 3,
  COOPMEC_STATUS_INFEASIBLE = 4,
  COOPMEC_STATUS_CASE_MISMATCH = 5,
  // Bisection, barrier or objective evaluation failure.
  COOPMEC_STATUS_NUMERICAL = 6,
  COOPMEC_STATUS_PARSE = 7,
  COOPMEC_STATUS_IO = 8,
  COOPMEC_STATUS_BUFFER_TOO_SMALL = 9,
  COOPMEC_STATUS_PANIC = 10,
} CoopmecStatus;

typedef enum CoopmecCase {
  // Case I if the BS capacity is infinite, else Case II.
  COOPMEC_CASE_AUTO = 0,
  COOPMEC_CASE_ABUNDANT = 1,
  COOPMEC_CASE_FINITE = 2,
} CoopmecCase;

typedef enum CoopmecMethod {
  COOPMEC_METHOD_OPTIMIZED = 0,
  COOPMEC_METHOD_EQUAL_BANDWIDTH = 1,
  COOPMEC_METHOD_EQUAL_TIME = 2,
  COOPMEC_METHOD_ALL_OFFLOAD = 3,
  COOPMEC_METHOD_ALL_LOCAL = 4,
} CoopmecMethod;

// Normalized channel gains of one realization.
typedef struct CoopmecChannel CoopmecChannel;

// System parameters.
typedef struct CoopmecConfig CoopmecConfig;

// Result of a solve.
typedef struct CoopmecReport CoopmecReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to fit) and returns its full length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t coopmec_last_error(char *buf, size_t len);

// Reference parameters for `n_users` users.
//
// # Safety
// `out` must be a valid pointer to write the handle to.
enum CoopmecStatus coopmec_config_reference(size_t n_users, struct CoopmecConfig **out);

// Parses a TOML config document (same keys as the command-line tool).
//
// # Safety
// `text` must be a NUL-terminated string; `out` a valid pointer.
enum CoopmecStatus coopmec_config_from_toml(const char *text, struct CoopmecConfig **out);

// Sets the BS computation capacity in Hz; `INFINITY` selects Case I.
//
// # Safety
// `cfg` must be a live handle.
enum CoopmecStatus coopmec_config_set_bs_capacity(struct CoopmecConfig *cfg, double hz);

// Sets the system bandwidth in Hz.
//
// # Safety
// `cfg` must be a live handle.
enum CoopmecStatus coopmec_config_set_bandwidth(struct CoopmecConfig *cfg, double hz);

// Number of users, or 0 for a null handle.
//
// # Safety
// `cfg` must be null or a live handle.
size_t coopmec_config_n_users(const struct CoopmecConfig *cfg);

// # Safety
// `cfg` must be null or a handle not yet freed.
void coopmec_config_free(struct CoopmecConfig *cfg);

// Draws user distances uniformly in 5..50 m (relay at 30 m from the BS)
// and one fading realization, both from `seed`.
//
// # Safety
// `cfg` must be a live handle; `out` a valid pointer.
enum CoopmecStatus coopmec_channel_sample(const struct CoopmecConfig *cfg,
                                          uint64_t seed,
                                          bool fading,
                                          struct CoopmecChannel **out);

// Channel from normalized gains (Hz/W): `n` user-to-relay gains `h` and
// the relay-to-BS gain `g`.
//
// # Safety
// `h` must point to `n` readable doubles; `out` must be valid.
enum CoopmecStatus coopmec_channel_from_gains(const double *h,
                                              size_t n,
                                              double g,
                                              struct CoopmecChannel **out);

// # Safety
// `chan` must be null or a handle not yet freed.
void coopmec_channel_free(struct CoopmecChannel *chan);

// Minimizes the average power with `method` under `case`.
//
// # Safety
// `cfg` and `chan` must be live handles; `out` a valid pointer.
enum CoopmecStatus coopmec_solve(const struct CoopmecConfig *cfg,
                                 const struct CoopmecChannel *chan,
                                 enum CoopmecCase case_,
                                 enum CoopmecMethod method,
                                 struct CoopmecReport **out);

// Average power in W, or NaN for a null handle.
//
// # Safety
// `rep` must be null or a live handle.
double coopmec_report_avg_power(const struct CoopmecReport *rep);

// Writes `(t1, t2, t3, t4)` in seconds to `out[0..4]`.
//
// # Safety
// `rep` must be a live handle; `out` must have room for 4 doubles.
enum CoopmecStatus coopmec_report_times(const struct CoopmecReport *rep, double *out);

// Writes the offloading ratios to `out[0..N]`.
//
// # Safety
// `rep` must be a live handle; `out` must have room for `len` doubles.
enum CoopmecStatus coopmec_report_ratios(const struct CoopmecReport *rep, double *out, size_t len);

// Writes the bandwidth shares (Hz) to `out[0..N]`.
//
// # Safety
// `rep` must be a live handle; `out` must have room for `len` doubles.
enum CoopmecStatus coopmec_report_bandwidths(const struct CoopmecReport *rep,
                                             double *out,
                                             size_t len);

// Number of outer ratio updates and total inner iterations.
//
// # Safety
// `rep` must be a live handle; the out pointers must be valid.
enum CoopmecStatus coopmec_report_iterations(const struct CoopmecReport *rep,
                                             size_t *outer,
                                             size_t *inner);

// Optimality residual of the final iterate, or NaN for a null handle.
//
// # Safety
// `rep` must be null or a live handle.
double coopmec_report_kkt_residual(const struct CoopmecReport *rep);

// # Safety
// `rep` must be null or a handle not yet freed.
void coopmec_report_free(struct CoopmecReport *rep);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COOPMEC_H */
