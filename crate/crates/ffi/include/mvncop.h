#ifndef MVNCOP_H
#define MVNCOP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MvncStatus {
  MVNC_STATUS_OK = 0,
  MVNC_STATUS_NULL_POINTER = 1,
  MVNC_STATUS_INVALID_ARGUMENT = 2,
  MVNC_STATUS_DIMENSION_MISMATCH = 3,
  MVNC_STATUS_PARSE = 4,
  MVNC_STATUS_ISOLATED_NODE = 5,
  MVNC_STATUS_NOT_POSITIVE_DEFINITE = 6,
  MVNC_STATUS_NUMERICAL = 7,
  MVNC_STATUS_NOT_CONVERGED = 8,
  MVNC_STATUS_IO = 9,
  MVNC_STATUS_PANIC = 10,
} MvncStatus;

/*
 Area data set.
 */
typedef struct MvncDataset MvncDataset;

/*
 Fitted model.
 */
typedef struct MvncFit MvncFit;

/*
 Neighbourhood graph.
 */
typedef struct MvncGraph MvncGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread; empty after a success. The
 pointer stays valid until the next library call on this thread.
 */
const char *mvnc_last_error(void);

/*
 Standard normal cdf.
 */
double mvnc_std_normal_cdf(double x);

/*
 Standard normal quantile; `p` must lie in `[0, 1]`.

 # Safety
 `out` must be a valid pointer.
 */
enum MvncStatus mvnc_std_normal_quantile(double p, double *out);

/*
 RQMC probability of `lower < Z < upper` for `Z ~ N(0, R)`, with `R` a
 `d×d` row-major correlation matrix. `points` or `shifts` of 0 select the
 defaults.

 # Safety
 `lower` and `upper` must hold `d` values, `corr` `d*d`; `prob` and
 `error` must be valid pointers.
 */
enum MvncStatus mvnc_rect_rqmc(size_t d,
                               const double *lower,
                               const double *upper,
                               const double *corr,
                               size_t points,
                               size_t shifts,
                               uint64_t seed,
                               double *prob,
                               double *error);

/*
 Probability of `lower < Z < upper` under the exchangeable correlation
 `rho` in `[0, 1)`.

 # Safety
 `lower` and `upper` must hold `d` values; `prob` must be valid.
 */
enum MvncStatus mvnc_rect_exchangeable(size_t d,
                                       const double *lower,
                                       const double *upper,
                                       double rho,
                                       double *prob);

/*
 Parses node (`id,x,y`) and edge (`id_a,id_b`) CSV text.

 # Safety
 Strings must be NUL-terminated; `out` must be valid.
 */
enum MvncStatus mvnc_graph_parse(const char *nodes_csv,
                                 const char *edges_csv,
                                 struct MvncGraph **out);

/*
 Number of nodes, or 0 for a null handle.

 # Safety
 `graph` must be null or a live handle.
 */
size_t mvnc_graph_node_count(const struct MvncGraph *graph);

/*
 # Safety
 `graph` must be null or a handle not yet freed.
 */
void mvnc_graph_free(struct MvncGraph *graph);

/*
 Parses area data CSV (`node,y[,offset],x1..xp`) for `family`. `d` of 0
 infers the number of nodes from the first block; a nonzero `intercept`
 prepends a column of ones.

 # Safety
 Strings must be NUL-terminated; `out` must be valid.
 */
enum MvncStatus mvnc_dataset_parse(const char *csv,
                                   size_t d,
                                   const char *family,
                                   int32_t intercept,
                                   struct MvncDataset **out);

/*
 Observations (`n`) and units per observation (`d`).

 # Safety
 `data` must be a live handle; `n` and `d` valid pointers.
 */
enum MvncStatus mvnc_dataset_shape(const struct MvncDataset *data, size_t *n, size_t *d);

/*
 # Safety
 `data` must be null or a handle not yet freed.
 */
void mvnc_dataset_free(struct MvncDataset *data);

/*
 Fits a copula model. A null `graph` selects the exchangeable structure,
 otherwise CAR. `link` may be null for the family default. `method` is
 `dt`, `sl` or `exact`; `seed`, `points` and `shifts` apply to `sl`
 (0 selects default sizes). When the optimizer does not converge the
 handle is still returned together with `MVNC_STATUS_NOT_CONVERGED`.

 # Safety
 Handles must be live or null as documented; strings NUL-terminated;
 `out` valid.
 */
enum MvncStatus mvnc_fit(const struct MvncDataset *data,
                         const struct MvncGraph *graph,
                         const char *family,
                         const char *link,
                         const char *method,
                         uint64_t seed,
                         size_t points,
                         size_t shifts,
                         struct MvncFit **out);

/*
 Number of estimated parameters, or 0 for a null handle.

 # Safety
 `fit` must be null or a live handle.
 */
size_t mvnc_fit_parameter_count(const struct MvncFit *fit);

/*
 Estimate and standard error of parameter `k`; the SE is NaN when the
 Hessian was unusable.

 # Safety
 `fit` must be a live handle; `estimate` and `se` valid pointers.
 */
enum MvncStatus mvnc_fit_parameter(const struct MvncFit *fit,
                                   size_t k,
                                   double *estimate,
                                   double *se);

/*
 Maximized log-likelihood, or NaN for a null handle.

 # Safety
 `fit` must be null or a live handle.
 */
double mvnc_fit_loglik(const struct MvncFit *fit);

/*
 JSON report; release with [`mvnc_string_free`].

 # Safety
 `fit` must be a live handle; `out` valid.
 */
enum MvncStatus mvnc_fit_report_json(const struct MvncFit *fit, char **out);

/*
 # Safety
 `fit` must be null or a handle not yet freed.
 */
void mvnc_fit_free(struct MvncFit *fit);

/*
 # Safety
 `s` must be null or a string returned by this library and not yet freed.
 */
void mvnc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVNCOP_H */
