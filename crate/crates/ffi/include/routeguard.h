#ifndef ROUTEGUARD_H
#define ROUTEGUARD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/* Group index marking a link outside every group. */
#define RG_UNSENSED SIZE_MAX



/*
 Status codes returned by every fallible function.
 */
typedef enum RgStatus {
  RG_STATUS_OK = 0,
  RG_STATUS_NULL_POINTER = 1,
  RG_STATUS_INVALID_ARGUMENT = 2,
  RG_STATUS_PARSE_ERROR = 3,
  RG_STATUS_VALIDATION_ERROR = 4,
  RG_STATUS_DIMENSION_MISMATCH = 5,
  RG_STATUS_INFEASIBLE = 6,
  RG_STATUS_NON_CONVEX = 7,
  RG_STATUS_EMPTY_PAIR_SET = 8,
  RG_STATUS_IO_ERROR = 9,
  RG_STATUS_PANIC = 10,
  RG_STATUS_INTERNAL = 11,
} RgStatus;

/*
 Opaque list of attack types.
 */
typedef struct RgAttackSet RgAttackSet;

/*
 Opaque network handle.
 */
typedef struct RgNetwork RgNetwork;

/*
 Opaque partition handle.
 */
typedef struct RgPartition RgPartition;

/*
 Solver settings; `rg_solver_defaults` fills recommended values.
 */
typedef struct RgSolverOptions {
  double tol;
  size_t max_iter;
  /*
   Continue on negative curvature instead of failing.
   */
  bool tolerate_nonconvex;
} RgSolverOptions;

/*
 Routing result written by the solver entry points.
 */
typedef struct RgSolveInfo {
  double objective;
  double gap;
  size_t iterations;
  bool converged;
  bool nonconvex;
} RgSolveInfo;

/*
 Allocation summary written by [`rg_solve_lexicographic`].
 */
typedef struct RgAllocationInfo {
  double alpha;
  double avg;
  double cost;
} RgAllocationInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the calling thread's last error message into `buf` (truncated and
 NUL-terminated) and returns the full message length in bytes, excluding
 the terminator.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t rg_last_error_message(char *buf, size_t len);

/*
 Parses TNTP network and trips tables given as NUL-terminated strings.

 # Safety
 Both strings must be valid NUL-terminated strings; `out` must be writable.
 */
enum RgStatus rg_network_parse_tntp(const char *net_text,
                                    const char *trips_text,
                                    struct RgNetwork **out);

/*
 Parses TNTP network and trips files.

 # Safety
 Both paths must be valid NUL-terminated strings; `out` must be writable.
 */
enum RgStatus rg_network_load_tntp(const char *net_path,
                                   const char *trips_path,
                                   struct RgNetwork **out);

/*
 # Safety
 `net` must be null or a handle from this library not yet freed.
 */
void rg_network_free(struct RgNetwork *net);

/*
 Writes node, link, OD-pair and route counts; any output may be null.

 # Safety
 `net` must be a live handle; non-null outputs must be writable.
 */
enum RgStatus rg_network_dims(const struct RgNetwork *net,
                              size_t *num_nodes,
                              size_t *num_links,
                              size_t *num_od,
                              size_t *num_routes);

/*
 Link capacities into `out[0..len]`, `len` equal to the link count.

 # Safety
 `net` must be a live handle and `out` must hold `len` doubles.
 */
enum RgStatus rg_network_capacities(const struct RgNetwork *net, double *out, size_t len);

/*
 Replaces the routes with the `k` free-flow shortest loop-free paths per
 OD pair. `short_od` (nullable) receives the number of OD pairs with
 fewer than `k` paths.

 # Safety
 `net` must be a live handle; `short_od` null or writable.
 */
enum RgStatus rg_network_generate_routes(struct RgNetwork *net, size_t k, size_t *short_od);

/*
 Builds a partition from a per-link group index (`RG_UNSENSED` for links
 in no group) and per-group costs.

 # Safety
 `group_of_link` must hold `num_links` entries and `costs` `num_groups`.
 */
enum RgStatus rg_partition_new(const size_t *group_of_link,
                               size_t num_links,
                               const double *costs,
                               size_t num_groups,
                               struct RgPartition **out);

/*
 # Safety
 `p` must be null or a live handle.
 */
void rg_partition_free(struct RgPartition *p);

/*
 One zone attack type per group: mean `mean_scale * c` on the group's
 links, deviation `rel_std * c` everywhere.

 # Safety
 `partition` must be live; `capacity` must hold `len` doubles.
 */
enum RgStatus rg_attack_zone_types(const struct RgPartition *partition,
                                   const double *capacity,
                                   size_t len,
                                   double mean_scale,
                                   double rel_std,
                                   struct RgAttackSet **out);

/*
 Builds a set of `num_types` types over `num_links` links from row-major
 `num_types x num_links` mean and deviation arrays.

 # Safety
 `mu` and `sigma` must each hold `num_types * num_links` doubles.
 */
enum RgStatus rg_attack_set_new(const double *mu,
                                const double *sigma,
                                size_t num_types,
                                size_t num_links,
                                struct RgAttackSet **out);

/*
 # Safety
 `set` must be null or a live handle.
 */
void rg_attack_set_free(struct RgAttackSet *set);

/*
 Number of types in the set (0 for a null handle).

 # Safety
 `set` must be null or a live handle.
 */
size_t rg_attack_set_len(const struct RgAttackSet *set);

/*
 Copies the mean and deviation vectors of type `index`.

 # Safety
 `set` must be live; `mu` and `sigma` must each hold `len` doubles.
 */
enum RgStatus rg_attack_set_get(const struct RgAttackSet *set,
                                size_t index,
                                double *mu,
                                double *sigma,
                                size_t len);

struct RgSolverOptions rg_solver_defaults(void);

/*
 Minimum-cost routing with known ambient flow `f` (length = link count).
 Route flows go to `z` (length = route count).

 # Safety
 Handles must be live, arrays sized as stated, `info` null or writable.
 */
enum RgStatus rg_system_optimal(const struct RgNetwork *net,
                                const double *f,
                                size_t f_len,
                                const struct RgSolverOptions *opts,
                                double *z,
                                size_t z_len,
                                struct RgSolveInfo *info);

/*
 Best response to type `type_index` of `set` given reported flow `f_hat`.

 # Safety
 Handles must be live, arrays sized as stated, `info` null or writable.
 */
enum RgStatus rg_best_response(const struct RgNetwork *net,
                               const struct RgAttackSet *set,
                               size_t type_index,
                               const double *f_hat,
                               size_t f_len,
                               const struct RgSolverOptions *opts,
                               double *z,
                               size_t z_len,
                               struct RgSolveInfo *info);

double rg_bpr_cost(double y, double f, double b, double w, double c);

double rg_expected_link_cost(double y, double b, double w, double c, double mu_tilde, double sigma);

/*
 Coefficients of `y^1..y^5` of `y * psi(y)` into `out[0..5]`.

 # Safety
 `out` must hold 5 doubles.
 */
enum RgStatus rg_poly_coefficients(double b,
                                   double w,
                                   double c,
                                   double mu_tilde,
                                   double sigma,
                                   double *out);

/*
 Exact lexicographic allocation for a row-major `n_p x n_g` matrix `m`,
 group costs `q` (length `n_g`) and budget `gamma`. `x` receives 0/1 per
 group.

 # Safety
 `m` must hold `n_p * n_g` doubles, `q` and `x` `n_g` entries each.
 */
enum RgStatus rg_solve_lexicographic(const double *m,
                                     size_t n_p,
                                     size_t n_g,
                                     const double *q,
                                     double gamma,
                                     uint8_t *x,
                                     struct RgAllocationInfo *info);

/*
 Type weights from attack values `obs` seen on the sorted link ids
 `sensed` (both of length `n_s`). `omega` must hold one entry per type.

 # Safety
 `set` must be live; arrays sized as stated.
 */
enum RgStatus rg_likelihood_weights(const struct RgAttackSet *set,
                                    const size_t *sensed,
                                    const double *obs,
                                    size_t n_s,
                                    double *omega,
                                    size_t n_a);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROUTEGUARD_H */
