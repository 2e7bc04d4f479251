#ifndef NISHILAB_H
#define NISHILAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Study selection for `nl_run_config`.
typedef enum NlCommand {
  NL_COMMAND_RUN = 0,
  NL_COMMAND_VERIFY = 1,
  NL_COMMAND_SCALING = 2,
  NL_COMMAND_PHASE_PROXY = 3,
} NlCommand;

// Outcome of a call. `NL_STATUS_OK` is zero.
typedef enum NlStatus {
  NL_STATUS_OK = 0,
  NL_STATUS_NULL_POINTER = 1,
  NL_STATUS_INVALID_ARGUMENT = 2,
  NL_STATUS_INVALID_CONFIG = 3,
  NL_STATUS_CAPACITY = 4,
  NL_STATUS_OFF_NISHIMORI = 5,
  NL_STATUS_UNSUPPORTED = 6,
  NL_STATUS_IO = 7,
  NL_STATUS_PANIC = 8,
} NlStatus;

// One draw of the couplings of a model.
typedef struct NlDisorder NlDisorder;

// Exact Gibbs state of one realization at one temperature.
typedef struct NlExact NlExact;

// A lattice with its coupling families and parameters.
typedef struct NlModel NlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string.
const char *nl_version(void);

// Copy of the last error message on this thread, or NULL. Release with
// `nl_string_free`.
char *nl_last_error_message(void);

void nl_string_free(char *s);

// Builds a model from the JSON of a config `model` block.
enum NlStatus nl_model_from_json(const char *json, struct NlModel **out);

void nl_model_free(struct NlModel *model);

enum NlStatus nl_model_num_sites(const struct NlModel *model, size_t *out);

enum NlStatus nl_model_beta(const struct NlModel *model, double *out);

// Common `mu_p / delta_p^2` of the random species.
enum NlStatus nl_model_nishimori_beta(const struct NlModel *model, double *out);

// `|B_p|`, the number of ranges of the family with exponent `p`.
enum NlStatus nl_model_family_size(const struct NlModel *model, size_t p, size_t *out);

// Realization `index` of the stream `seed`; identical across platforms.
enum NlStatus nl_disorder_sample(const struct NlModel *model,
                                 uint64_t seed,
                                 uint64_t index,
                                 struct NlDisorder **out);

void nl_disorder_free(struct NlDisorder *disorder);

// `H(sigma, J)` for `len == num_sites` spins of value +1 or -1.
enum NlStatus nl_hamiltonian(const struct NlModel *model,
                             const struct NlDisorder *disorder,
                             const int8_t *spins,
                             size_t len,
                             double *out);

// Enumerates the Gibbs state; fails with `NL_STATUS_CAPACITY` on large systems.
enum NlStatus nl_exact_new(const struct NlModel *model,
                           const struct NlDisorder *disorder,
                           double beta,
                           struct NlExact **out);

void nl_exact_free(struct NlExact *exact);

enum NlStatus nl_exact_log_partition(const struct NlExact *exact, double *out);

enum NlStatus nl_exact_mean_energy(const struct NlExact *exact, double *out);

// `<sigma_X>` for the site set `X = sites[0..len]`.
enum NlStatus nl_exact_correlation(const struct NlExact *exact,
                                   const size_t *sites,
                                   size_t len,
                                   double *out);

// Runs a study from config JSON and writes its artifacts. `out_dir` may be
// NULL to use the config's directory. `failed` receives the number of
// failed checks; the call itself succeeds when the study ran.
enum NlStatus nl_run_config(const char *config_json,
                            enum NlCommand command,
                            const char *out_dir,
                            size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NISHILAB_H */
