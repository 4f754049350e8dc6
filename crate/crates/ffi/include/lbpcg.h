#ifndef LBPCG_H
#define LBPCG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// PDC decision for one play.
typedef enum LbpcgDecision {
  LBPCG_DECISION_NEGATIVE = 0,
  LBPCG_DECISION_POSITIVE = 1,
  LBPCG_DECISION_REJECTED = 2,
} LbpcgDecision;

// Result code of every fallible call.
typedef enum LbpcgStatus {
  LBPCG_STATUS_OK = 0,
  LBPCG_STATUS_NULL_POINTER = 1,
  LBPCG_STATUS_INVALID_ARGUMENT = 2,
  LBPCG_STATUS_DEGENERATE_DATA = 3,
  LBPCG_STATUS_IO = 4,
  LBPCG_STATUS_BAD_ARTIFACT = 5,
  LBPCG_STATUS_BUFFER_TOO_SMALL = 6,
  LBPCG_STATUS_PANIC = 7,
  LBPCG_STATUS_INTERNAL = 8,
} LbpcgStatus;

// Trained preference ensemble.
typedef struct LbpcgEnsemble LbpcgEnsemble;

// Fitted Crowd-EM model: consensus, reliabilities and popularity regressor.
typedef struct LbpcgGpe LbpcgGpe;

// Content schema (dimension cardinalities).
typedef struct LbpcgSchema LbpcgSchema;

// Binary survey answers over a list of beta games.
typedef struct LbpcgSurveys LbpcgSurveys;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread ("" after a success).
// The pointer stays valid until the next lbpcg call on the same thread.
const char *lbpcg_last_error(void);

// Library version as a static NUL-terminated string.
const char *lbpcg_version(void);

// The nine-dimension default schema (116,640 games).
enum LbpcgStatus lbpcg_schema_default(struct LbpcgSchema **out);

// Schema with the given per-dimension cardinalities.
enum LbpcgStatus lbpcg_schema_new(const uint32_t *cardinalities,
                                  size_t len,
                                  struct LbpcgSchema **out);

void lbpcg_schema_free(struct LbpcgSchema *schema);

// Number of dimensions (0 for a null handle).
size_t lbpcg_schema_dimensions(const struct LbpcgSchema *schema);

enum LbpcgStatus lbpcg_schema_space_size(const struct LbpcgSchema *schema, uint64_t *out);

// Mixed-radix id of a game given as `len` dimension values.
enum LbpcgStatus lbpcg_schema_game_id(const struct LbpcgSchema *schema,
                                      const uint32_t *values,
                                      size_t len,
                                      uint64_t *out);

// Inverse of [`lbpcg_schema_game_id`]; `out` must hold one value per dimension.
enum LbpcgStatus lbpcg_schema_vector_at(const struct LbpcgSchema *schema,
                                        uint64_t id,
                                        uint32_t *out,
                                        size_t len);

// Survey matrix over `n_games` beta games stored row-major in `games`
// (`n_games * dimensions` values). Entry `i` says player `players_of[i]`
// answered `answers[i]` (0/1) for game `games_of[i]`.
enum LbpcgStatus lbpcg_surveys_new(const struct LbpcgSchema *schema,
                                   const uint32_t *games,
                                   size_t n_games,
                                   size_t n_players,
                                   const size_t *games_of,
                                   const size_t *players_of,
                                   const uint8_t *answers,
                                   size_t n_entries,
                                   struct LbpcgSurveys **out);

void lbpcg_surveys_free(struct LbpcgSurveys *surveys);

// Run Crowd-EM. A `max_epochs` of 0 or a non-positive `tol` selects the
// library default; `refit` is 0/1.
enum LbpcgStatus lbpcg_gpe_fit(const struct LbpcgSchema *schema,
                               const struct LbpcgSurveys *surveys,
                               size_t max_epochs,
                               double tol,
                               uint8_t refit,
                               struct LbpcgGpe **out);

void lbpcg_gpe_free(struct LbpcgGpe *model);

size_t lbpcg_gpe_game_count(const struct LbpcgGpe *model);

size_t lbpcg_gpe_player_count(const struct LbpcgGpe *model);

// 1 if EM met its tolerance, 0 otherwise (or for a null handle).
uint8_t lbpcg_gpe_converged(const struct LbpcgGpe *model);

// Consensus γ per beta game; `out` holds at least `game_count` values.
enum LbpcgStatus lbpcg_gpe_gamma(const struct LbpcgGpe *model, double *out, size_t len);

// Sensitivity α per player.
enum LbpcgStatus lbpcg_gpe_alpha(const struct LbpcgGpe *model, double *out, size_t len);

// Specificity β per player.
enum LbpcgStatus lbpcg_gpe_beta(const struct LbpcgGpe *model, double *out, size_t len);

// Predicted popularity of any game of the model's schema.
enum LbpcgStatus lbpcg_gpe_predict(const struct LbpcgGpe *model,
                                   const uint32_t *values,
                                   size_t len,
                                   double *out);

// Load a `ensemble.art` written by the pipeline.
enum LbpcgStatus lbpcg_ensemble_load(const char *path, struct LbpcgEnsemble **out);

void lbpcg_ensemble_free(struct LbpcgEnsemble *ensemble);

// Expected play-log length (0 for a null handle).
size_t lbpcg_ensemble_playlog_width(const struct LbpcgEnsemble *ensemble);

// Override the decision thresholds θ_c and θ_r.
enum LbpcgStatus lbpcg_ensemble_set_thresholds(struct LbpcgEnsemble *ensemble,
                                               double theta_c,
                                               double theta_r);

// Score one play-log for a game of difficulty `category`. Either output
// pointer may be null if that value is not wanted.
enum LbpcgStatus lbpcg_ensemble_predict(const struct LbpcgEnsemble *ensemble,
                                        const double *playlog,
                                        size_t len,
                                        size_t category,
                                        double *score,
                                        enum LbpcgDecision *decision);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LBPCG_H */
