#ifndef INFOGAIN_H
#define INFOGAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IgSide {
  IG_SIDE_WINNER = 0,
  IG_SIDE_LOSER = 1,
} IgSide;

typedef enum IgStatus {
  IG_STATUS_OK = 0,
  IG_STATUS_NULL_POINTER = 1,
  IG_STATUS_INVALID_UTF8 = 2,
  IG_STATUS_INVALID_ARGUMENT = 3,
  IG_STATUS_SCHEMA = 4,
  IG_STATUS_PARSE = 5,
  IG_STATUS_BACKEND = 6,
  IG_STATUS_IO = 7,
  IG_STATUS_PANIC = 8,
} IgStatus;

/**
 * Opaque scripted agent bound to one world.
 */
typedef struct IgPolicy IgPolicy;

/**
 * Opaque simulated world.
 */
typedef struct IgWorld IgWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Free with
 * [`ig_string_free`].
 */
char *ig_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void ig_string_free(char *s);

/**
 * Gain `(m_curr - m_prev) * M / 2`.
 *
 * # Safety
 * `out_gain` must be a valid pointer.
 */
enum IgStatus ig_info_gain(double m_prev, double m_curr, size_t m, double *out_gain);

/**
 * # Safety
 * `out_reward` must be a valid pointer.
 */
enum IgStatus ig_score_reward(double g, double g_hat, size_t m, double *out_reward);

/**
 * # Safety
 * `counterparts` must point to `len` doubles; `out_reward` must be valid.
 */
enum IgStatus ig_comparison_reward(double g_hat,
                                   enum IgSide side,
                                   const double *counterparts,
                                   size_t len,
                                   double *out_reward);

/**
 * # Safety
 * `out_weight` must be a valid pointer.
 */
enum IgStatus ig_adaptive_weight(double g_plus, double g_minus, size_t m, double *out_weight);

double ig_combined_reward(double r_s, double r_c, double w);

/**
 * Reads the final `Score:` line of a scorer generation, clamped to
 * `[-M/2, M/2]`. `out_clamped` may be null.
 *
 * # Safety
 * `generation` must be a NUL-terminated string; `out_score` must be valid.
 */
enum IgStatus ig_parse_predicted_score(const char *generation,
                                       size_t m,
                                       double *out_score,
                                       bool *out_clamped);

/**
 * Index of the highest score; the first index wins ties and NaN never wins.
 *
 * # Safety
 * `scores` must point to `len` doubles; `out_index` must be valid.
 */
enum IgStatus ig_argmax_select(const double *scores, size_t len, size_t *out_index);

/**
 * Generates a world with default entity and noise counts.
 *
 * # Safety
 * `out_world` must be a valid pointer; the handle is freed with
 * [`ig_world_free`].
 */
enum IgStatus ig_world_generate(uint64_t seed,
                                size_t hop_depth,
                                size_t branching,
                                struct IgWorld **out_world);

/**
 * # Safety
 * `bundle` must be a NUL-terminated string; `out_world` must be valid.
 */
enum IgStatus ig_world_from_bundle(const char *bundle, struct IgWorld **out_world);

/**
 * # Safety
 * `world` must be a live handle; `out_bundle` must be valid.
 */
enum IgStatus ig_world_to_bundle(const struct IgWorld *world, char **out_bundle);

/**
 * Task record of the world as JSON.
 *
 * # Safety
 * `world` must be a live handle; `out_json` must be valid.
 */
enum IgStatus ig_world_task_json(const struct IgWorld *world, char **out_json);

/**
 * Default step horizon of the world.
 *
 * # Safety
 * `world` must be null or a live handle.
 */
size_t ig_world_default_budget(const struct IgWorld *world);

/**
 * # Safety
 * `world` must be null or a handle from this library, freed once.
 */
void ig_world_free(struct IgWorld *world);

/**
 * Scripted agent for `world`. The policy does not borrow the world.
 *
 * # Safety
 * `world` must be a live handle; `out_policy` must be valid.
 */
enum IgStatus ig_policy_scripted(const struct IgWorld *world,
                                 double guess_prob,
                                 struct IgPolicy **out_policy);

/**
 * # Safety
 * `policy` must be null or a handle from this library, freed once.
 */
void ig_policy_free(struct IgPolicy *policy);

/**
 * Exact probability that the agent answers correctly from `prefix_json`
 * (null for the empty prefix) within `budget` total steps (0 for the
 * world's default horizon).
 *
 * # Safety
 * Handles must be live; `prefix_json` null or NUL-terminated; `out_prob`
 * valid.
 */
enum IgStatus ig_exact_success_prob(const struct IgWorld *world,
                                    const struct IgPolicy *policy,
                                    const char *prefix_json,
                                    size_t budget,
                                    double *out_prob);

/**
 * One extractive summary update `h_t` from the query, the previous summary
 * (null for the empty base case), the previous tool response (nullable) and
 * the new step. Summaries and steps are JSON.
 *
 * # Safety
 * String arguments must be null where allowed or NUL-terminated;
 * `out_summary_json` must be valid.
 */
enum IgStatus ig_summary_update(size_t bound,
                                const char *query,
                                const char *prev_summary_json,
                                const char *prev_response,
                                const char *step_json,
                                char **out_summary_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INFOGAIN_H */
