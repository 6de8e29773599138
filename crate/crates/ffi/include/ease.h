#ifndef EASE_H
#define EASE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum {
  EASE_STATUS_OK = 0,
  EASE_STATUS_NULL_POINTER = 1,
  EASE_STATUS_INVALID_ARGUMENT = 2,
  EASE_STATUS_CONFIG = 3,
  EASE_STATUS_BACKEND = 4,
  EASE_STATUS_DATASET = 5,
  EASE_STATUS_INTERNAL = 6,
  EASE_STATUS_PANIC = 7,
} EaseStatus;

typedef enum {
  EASE_JUDGEMENT_LOSE = -1,
  EASE_JUDGEMENT_TIE = 0,
  EASE_JUDGEMENT_WIN = 1,
} EaseJudgement;

// Values accepted by `ease_aggregate`'s `strategy` argument.
typedef enum {
  EASE_STRATEGY_MAJORITY_VOTE = 0,
  EASE_STRATEGY_SOFT_AGGREGATE = 1,
  EASE_STRATEGY_WEIGHTED_SOFT = 2,
  EASE_STRATEGY_WEIGHTED_HARD_VOTE = 3,
  EASE_STRATEGY_HARD_ARGMAX_VOTE = 4,
} EaseStrategy;

// Label set plus the candidates pushed so far.
typedef struct EaseCandidateSet EaseCandidateSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy of the calling thread's last error message, or NULL if the last
// call succeeded. Free it with `ease_string_free`.
char *ease_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void ease_string_free(char *s);

// Creates an empty candidate set over `n_labels` label names, which double
// as verbalizers.
//
// # Safety
// `labels` must point to `n_labels` NUL-terminated strings; `out` must be
// writable.
EaseStatus ease_candidate_set_new(const char *const *labels,
                                  size_t n_labels,
                                  EaseCandidateSet **out);

// # Safety
// `set` must be NULL or a handle from `ease_candidate_set_new` not yet freed.
void ease_candidate_set_free(EaseCandidateSet *set);

// Adds one candidate.
//
// `prediction` is a label index, or -1 for an unparseable sample (which
// abstains from hard votes). `probs` is NULL or `n_labels` probabilities
// summing to one; an unparseable candidate without `probs` gets a uniform
// distribution. `weight` must lie in [0, 1].
//
// # Safety
// `set` must be a live handle; `probs` NULL or readable for `n_labels` doubles.
EaseStatus ease_candidate_set_push(EaseCandidateSet *set,
                                   int64_t prediction,
                                   const double *probs,
                                   double weight);

// # Safety
// `set` must be a live handle; `out` writable.
EaseStatus ease_candidate_set_len(const EaseCandidateSet *set, size_t *out);

// Aggregates the set with an `EaseStrategy` value.
//
// Writes the winning label index to `out_label`. `out_mass` (NULL or room
// for `n_labels` doubles) receives the per-label mass and `out_tie` (NULL
// allowed) whether the winner was chosen by the first-label tie rule.
//
// # Safety
// Pointers must be NULL where allowed or valid for the sizes above.
EaseStatus ease_aggregate(const EaseCandidateSet *set,
                          uint32_t strategy,
                          size_t *out_label,
                          double *out_mass,
                          bool *out_tie);

// Share of parseable candidates with a distribution whose sampled label
// differs from that distribution's argmax.
//
// # Safety
// `set` must be a live handle; `out` writable.
EaseStatus ease_inconsistency_ratio(const EaseCandidateSet *set, double *out);

// Softmax of `n` finite logprobs into `out`.
//
// # Safety
// `logprobs` readable and `out` writable for `n` doubles.
EaseStatus ease_normalize_logprobs(const double *logprobs, size_t n, double *out);

// Win/tie/lose agreement between rater counts and model scores for a pair
// of explanations.
//
// # Safety
// `out` must be writable.
EaseStatus ease_human_judge(uint32_t c1, uint32_t c2, double s1, double s2, EaseJudgement *out);

// Runs one experiment from a TOML config (the keys the `ease` CLI reads
// with `--config`) and returns the report as JSON in `out_json`.
//
// # Safety
// `config_toml` must be a NUL-terminated string; `out_json` writable.
EaseStatus ease_run_config(const char *config_toml, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EASE_H */
