#ifndef TOPICS_FFI_H
#define TOPICS_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TopicsStatus {
  TOPICS_STATUS_OK = 0,
  TOPICS_STATUS_NULL_POINTER = 1,
  TOPICS_STATUS_INVALID_ARGUMENT = 2,
  TOPICS_STATUS_PRECONDITION = 3,
  TOPICS_STATUS_PARSE = 4,
  TOPICS_STATUS_IO = 5,
  TOPICS_STATUS_NUMERIC = 6,
  TOPICS_STATUS_SNAPSHOT = 7,
  TOPICS_STATUS_BUFFER_TOO_SMALL = 8,
  TOPICS_STATUS_PANIC = 9,
} TopicsStatus;

/**
 * A training or test corpus.
 */
typedef struct TopicsCorpus TopicsCorpus;

/**
 * A trained model together with its hyperparameters.
 */
typedef struct TopicsModel TopicsModel;

/**
 * SCVB0 settings. `max_seconds ≤ 0` means no time limit.
 */
typedef struct TopicsScvb0Config {
  size_t topics;
  double alpha;
  double eta;
  double s_phi;
  double tau_phi;
  double kappa_phi;
  double s_theta;
  double tau_theta;
  double kappa_theta;
  size_t minibatch_docs;
  size_t burn_in_passes;
  size_t epochs;
  uint64_t seed;
  double max_seconds;
} TopicsScvb0Config;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or an empty string. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *topics_last_error(void);

/**
 * Reads a UCI bag-of-words corpus. Empty documents are dropped.
 *
 * # Safety
 * `docword` and `vocab` must be NUL-terminated strings; `out` must be
 * writable.
 */
enum TopicsStatus topics_corpus_load(const char *docword,
                                     const char *vocab,
                                     struct TopicsCorpus **out);

/**
 * Draws a corpus from the LDA generative process.
 *
 * # Safety
 * `out` must be writable.
 */
enum TopicsStatus topics_corpus_synth(size_t topics,
                                      size_t vocab_size,
                                      size_t docs,
                                      size_t mean_len,
                                      double alpha,
                                      double eta,
                                      uint64_t seed,
                                      struct TopicsCorpus **out);

/**
 * Splits off `n_test` random documents as a test corpus.
 *
 * # Safety
 * `corpus` must come from this library; both out pointers must be writable.
 */
enum TopicsStatus topics_corpus_holdout(const struct TopicsCorpus *corpus,
                                        size_t n_test,
                                        uint64_t seed,
                                        struct TopicsCorpus **train_out,
                                        struct TopicsCorpus **test_out);

/**
 * # Safety
 * `corpus` must come from this library and not be used afterwards.
 */
void topics_corpus_free(struct TopicsCorpus *corpus);

/**
 * # Safety
 * `corpus` must be null or come from this library.
 */
size_t topics_corpus_num_docs(const struct TopicsCorpus *corpus);

/**
 * # Safety
 * `corpus` must be null or come from this library.
 */
size_t topics_corpus_vocab_size(const struct TopicsCorpus *corpus);

/**
 * # Safety
 * `corpus` must be null or come from this library.
 */
size_t topics_corpus_num_tokens(const struct TopicsCorpus *corpus);

/**
 * Defaults: α = 0.1, η = 0.01, schedules (10, 1000, 0.9) and (1, 10, 0.9),
 * minibatches of 100, one burn-in pass, one epoch.
 */
struct TopicsScvb0Config topics_scvb0_config_default(size_t topics);

/**
 * Trains SCVB0 on `corpus`.
 *
 * # Safety
 * `corpus` and `config` must be valid; `out` must be writable.
 */
enum TopicsStatus topics_scvb0_train(const struct TopicsCorpus *corpus,
                                     const struct TopicsScvb0Config *config,
                                     struct TopicsModel **out);

/**
 * # Safety
 * `model` must be null or come from this library.
 */
size_t topics_model_num_topics(const struct TopicsModel *model);

/**
 * # Safety
 * `model` must be null or come from this library.
 */
size_t topics_model_vocab_size(const struct TopicsModel *model);

/**
 * Copies the K × W topic-word matrix, row-major, into `buf`, which must
 * hold at least K·W doubles.
 *
 * # Safety
 * `model` must be valid and `buf` must point to `len` writable doubles.
 */
enum TopicsStatus topics_model_phi(const struct TopicsModel *model, double *buf, size_t len);

/**
 * Writes the model as a binary snapshot.
 *
 * # Safety
 * `model` must be valid and `path` NUL-terminated.
 */
enum TopicsStatus topics_model_save(const struct TopicsModel *model, const char *path);

/**
 * Reads a snapshot written by any of the trainers.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum TopicsStatus topics_model_load(const char *path, struct TopicsModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void topics_model_free(struct TopicsModel *model);

/**
 * Per-token held-out log-likelihood of `test` under `model`, with each
 * document's proportions estimated from half of its tokens.
 *
 * # Safety
 * `model` and `test` must be valid; `out` must be writable.
 */
enum TopicsStatus topics_heldout_loglik(const struct TopicsModel *model,
                                        const struct TopicsCorpus *test,
                                        uint64_t seed,
                                        double *out);

/**
 * Checks a step-size schedule ρ_t = s/(τ+t)^κ. Violations are reported as
 * `TOPICS_STATUS_INVALID_ARGUMENT` with every violation in the message.
 */
enum TopicsStatus topics_validate_schedule(double s, double tau, double kappa);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOPICS_FFI_H */
