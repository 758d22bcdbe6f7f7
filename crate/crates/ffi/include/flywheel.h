#ifndef FLYWHEEL_H
#define FLYWHEEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FwStatus {
  FW_STATUS_OK = 0,
  FW_STATUS_NULL_POINTER = 1,
  FW_STATUS_INVALID_UTF8 = 2,
  FW_STATUS_INVALID_ARGUMENT = 3,
  FW_STATUS_PARSE_FAILED = 4,
  FW_STATUS_PANIC = 5,
} FwStatus;

typedef enum FwContext {
  FW_CONTEXT_BIGRAM = 0,
  FW_CONTEXT_UNIGRAM = 1,
} FwContext;

/**
 * Opaque collection of token-id preference pairs.
 */
typedef struct FwDataset FwDataset;

/**
 * Opaque toy policy.
 */
typedef struct FwPolicy FwPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *fw_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void fw_string_free(char *s);

/**
 * SimPO loss for a chosen/rejected pair given lengths and total
 * log-probabilities.
 *
 * # Safety
 * `out_loss` must be a valid pointer to a double.
 */
enum FwStatus fw_simpo_loss(uintptr_t chosen_len,
                            double chosen_logprob,
                            uintptr_t rejected_len,
                            double rejected_logprob,
                            double beta,
                            double gamma,
                            double *out_loss);

/**
 * Derivatives of the loss with respect to the chosen and rejected total
 * log-probabilities.
 *
 * # Safety
 * `out_d_chosen` and `out_d_rejected` must be valid pointers to doubles.
 */
enum FwStatus fw_simpo_grad(uintptr_t chosen_len,
                            double chosen_logprob,
                            uintptr_t rejected_len,
                            double rejected_logprob,
                            double beta,
                            double gamma,
                            double *out_d_chosen,
                            double *out_d_rejected);

/**
 * Share of characters covered by a 10-character window seen earlier in
 * the text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out_ratio` a valid pointer.
 */
enum FwStatus fw_repetition_ratio(const char *text, double *out_ratio);

/**
 * Renders the prompt-generation template for three keywords.
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out` a valid pointer. The result
 * must be released with `fw_string_free`.
 */
enum FwStatus fw_render_promptgen(const char *k1, const char *k2, const char *k3, char **out);

/**
 * Renders the answer-improvement template.
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out` a valid pointer. The result
 * must be released with `fw_string_free`.
 */
enum FwStatus fw_render_improver(const char *question, const char *answer, char **out);

/**
 * Renders the topic/intention classification template.
 *
 * # Safety
 * `prompt` must be a NUL-terminated string; `out` a valid pointer. The
 * result must be released with `fw_string_free`.
 */
enum FwStatus fw_render_topic_intent(const char *prompt, char **out);

/**
 * Extracts the question and solution from generator output.
 *
 * # Safety
 * `raw` must be a NUL-terminated string; both outputs valid pointers. On
 * success both strings must be released with `fw_string_free`.
 */
enum FwStatus fw_parse_generated_qa(const char *raw, char **out_question, char **out_solution);

/**
 * Creates a toy policy with all logits zero.
 *
 * # Safety
 * `out` must be a valid pointer. Release the handle with `fw_policy_free`.
 */
enum FwStatus fw_policy_new(uintptr_t vocab_size, enum FwContext context, struct FwPolicy **out);

/**
 * # Safety
 * `policy` must come from `fw_policy_new` and not have been freed.
 */
void fw_policy_free(struct FwPolicy *policy);

/**
 * Number of logits held by the policy.
 *
 * # Safety
 * `policy` must be a live handle or null.
 */
uintptr_t fw_policy_num_logits(const struct FwPolicy *policy);

/**
 * Total log-probability of `tokens` after `prompt`.
 *
 * # Safety
 * `policy` must be a live handle; token arrays must hold the stated number
 * of elements; `out_logprob` must be valid.
 */
enum FwStatus fw_policy_logprob(const struct FwPolicy *policy,
                                const uint32_t *prompt,
                                uintptr_t prompt_len,
                                const uint32_t *tokens,
                                uintptr_t tokens_len,
                                double *out_logprob);

/**
 * # Safety
 * `out` must be a valid pointer. Release with `fw_dataset_free`.
 */
enum FwStatus fw_dataset_new(struct FwDataset **out);

/**
 * # Safety
 * `dataset` must come from `fw_dataset_new` and not have been freed.
 */
void fw_dataset_free(struct FwDataset *dataset);

/**
 * Appends one preference pair of token ids.
 *
 * # Safety
 * `dataset` must be a live handle; each array must hold its stated length.
 */
enum FwStatus fw_dataset_push(struct FwDataset *dataset,
                              const uint32_t *prompt,
                              uintptr_t prompt_len,
                              const uint32_t *chosen,
                              uintptr_t chosen_len,
                              const uint32_t *rejected,
                              uintptr_t rejected_len);

/**
 * # Safety
 * `dataset` must be a live handle or null.
 */
uintptr_t fw_dataset_len(const struct FwDataset *dataset);

/**
 * Trains `policy` in place by full-batch gradient descent and reports the
 * loss before and after.
 *
 * # Safety
 * Handles must be live; output pointers valid or null.
 */
enum FwStatus fw_policy_train(struct FwPolicy *policy,
                              const struct FwDataset *dataset,
                              double beta,
                              double gamma,
                              double learning_rate,
                              uintptr_t steps,
                              double *out_initial_loss,
                              double *out_final_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLYWHEEL_H */
