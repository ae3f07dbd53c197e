/* C interface to the vlshot toolkit's pure-computation pieces.
 *
 * Hand-maintained to match crates/vlshot-capi/src/lib.rs; the compiled
 * smoke test in crates/vlshot-capi/tests/c_smoke.rs keeps the two honest.
 *
 * Conventions:
 *   - Handles are opaque; create/free in matched pairs. Freeing NULL is a
 *     no-op.
 *   - Fallible functions return a vlshot_status; out-pointers are written
 *     only on VLSHOT_OK.
 *   - After a failure, vlshot_last_error_message() describes it. The
 *     pointer is valid until the next failing call on the same thread and
 *     must not be freed.
 *   - Strings returned through out-pointers belong to the caller; release
 *     them with vlshot_string_free.
 */

#ifndef VLSHOT_H
#define VLSHOT_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vlshot_status {
  VLSHOT_OK = 0,
  VLSHOT_NULL_ARGUMENT = 1,
  VLSHOT_INVALID_UTF8 = 2,
  VLSHOT_IO = 3,
  VLSHOT_MALFORMED = 4,
  /* The question matches no conversion rule. */
  VLSHOT_UNSUPPORTED = 5,
  /* The question parses but has no answer slot (yes/no shapes). */
  VLSHOT_NO_MASK_SLOT = 6,
  VLSHOT_INVALID_ARGUMENT = 7,
  VLSHOT_INTERNAL = 8,
} vlshot_status;

typedef struct vlshot_taxonomy vlshot_taxonomy;
typedef struct vlshot_parse_provider vlshot_parse_provider;

/* Library version as a static string; never freed. */
const char *vlshot_version(void);

/* Message of the most recent failure on this thread, or NULL if nothing
 * has failed yet. Do not free. */
const char *vlshot_last_error_message(void);

/* Release a string returned through an out-pointer. */
void vlshot_string_free(char *s);

/* --- Question-type taxonomy ------------------------------------------- */

/* The canonical 65-type taxonomy shipped with the library. */
vlshot_status vlshot_taxonomy_builtin(vlshot_taxonomy **out);

/* Load a taxonomy from a file of one question-type prefix per line. */
vlshot_status vlshot_taxonomy_load(const char *path, vlshot_taxonomy **out);

/* Number of question types; 0 for NULL. */
size_t vlshot_taxonomy_len(const vlshot_taxonomy *taxonomy);

/* Classify a question into its longest-prefix question type (the fallback
 * type when nothing matches). *out_type is caller-owned. */
vlshot_status vlshot_taxonomy_classify(const vlshot_taxonomy *taxonomy,
                                       const char *question, char **out_type);

void vlshot_taxonomy_free(vlshot_taxonomy *taxonomy);

/* --- Parse-based statement conversion --------------------------------- */

/* Load pre-parsed questions (CoNLL-U) for statement conversion. */
vlshot_status vlshot_parse_provider_load(const char *path,
                                         vlshot_parse_provider **out);

/* Convert a question to its masked declarative statement (the answer slot
 * written as "[mask]") using the provider's parse. Yes/no questions have
 * no slot and fail with VLSHOT_NO_MASK_SLOT; shapes no rule covers fail
 * with VLSHOT_UNSUPPORTED. *out_statement is caller-owned. */
vlshot_status vlshot_question_to_statement(const vlshot_parse_provider *provider,
                                           const char *question,
                                           char **out_statement);

void vlshot_parse_provider_free(vlshot_parse_provider *provider);

/* --- Scoring, fusion, selection --------------------------------------- */

/* Consensus VQA accuracy of a prediction against the annotator answers:
 * min(matches/3, 1) after normalization. `gold` holds n_gold strings. */
vlshot_status vlshot_vqa_score(const char *prediction,
                               const char *const *gold, size_t n_gold,
                               double *out_score);

/* Fuse two dim-wide embeddings into the 5*dim relation vector
 * [v1, v2, v1+v2, v1-v2, v1*v2 elementwise]. `out` must hold 5*dim
 * doubles. */
vlshot_status vlshot_fuse(const double *v1, const double *v2, size_t dim,
                          double *out);

/* Indices of the k best scores, descending, ties to the lower index.
 * Writes min(k, n) indices into out_indices (which must hold k entries)
 * and the count into *out_len. NaN scores and k = 0 are rejected. */
vlshot_status vlshot_top_k(const double *scores, size_t n, size_t k,
                           size_t *out_indices, size_t *out_len);

#ifdef __cplusplus
}
#endif

#endif /* VLSHOT_H */
