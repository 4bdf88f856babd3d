#ifndef BIOID_H
#define BIOID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BioidStatus {
  BIOID_STATUS_OK = 0,
  BIOID_STATUS_NULL_ARGUMENT = 1,
  BIOID_STATUS_INVALID_UTF8 = 2,
  BIOID_STATUS_INVALID_INPUT = 3,
  BIOID_STATUS_REJECTED = 4,
  BIOID_STATUS_IO = 5,
  BIOID_STATUS_BUFFER_TOO_SMALL = 6,
  BIOID_STATUS_PANIC = 7,
} BioidStatus;

/**
 * A gateway and its verifier nodes in this process, over in-memory storage.
 */
typedef struct BioidCluster BioidCluster;

/**
 * A user's wallet: keys, protected template, and credential.
 */
typedef struct BioidWallet BioidWallet;

/**
 * Outcome of one authentication.
 */
typedef struct BioidAuthResult {
  bool accepted;
  size_t accept_votes;
  size_t quorum;
  size_t n_nodes;
} BioidAuthResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message on this thread into `buf`. Returns the size
 * needed including the NUL; nothing is written if `len` is too small.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t bioid_last_error(char *buf, size_t len);

/**
 * Create a wallet. A non-null `label` derives every key from it; null uses
 * OS randomness.
 *
 * # Safety
 * `label` must be null or a NUL-terminated string; `out` must be writable.
 */
enum BioidStatus bioid_wallet_create(const char *label, struct BioidWallet **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum BioidStatus bioid_wallet_load(const char *path, struct BioidWallet **out);

/**
 * # Safety
 * `wallet` must be a live handle; `path` a NUL-terminated string.
 */
enum BioidStatus bioid_wallet_save(const struct BioidWallet *wallet, const char *path);

/**
 * Write the wallet's DID as a NUL-terminated string.
 *
 * # Safety
 * `wallet` must be a live handle; `buf` null or `len` writable bytes;
 * `needed` null or writable.
 */
enum BioidStatus bioid_wallet_did(const struct BioidWallet *wallet,
                                  char *buf,
                                  size_t len,
                                  size_t *needed);

/**
 * # Safety
 * `wallet` must be null or a live handle.
 */
bool bioid_wallet_is_enrolled(const struct BioidWallet *wallet);

/**
 * # Safety
 * `wallet` must be null or a handle not yet freed.
 */
void bioid_wallet_free(struct BioidWallet *wallet);

/**
 * Start a gateway with `n_nodes` verifier nodes. `quorum` 0 selects a
 * strict majority.
 *
 * # Safety
 * `label` must be a NUL-terminated string; `out` must be writable.
 */
enum BioidStatus bioid_cluster_new(const char *label,
                                   size_t n_nodes,
                                   size_t quorum,
                                   uint64_t now_ms,
                                   struct BioidCluster **out);

/**
 * # Safety
 * `cluster` must be null or a handle not yet freed.
 */
void bioid_cluster_free(struct BioidCluster *cluster);

/**
 * Make node `index` stop answering, or bring it back.
 *
 * # Safety
 * `cluster` must be a live handle.
 */
enum BioidStatus bioid_cluster_set_offline(const struct BioidCluster *cluster,
                                           size_t index,
                                           bool offline);

/**
 * Issue a credential from the issuer derived from `issuer_label`, register
 * it, and store it in the wallet.
 *
 * # Safety
 * `cluster` and `wallet` must be live handles; `issuer_label` a
 * NUL-terminated string.
 */
enum BioidStatus bioid_enroll(const struct BioidCluster *cluster,
                              struct BioidWallet *wallet,
                              const char *issuer_label,
                              uint64_t now_ms);

/**
 * Capture a probe (of the owner, or of a stranger when `impostor`), prove
 * the match, and authenticate. A denial is `Ok` with `accepted == false`;
 * the reason is then the last error.
 *
 * # Safety
 * `cluster` and `wallet` must be live handles; `out` must be writable.
 */
enum BioidStatus bioid_authenticate(const struct BioidCluster *cluster,
                                    const struct BioidWallet *wallet,
                                    bool impostor,
                                    uint64_t sample_seed,
                                    uint64_t now_ms,
                                    struct BioidAuthResult *out);

/**
 * Revoke the wallet's credential, signed by its subject. `out_height`
 * receives the ledger height after the commit.
 *
 * # Safety
 * `cluster` and `wallet` must be live handles; `out_height` null or
 * writable.
 */
enum BioidStatus bioid_revoke(const struct BioidCluster *cluster,
                              const struct BioidWallet *wallet,
                              uint16_t reason,
                              uint64_t now_ms,
                              uint64_t *out_height);

/**
 * Check a line-delimited ledger export. `first_bad` receives -1 when the
 * chain is intact, else the first bad block index (`Rejected`).
 *
 * # Safety
 * `data` must point to `len` readable bytes; `first_bad` must be writable.
 */
enum BioidStatus bioid_verify_ledger(const uint8_t *data, size_t len, int64_t *first_bad);

/**
 * Check a line-delimited audit export. `first_bad` receives -1 when the
 * chain is intact, else the first bad sequence number (`Rejected`).
 *
 * # Safety
 * `data` must point to `len` readable bytes; `first_bad` must be writable.
 */
enum BioidStatus bioid_verify_audit_log(const uint8_t *data, size_t len, int64_t *first_bad);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIOID_H */
