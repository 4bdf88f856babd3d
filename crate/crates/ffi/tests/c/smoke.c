#include <stdio.h>
#include <string.h>
#include "bioid.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "failed: %s (line %d)\n", #cond, __LINE__); return 1; } } while (0)

int main(void) {
    BioidCluster *cluster = NULL;
    BioidWallet *wallet = NULL;
    BioidAuthResult res;
    char did[128];
    size_t needed = 0;
    uint64_t height = 0;

    CHECK(bioid_cluster_new("c-smoke", 3, 0, 1000, &cluster) == BIOID_STATUS_OK);
    CHECK(bioid_wallet_create("c-user", &wallet) == BIOID_STATUS_OK);
    CHECK(bioid_wallet_did(wallet, did, sizeof did, &needed) == BIOID_STATUS_OK);
    CHECK(strncmp(did, "did:ciph:", 9) == 0);
    CHECK(bioid_enroll(cluster, wallet, "c-issuer", 1000) == BIOID_STATUS_OK);
    CHECK(bioid_authenticate(cluster, wallet, false, 1, 2000, &res) == BIOID_STATUS_OK);
    CHECK(res.accepted && res.accept_votes == 3 && res.quorum == 2);
    CHECK(bioid_revoke(cluster, wallet, 0, 3000, &height) == BIOID_STATUS_OK);
    CHECK(height == 1);
    CHECK(bioid_authenticate(cluster, wallet, false, 2, 4000, &res) == BIOID_STATUS_OK);
    CHECK(!res.accepted);
    CHECK(bioid_cluster_new(NULL, 3, 0, 0, &cluster) == BIOID_STATUS_NULL_ARGUMENT);
    bioid_wallet_free(wallet);
    bioid_cluster_free(cluster);
    printf("ok\n");
    return 0;
}
