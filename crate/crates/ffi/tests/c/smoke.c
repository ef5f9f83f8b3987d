#include <stdio.h>
#include <string.h>
#include "deepgrow.h"

#define CHECK(call)                                                     \
    do {                                                                \
        DgStatus s_ = (call);                                           \
        if (s_ != DG_STATUS_OK) {                                       \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, dg_last_error()); \
            return 1;                                                   \
        }                                                               \
    } while (0)

int main(void) {
    const char *cfg =
        "{\"family\":\"tiny_transformer\",\"depth\":1,\"width\":32,\"vocab\":16,\"context\":8}";
    DgModel *small = NULL, *big = NULL;
    uint64_t n_small = 0, n_big = 0, flops = 0;
    size_t inputs[8], targets[8];
    double before = 0.0, after = 0.0, mass = 0.0;
    for (size_t i = 0; i < 8; i++) {
        inputs[i] = (i * 5 + 1) % 16;
        targets[i] = (i * 3 + 2) % 16;
    }
    CHECK(dg_model_new(cfg, DG_PRECISION_F64, &small));
    CHECK(dg_model_expand(small, 4, "copying_zero_last_linear", 0, &big));
    CHECK(dg_model_param_count(small, &n_small));
    CHECK(dg_model_param_count(big, &n_big));
    CHECK(dg_model_loss_tokens(small, inputs, targets, 1, 8, &before));
    CHECK(dg_model_loss_tokens(big, inputs, targets, 1, 8, &after));
    CHECK(dg_staged_flops(8, 100, 80, n_small, n_big, &flops));
    CHECK(dg_schedule_mass(DG_SCHEDULE_COSINE, 0.01, 0.02, 0.1, 10000, 8000, &mass));
    if (dg_model_expand(small, 0, "random", 0, &big) != DG_STATUS_EXPANSION || strlen(dg_last_error()) == 0) {
        fprintf(stderr, "expected an expansion error\n");
        return 1;
    }
    printf("n_small=%llu n_big=%llu before=%.12f after=%.12f flops=%llu mass=%.4f\n",
           (unsigned long long)n_small, (unsigned long long)n_big, before, after,
           (unsigned long long)flops, mass);
    dg_model_free(big);
    dg_model_free(small);
    return before == after ? 0 : 1;
}
