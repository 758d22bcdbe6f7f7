#include <math.h>
#include <stdio.h>
#include <string.h>
#include "flywheel.h"

static int check(int ok, const char *what) {
    if (!ok) {
        fprintf(stderr, "failed: %s (%s)\n", what, fw_last_error());
        return 1;
    }
    return 0;
}

int main(void) {
    int bad = 0;
    double loss = 0.0;
    bad += check(fw_simpo_loss(3, -1.5, 7, -10.5, 2.0, 1.6, &loss) == FW_STATUS_OK, "loss status");
    bad += check(fabs(loss - log1p(exp(-0.4))) < 1e-12, "loss value");
    bad += check(fw_simpo_loss(0, -1.0, 1, -1.0, 2.0, 1.6, &loss) == FW_STATUS_INVALID_ARGUMENT, "empty length");
    bad += check(strlen(fw_last_error()) > 0, "error message");

    char *q = NULL, *s = NULL;
    const char *raw = "<question>\nHi?\n</question>\n<solution>\nHello.\n</solution>";
    bad += check(fw_parse_generated_qa(raw, &q, &s) == FW_STATUS_OK, "parse");
    bad += check(q && strcmp(q, "Hi?") == 0 && s && strcmp(s, "Hello.") == 0, "parsed fields");
    fw_string_free(q);
    fw_string_free(s);

    FwPolicy *policy = NULL;
    FwDataset *data = NULL;
    bad += check(fw_policy_new(3, FW_CONTEXT_UNIGRAM, &policy) == FW_STATUS_OK, "policy");
    bad += check(fw_dataset_new(&data) == FW_STATUS_OK, "dataset");
    uint32_t chosen[] = {0, 0, 1};
    uint32_t rejected[] = {2, 2};
    bad += check(fw_dataset_push(data, NULL, 0, chosen, 3, rejected, 2) == FW_STATUS_OK, "push");
    double l0 = 0.0, l1 = 0.0;
    bad += check(fw_policy_train(policy, data, 2.0, 1.6, 1.0, 50, &l0, &l1) == FW_STATUS_OK, "train");
    bad += check(l1 < l0, "loss decreased");
    fw_dataset_free(data);
    fw_policy_free(policy);

    if (bad == 0) printf("ok\n");
    return bad;
}
