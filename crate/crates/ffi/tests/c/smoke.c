#include <stdio.h>
#include "hrm_ffi.h"

#define CHECK(call)                                                   \
    do {                                                              \
        HrmStatus s_ = (call);                                        \
        if (s_ != HRM_STATUS_OK) {                                    \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,         \
                    hrm_last_error() ? hrm_last_error() : "");        \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    HrmDataset *ds = NULL;
    HrmModel *model = NULL;
    size_t n = 0, d = 0;
    double theta[10], b = 0.0, mask[10], pred[1];
    double losses[3] = {1.0, 2.0, 3.0}, mean, sd, mx;

    CHECK(hrm_dataset_generate_selection_bias(1.9, 5, &ds));
    CHECK(hrm_dataset_shape(ds, &n, &d));
    if (n != 2000 || d != 10) return 2;
    CHECK(hrm_fit_hrm(ds, "{\"rounds\": 2}", 1, &model));
    CHECK(hrm_model_coefficients(model, theta, d, &b));
    CHECK(hrm_model_mask(model, mask, d));
    double row[10] = {0};
    CHECK(hrm_model_predict(model, row, 1, d, pred));
    if (pred[0] != b) return 3;
    CHECK(hrm_metrics(losses, 3, &mean, &sd, &mx));
    if (mean != 2.0 || sd != 1.0 || mx != 3.0) return 4;
    if (hrm_metrics(losses, 1, &mean, &sd, &mx) != HRM_STATUS_CONFIG) return 5;
    if (hrm_model_predict(NULL, row, 1, d, pred) != HRM_STATUS_NULL_POINTER) return 6;
    hrm_model_free(model);
    hrm_dataset_free(ds);
    printf("ok %s\n", hrm_version());
    return 0;
}
