#include <math.h>
#include <stdio.h>
#include <string.h>

#include "excess_deaths.h"

int main(void) {
    ExdModel1 r;
    if (exd_model1(1000, 100, 400, 30, 0.05, &r) != EXD_STATUS_OK) {
        fprintf(stderr, "model1 failed: %s\n", exd_last_error());
        return 1;
    }
    if (!(r.ci_rho_lo < r.rho_mle && r.rho_mle < r.ci_rho_hi)) {
        fprintf(stderr, "interval does not contain the estimate\n");
        return 1;
    }
    if (exd_model1(10, 0, 5, 3, 0.05, &r) != EXD_STATUS_INVALID_ARGUMENT || exd_last_error() == NULL) {
        fprintf(stderr, "zero-day window not rejected\n");
        return 1;
    }
    if (exd_model1(10, 10, 5, 3, 0.05, NULL) != EXD_STATUS_NULL_POINTER) {
        fprintf(stderr, "null output not rejected\n");
        return 1;
    }
    double rate;
    if (exd_mortality_rate(82, 3337177.0, &rate) != EXD_STATUS_OK || fabs(rate - 8.968) > 1e-3) {
        fprintf(stderr, "rate %f\n", rate);
        return 1;
    }
    ExdModel2 *m = NULL;
    if (exd_model2_fit_files("/nonexistent.csv", "/nonexistent.csv", NULL, "2017-09-20",
                             EXD_EXTRAPOLATION_NONE, &m) != EXD_STATUS_INPUT || m != NULL) {
        fprintf(stderr, "missing file not reported\n");
        return 1;
    }
    exd_model2_free(NULL);
    printf("ok %s\n", exd_version());
    return 0;
}
