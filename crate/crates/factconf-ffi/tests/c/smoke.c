#include <stdio.h>
#include "factconf.h"

int main(void) {
    FcPanel *panel = NULL;
    if (fc_panel_simulate("linear-fixed", 3, &panel) != FC_STATUS_OK) {
        fprintf(stderr, "simulate: %s\n", fc_last_error());
        return 1;
    }
    FcConfig cfg = fc_config_default();
    cfg.rank = 3;
    FcEstimate *est = NULL;
    if (fc_estimate(panel, &cfg, &est) != FC_STATUS_OK) {
        fprintf(stderr, "estimate: %s\n", fc_last_error());
        return 1;
    }
    double beta = 0.0;
    fc_estimate_beta(est, 0, &beta);
    printf("%zu %.6f\n", fc_estimate_n_beta(est), beta);
    if (fc_estimate_beta(est, 5, &beta) != FC_STATUS_INVALID_ARGUMENT || fc_last_error() == NULL) {
        return 2;
    }
    fc_estimate_free(est);
    fc_panel_free(panel);
    return 0;
}
