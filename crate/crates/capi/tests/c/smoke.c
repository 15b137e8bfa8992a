#include <math.h>
#include <stdio.h>

#include "coopmec.h"

int main(void) {
    CoopmecConfig *cfg = NULL;
    CoopmecChannel *chan = NULL;
    CoopmecReport *rep = NULL;
    char msg[256];

    if (coopmec_config_reference(4, &cfg) != COOPMEC_STATUS_OK) return 1;
    if (coopmec_channel_sample(cfg, 11, true, &chan) != COOPMEC_STATUS_OK) return 2;
    if (coopmec_solve(cfg, chan, COOPMEC_CASE_AUTO, COOPMEC_METHOD_OPTIMIZED, &rep) != COOPMEC_STATUS_OK) {
        coopmec_last_error(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 3;
    }

    double t[4], r[4], b[4];
    size_t outer = 0, inner = 0;
    coopmec_report_times(rep, t);
    coopmec_report_ratios(rep, r, 4);
    coopmec_report_bandwidths(rep, b, 4);
    coopmec_report_iterations(rep, &outer, &inner);
    double p = coopmec_report_avg_power(rep);
    if (!(p > 0.0) || !(t[0] > 0.0) || outer == 0) return 4;
    printf("avg_power %.9f t1 %.6f outer %zu inner %zu kkt %.3e\n", p, t[0], outer, inner,
           coopmec_report_kkt_residual(rep));

    if (coopmec_config_reference(0, &cfg) != COOPMEC_STATUS_OUT_OF_RANGE) return 5;

    coopmec_report_free(rep);
    coopmec_channel_free(chan);
    coopmec_config_free(cfg);
    return 0;
}
