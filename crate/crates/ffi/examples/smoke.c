#include <stdio.h>

#include "spectator.h"

int main(void) {
    SpectatorRegister *reg = NULL;
    SpectatorSimulator *sim = NULL;
    SpectatorSimOptions opts;
    SpectatorEnsembleResult res;
    double f = 0.0;
    char msg[256];

    if (spectator_fidelity_one_spectator(1.0, 0.8, &f) != SPECTATOR_STATUS_OK) {
        return 1;
    }
    printf("F(g=1, sigma=0.8) = %.6f\n", f);

    spectator_register_fixture(&reg);
    spectator_sim_options_default(&opts);
    opts.seed = 1;
    if (spectator_simulator_new(reg, &opts, &sim) != SPECTATOR_STATUS_OK) {
        spectator_last_error(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        spectator_register_free(reg);
        return 1;
    }
    if (spectator_ensemble_run(sim, 200, SPECTATOR_PROTOCOL_KIND_MEASUREMENT_BASED, 2, 32, &res) ==
        SPECTATOR_STATUS_OK) {
        printf("K=2 measurement-based fidelity %.4f +- %.4f\n", res.fidelity, 0.5 * res.stderr_bvl);
    }
    spectator_simulator_free(sim);
    spectator_register_free(reg);
    return 0;
}
