"""Calibrate the toy activity simulator against its synthetic link counts.

Compares the search in the original five parameters with the search in the
latent space of the combined regression autoencoder, for a few seeds.
Each run takes roughly ten seconds.
"""
import sys

from abmcal import ABM_SPACE, BOConfig, run_calibration
from abmcal.pool import SeriesObjective, ToyRunner
from abmcal.sim import make_observed

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
objective = SeriesObjective(ToyRunner(), make_observed())
for mode in ("orig", "nn"):
    for s in seeds:
        st = run_calibration(objective, ABM_SPACE, BOConfig(space_mode=mode, seed=s))
        print(f"{mode:4s} seed {s}: initial best {st.initial_best:8.3f}  final {st.incumbent.loss:8.3f}"
              f"  improvement {st.improvement():6.1%}  found at iteration {st.iteration_found()}")
