"""Batch Bayesian optimization on the Branin function.

Twenty iterations of two points each from a 16-point Latin hypercube.
Prints the incumbent after every iteration and the gap to the known minimum.
"""
from abmcal import BOConfig, run_calibration
from abmcal.pool import FunctionObjective
from abmcal.sim import benchmark_space
from abmcal.sim.benchmarks import BRANIN_MIN, branin2

state = run_calibration(FunctionObjective(branin2), benchmark_space("branin2"), BOConfig(seed=1))
for it, best in enumerate(state.trace):
    print(f"iteration {it:2d}  best {best:.5f}")
inc = state.incumbent
print(f"incumbent {state.space.lower + inc.theta * (state.space.upper - state.space.lower)}")
print(f"relative gap to the global minimum: {(inc.loss - BRANIN_MIN) / BRANIN_MIN:.2%}")
