"""
Building a compact look-up table
================================

Each call to a radiative transfer code is slow, so the nodes of a look-up
table should go where they help most. The active emulator adds one node
at a time at the maximizer of

    [prod_k H_k(y)]^beta_t * prod_k D_k(y)

where ``D_k`` is the predictive variance (explore where nothing is known)
and ``H_k`` the gradient norm of the current interpolant (refine where the
output changes fast). ``beta_t`` phases the gradient term in.

Below, the built-in 2-d pseudo-atmospheric function is emulated until the
interpolant stops changing, and the result is compared with a Latin
hypercube design of the same size.
"""

import numpy as np

from physgp.agape import (
    ATMOS_INITIAL_NODES,
    LHC,
    EmulatorConfig,
    StopRule,
    baseline_samplers,
    fit_state,
    make_oracle,
    run,
    truth_error,
)
from physgp.harness.experiments import truth_grid

oracle = make_oracle("pseudo_atmospheric")
truth = truth_grid(oracle)
state, record = run(oracle, ATMOS_INITIAL_NODES, EmulatorConfig(),
                    StopRule(epsilon=0.005, max_nodes=40), truth=truth)

print(" m   RMSE vs truth   change from previous interpolant")
for row in record.rows:
    print(f"{row['m']:2d}   {np.sqrt(row['true_mse']):.4f}          {row['stop_distance']:.4g}")
print("oracle calls by the active run:", oracle.calls)

m0 = len(ATMOS_INITIAL_NODES)
extra = baseline_samplers(LHC, oracle.bounds, state.m - m0, seed=0)
nodes = np.vstack([ATMOS_INITIAL_NODES, extra])
lhc = fit_state(oracle.bounds, nodes, np.array([oracle(y) for y in nodes]))
print(f"\n{state.m} nodes: active RMSE {np.sqrt(truth_error(state, truth)):.4f}, "
      f"LHC RMSE {np.sqrt(truth_error(lhc, truth)):.4f}")
