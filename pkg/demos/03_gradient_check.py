"""Verifying the hand-written backprop with central finite differences.

Run:  python3 demos/03_gradient_check.py   (takes a few seconds)
"""

import time

import numpy as np

from highwaylab import NetworkSpec, init_params
from highwaylab.nets import (
    AdamState,
    ParameterSet,
    adam_step,
    gradient_check,
    log_prob_probe,
    squared_error_probe,
)


def main():
    spec = NetworkSpec((25, 128, 128, 5))
    params = init_params(spec, seed=0)
    x = np.random.default_rng(1).uniform(-1.0, 1.0, size=25)
    print(f"policy-sized network {spec.layer_sizes}, {spec.n_params} parameters")

    t0 = time.time()
    err_sq = gradient_check(spec, params, x, squared_error_probe(np.linspace(-1, 1, 5)))
    err_lp = gradient_check(spec, params, x, log_prob_probe(2))
    print(f"max relative error, squared-error probe: {err_sq:.2e}")
    print(f"max relative error, log-prob probe:      {err_lp:.2e}")
    print(f"({spec.n_params} coordinates x 2 probes in {time.time()-t0:.1f} s)")

    print("\nAdam on a convex quadratic |theta - c|^2:")
    c = np.random.default_rng(2).normal(size=8) * 2.0
    p = ParameterSet(np.zeros(8))
    state = AdamState.create(8, learning_rate=0.05)
    for step in range(120):
        diff = p.values - c
        if step % 20 == 0:
            print(f"  step {step:3d} loss {float(diff @ diff):9.5f}")
        p, state = adam_step(state, p, 2.0 * diff)
    diff = p.values - c
    print(f"  step 120 loss {float(diff @ diff):9.5f}")


if __name__ == "__main__":
    main()
