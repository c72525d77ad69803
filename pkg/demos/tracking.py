"""Closed-loop tracking of a drifting optimum, next to its certified bound.

The controller uses a gain learned from noisy data; the bound only needs the
gain mismatch, the cost constants and a Lyapunov certificate of the plant.
"""

import numpy as np

from ddfeedback.experiments import run_tracking


def main(trials=100):
    res = run_tracking({"trials": trials})
    c = res.constants
    gi = res.scenario.cfg
    print(f"step size {gi.eta:.4f}; contraction factors beta1 = {c.beta1:.4f}, beta2 = {c.beta2:.4f}")
    print(f"gradient-error weight {c.gamma1:.4f}, state-drift weight {c.gamma3:.3f}")
    print(" k   empirical      bound")
    for k in range(0, len(res.empirical), 10):
        print(f"{k:3d}  {res.empirical[k]:10.4f}  {res.bounds.bound[k]:9.4f}")
    worst = np.max(res.empirical[1:] / res.bounds.bound[1:])
    print(f"largest empirical/bound ratio after the first step: {worst:.3f}")


if __name__ == "__main__":
    main()
