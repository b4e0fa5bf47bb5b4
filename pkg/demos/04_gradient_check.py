#!/usr/bin/env python3
"""Finite-difference audit of every analytic derivative.

Every Gaussian parameter and every medium-network layer is perturbed with
central differences (h = 1e-4, float64) and compared against the analytic
backward pass. The whole run takes well under a minute.
"""

import time

from aquasplat.gradients import check_gradients

t0 = time.time()
report = check_gradients(seed=0, tolerance=1e-5)
for name, row in report["groups"].items():
    print(f"{name:20s} params={row['n_params']:6d} "
          f"max_rel_err={row['max_rel_err']:.3e}")
print(f"\npassed={report['passed']} worst={report['worst']:.3e} "
      f"({time.time() - t0:.1f}s)")
