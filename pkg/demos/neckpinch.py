"""
A neckpinch and its parabolic rescalings
========================================

The dumbbell ``psi = 1 - 0.5 cos x`` on S^1 x S^2 pinches at ``x = 0``.
We estimate the singular time, the blowup constant ``(T - t) sup|Rm|`` and
check that it is unchanged by the parabolic dilations.
"""

import numpy as np

from ricci_lab import FlowConfig, WarpedMetric, blowup_rate_check, dilate, run_flow
from ricci_lab.monitor import default_ladder

m0 = WarpedMetric.from_functions(3, 128, 2 * np.pi, lambda x: 1 + 0 * x, lambda x: 1 - 0.5 * np.cos(x))
trace = run_flow(m0, FlowConfig(dt_init=1e-3, t_end=10.0, snapshot_stride=25, singularity_floor=1e-3))
print(f"termination: {trace.termination}, T_num = {trace.T_num:.5f}")

br = blowup_rate_check(trace)
print(f"(T - t) sup|Rm| >= {br['constant']:.4f} over {br['samples']} late samples")

for spec in default_ladder(trace, 4):
    d = blowup_rate_check(dilate(trace, spec))
    print(f"lambda = {spec.lambda_j:9.2f}  constant after rescaling {d['constant']:.4f}")
