"""Named scenarios and the scenario config schema.

A scenario config is a YAML mapping.  Keys (all optional when a ``preset``
supplies them)::

    preset: neckpinch-n3        # start from a named preset, then override
    name: my-run                # output subdirectory when running several
    family: torus | warped
    seed: 0                     # required when initial.random is present
    initial:
      nx, ny, lx, ly            # torus grid
      u: "0.3*sin(x)*cos(y)"    # conformal factor expression in x, y
      random: {modes: 3, amplitude: 0.1}   # seeded random Fourier bump added to u
      n, nx, period             # warped grid
      phi: "1"                  # warped profiles, expressions in x
      psi: "1 - 0.5*cos(x)"
    flow: {dt_init, cfl_safety, t_end, snapshot_stride, singularity_floor, max_steps}
    classes:
      alpha: [1, 0]             # winding (warped: [k])
      phi: {p: "1 + 0.3*sin(x)", q: "0"}   # closed representative of Phi
    monitor:
      slack: {sup_rate, comass_abs, mg_rel, decay_rate, period_rel,
              potential_rate, main_rel, duality_rel, a, b}
      k_max: 8
      multistart: 4
      loop_vertices: 128
      dilation_levels: 5        # ladder for singular runs (0 disables)
      cylinder_scaling: false   # also require sqrt(lambda) scaling within 2%
"""

from __future__ import annotations

import copy
import math

PI2 = 2 * math.pi

PRESETS = {
    "flat-torus": {
        "family": "torus",
        "seed": 0,
        "initial": {"nx": 128, "ny": 128, "lx": PI2, "ly": PI2, "u": "0"},
        "flow": {"dt_init": 1e-2, "cfl_safety": 0.9, "t_end": 1.0, "snapshot_stride": 400},
        "classes": {"alpha": [1, 0], "phi": {"p": "1 + 0.3*sin(x)", "q": "0"}},
        "monitor": {"k_max": 8, "multistart": 4, "loop_vertices": 128, "dilation_levels": 0},
    },
    "bumpy-torus": {
        "family": "torus",
        "seed": 0,
        "initial": {"nx": 128, "ny": 128, "lx": PI2, "ly": PI2, "u": "0.3*sin(x)*cos(y)"},
        "flow": {"dt_init": 1e-2, "cfl_safety": 0.9, "t_end": 1.0, "snapshot_stride": 400},
        "classes": {"alpha": [1, 0], "phi": {"p": "1 + 0.3*sin(x)", "q": "0"}},
        "monitor": {"k_max": 8, "multistart": 4, "loop_vertices": 128, "dilation_levels": 0},
    },
    "cylinder-soliton": {
        "family": "warped",
        "seed": 0,
        "initial": {"n": 3, "nx": 256, "period": PI2, "phi": "1", "psi": "1"},
        "flow": {"dt_init": 1e-4, "cfl_safety": 0.9, "t_end": 10.0, "snapshot_stride": 250,
                 "singularity_floor": 1e-3},
        "classes": {"alpha": [1], "phi": {"p": "1 + 0.3*sin(x)"}},
        "monitor": {"k_max": 4, "multistart": 2, "loop_vertices": 128, "dilation_levels": 5},
    },
    "neckpinch-n3": {
        "family": "warped",
        "seed": 0,
        "initial": {"n": 3, "nx": 256, "period": PI2, "phi": "1", "psi": "1 - 0.5*cos(x)"},
        "flow": {"dt_init": 1e-3, "cfl_safety": 0.9, "t_end": 10.0, "snapshot_stride": 25,
                 "singularity_floor": 1e-3},
        "classes": {"alpha": [1], "phi": {"p": "1 + 0.3*sin(x)"}},
        "monitor": {"k_max": 4, "multistart": 2, "loop_vertices": 128, "dilation_levels": 5},
    },
    "dilation-ladder": {
        "family": "warped",
        "seed": 0,
        "initial": {"n": 3, "nx": 256, "period": PI2, "phi": "1", "psi": "1"},
        "flow": {"dt_init": 1e-4, "cfl_safety": 0.9, "t_end": 10.0, "snapshot_stride": 100,
                 "singularity_floor": 1e-3},
        "classes": {"alpha": [1], "phi": {"p": "1"}},
        "monitor": {"k_max": 4, "multistart": 2, "loop_vertices": 128, "dilation_levels": 6,
                    "cylinder_scaling": True},
    },
}

PRESET_SUMMARY = {
    "flat-torus": "flat square torus, stationary; every monitored series constant",
    "bumpy-torus": "conformal torus u0 = 0.3 sin x cos y relaxing toward flat",
    "cylinder-soliton": "round cylinder S1 x S2 shrinking to a point at T = 0.5",
    "neckpinch-n3": "dumbbell S1 x S2 with psi = 1 - 0.5 cos x pinching at x = 0",
    "dilation-ladder": "cylinder run followed by parabolic rescalings at T - t_j = 2^-j",
}


def preset(name):
    return copy.deepcopy(PRESETS[name])


def merge(base, over):
    """Recursive dictionary merge; ``over`` wins."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out
