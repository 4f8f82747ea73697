"""
Comass of a cohomology class
============================

The comass ``N_g(Phi)`` is the smallest sup norm over closed forms in the
class.  The solver returns an upper value (sup of its best form) and a
lower value from loops: ``|<Phi, gamma>| / length(gamma)``.
"""

import numpy as np

from ricci_lab import CohomologyClass, ConformalTorusMetric, OneForm, PeriodicGrid2, WindingClass, comass_norm, min_length

grid = PeriodicGrid2(64, 64)
m = ConformalTorusMetric.from_function(grid, lambda x, y: 0.3 * np.sin(x) * np.cos(y))
phi0 = OneForm.from_function(grid, lambda x, y: 1 + 0.3 * np.sin(x), lambda x, y: 0 * x)
cls = CohomologyClass(phi0, grid=grid)

res = comass_norm(cls, m)
print(f"grid lines only : {res.lower:.6f} <= N <= {res.value:.6f}")

# a shortest loop in the class (1, 0) gives a sharper lower bound
loop = min_length(WindingClass(1, 0), m, multistart=4)
res = comass_norm(cls, m, loops=[((1, 0), loop.value)])
print(f"with geodesic   : {res.lower:.6f} <= N <= {res.value:.6f}  (gap {res.gap:.1e})")
print(res.log_csv().splitlines()[-1])
