"""Ricci flow on model geometries with co-evolving 1-forms and closed geodesics.

Modules
-------
geom     grids, metrics, curvature and an independent curvature oracle
flow     Ricci flow integrators, traces, dilations and blowup checks
hodge    discrete exterior calculus, form heat flow and the comass norm
loops    closed polylines, shortening, stable norm, frames and stability
monitor  theorem-level monotonicity reports and verdicts
cli      scenario runner (``python -m ricci_lab``)
"""

from .geom import ConformalTorusMetric, PeriodicGrid2, WarpedMetric, curvature
from .flow import FlowConfig, FlowTrace, DilationSpec, run_flow, dilate, cylinder_soliton, blowup_rate_check
from .hodge import OneForm, RadialForm, CohomologyClass, comass_norm
from .loops import WindingClass, LoopPolyline, min_length, stable_norm, build_frame, stability_integral
from .monitor import make_bundle, main_theorem_check, track_monotones

__version__ = "0.1.0"
