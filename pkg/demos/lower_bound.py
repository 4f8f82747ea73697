"""
The length lower bound along a flow
===================================

For a class ``alpha`` of infinite order and a closed form ``Phi``, the
shortest loop length stays above ``c = <Phi, alpha> / N_{g(0)}(Phi)``.
This runs the bumpy-torus preset through the monitor and prints the ratio
``L_alpha(t) / c`` together with every monitored verdict.
"""

from ricci_lab.cli import build_scenario, monitor_trace, resolve
from ricci_lab.flow import FlowConfig, run_flow

cfg = resolve({"preset": "bumpy-torus", "flow": {"t_end": 0.5}})
m0, phi0, alpha = build_scenario(cfg)
trace = run_flow(m0, FlowConfig(**cfg["flow"]), form=phi0)
v = monitor_trace(trace, cfg)

for r in v["reports"]:
    print(f"{r['name']:18s} {r['verdict']:5s} worst {r['worst_violation']: .2e} slack {r['slack']:.2e}")
main = next(r for r in v["reports"] if r["name"] == "main_lower_bound")
print("L_alpha / c:", [round(x, 5) for x in main["values"]])
