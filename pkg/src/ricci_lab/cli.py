"""Scenario runner: ``python -m ricci_lab <verb> ...``.

Verbs
-----
run           run one or more scenario configs (or a named preset)
list-presets  print the preset catalog; ``--dump NAME`` echoes a full config
verify        re-run the monitor on a stored trace directory
dilate        apply a parabolic rescaling to a stored trace

Exit codes: 0 all verdicts pass, 2 config error, 3 numerical event,
4 verdict failure.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import presets as _presets
from .flow import (
    DilationSpec,
    FlowConfig,
    NotApplicable,
    StepRejected,
    blowup_rate_check,
    dilate,
    read_trace,
    rmin_comparison_check,
    run_flow,
    write_trace,
)
from .geom import ConformalTorusMetric, GeometryError, PeriodicGrid2, WarpedMetric
from .hodge import OneForm, RadialForm
from .loops import WindingClass, write_geodesic_dump
from .monitor import (
    MonotoneReport,
    SlackBudget,
    corollary_check,
    default_ladder,
    loop_series,
    main_theorem_check,
    make_bundle,
    track_monotones,
    verdict,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERDICT = 0, 2, 3, 4


class ConfigError(Exception):
    """Schema violation; ``problems`` is a list of ``(line, message)``."""

    def __init__(self, problems, source="<config>"):
        self.problems = list(problems)
        self.source = source
        super().__init__(self.format())

    def format(self):
        out = []
        for line, msg in self.problems:
            loc = f"{self.source}:{line}" if line else self.source
            out.append(f"{loc}: {msg}")
        return "\n".join(out)


# ---------------------------------------------------------------------------
# schema

NUM, INT, STR, EXPR, BOOL = "number", "integer", "string", "expression", "boolean"

SCHEMA = {
    "preset": STR,
    "name": STR,
    "family": ("torus", "warped"),
    "seed": INT,
    "output": STR,
    "initial": {
        "nx": INT, "ny": INT, "lx": NUM, "ly": NUM, "u": EXPR,
        "random": {"modes": INT, "amplitude": NUM},
        "n": INT, "period": NUM, "phi": EXPR, "psi": EXPR,
    },
    "flow": {
        "dt_init": NUM, "cfl_safety": NUM, "t_end": NUM, "snapshot_stride": INT,
        "singularity_floor": NUM, "max_steps": INT,
    },
    "classes": {"alpha": [INT], "phi": {"p": EXPR, "q": EXPR}},
    "monitor": {
        "slack": {k: NUM for k in SlackBudget.__dataclass_fields__},
        "k_max": INT, "multistart": INT, "loop_vertices": INT,
        "dilation_levels": INT, "cylinder_scaling": BOOL,
    },
}


def _scalar_ok(kind, value):
    if isinstance(kind, tuple):
        return value in kind
    if kind == BOOL:
        return isinstance(value, bool)
    if kind == INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == NUM:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind in (STR,):
        return isinstance(value, str)
    if kind == EXPR:
        return isinstance(value, (str, int, float)) and not isinstance(value, bool)
    return False


def _walk(node, schema, path, lines, problems):
    loader = yaml.SafeLoader("")
    line = node.start_mark.line + 1
    lines[path] = line
    if isinstance(schema, dict):
        if not isinstance(node, yaml.MappingNode):
            problems.append((line, f"'{path or 'config'}' must be a mapping"))
            return
        seen = set()
        for kn, vn in node.value:
            key = kn.value
            kpath = f"{path}.{key}" if path else key
            if key in seen:
                problems.append((kn.start_mark.line + 1, f"duplicate key '{kpath}'"))
            seen.add(key)
            if key not in schema:
                near = difflib.get_close_matches(key, list(schema), n=1)
                hint = f" (did you mean '{near[0]}'?)" if near else ""
                problems.append((kn.start_mark.line + 1, f"unknown key '{kpath}'{hint}"))
                continue
            _walk(vn, schema[key], kpath, lines, problems)
        return
    if isinstance(schema, list):
        if not isinstance(node, yaml.SequenceNode):
            problems.append((line, f"'{path}' must be a list"))
            return
        for i, item in enumerate(node.value):
            _walk(item, schema[0], f"{path}[{i}]", lines, problems)
        return
    if not isinstance(node, yaml.ScalarNode):
        problems.append((line, f"'{path}' must be a scalar"))
        return
    value = loader.construct_object(node, deep=True)
    if not _scalar_ok(schema, value):
        want = " | ".join(schema) if isinstance(schema, tuple) else schema
        problems.append((line, f"'{path}' must be {want}, got {value!r}"))


def parse_config_text(text, source="<config>"):
    """Parse and schema-check YAML text; returns ``(data, lines)``."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else None
        raise ConfigError([(line, f"YAML syntax error: {getattr(exc, 'problem', exc)}")], source)
    if node is None:
        raise ConfigError([(1, "empty config")], source)
    lines, problems = {}, []
    _walk(node, SCHEMA, "", lines, problems)
    if problems:
        raise ConfigError(problems, source)
    data = yaml.safe_load(text)
    return data, lines


def resolve(data, lines=None, source="<config>"):
    """Apply the named preset (if any) and semantic checks; returns the effective config."""
    lines = lines or {}
    problems = []
    if "preset" in data:
        name = data["preset"]
        if name not in _presets.PRESETS:
            near = difflib.get_close_matches(name, list(_presets.PRESETS), n=1, cutoff=0.3)
            hint = f"; nearest match '{near[0]}'" if near else ""
            raise ConfigError([(lines.get("preset"), f"unknown preset '{name}'{hint}")], source)
        base = _presets.preset(name)
        over = {k: v for k, v in data.items() if k != "preset"}
        cfg = _presets.merge(base, over)
        cfg.setdefault("name", name)
    else:
        cfg = dict(data)
    for key in ("family", "initial", "flow", "classes"):
        if key not in cfg:
            problems.append((lines.get(""), f"missing required key '{key}'"))
    if problems:
        raise ConfigError(problems, source)
    fam = cfg["family"]
    ini = cfg["initial"]
    if "random" in ini and "seed" not in cfg:
        problems.append((lines.get("initial.random"), "randomized field 'initial.random' requires 'seed'"))
    need = ("nx", "ny") if fam == "torus" else ("n", "nx", "phi", "psi")
    for k in need:
        if k not in ini:
            problems.append((lines.get("initial"), f"'initial.{k}' is required for family {fam}"))
    if fam == "warped" and "random" in ini:
        problems.append((lines.get("initial.random"), "'initial.random' is only supported on the torus"))
    alpha = cfg["classes"].get("alpha")
    if alpha is None or "phi" not in cfg["classes"]:
        problems.append((lines.get("classes"), "'classes' needs 'alpha' and 'phi'"))
    else:
        if len(alpha) != (2 if fam == "torus" else 1):
            problems.append((lines.get("classes.alpha"), f"'classes.alpha' has wrong length for {fam}"))
        elif all(a == 0 for a in alpha):
            problems.append((lines.get("classes.alpha"), "'classes.alpha' must be a nonzero winding"))
    try:
        FlowConfig(**cfg["flow"])
    except (TypeError, ValueError) as exc:
        problems.append((lines.get("flow"), f"invalid flow settings: {exc}"))
    if problems:
        raise ConfigError(problems, source)
    return cfg


def load_config(path, seed_override=None):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([(None, f"cannot read config: {exc}")], str(p))
    data, lines = parse_config_text(text, str(p))
    cfg = resolve(data, lines, str(p))
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    cfg.setdefault("name", p.stem)
    return cfg


# ---------------------------------------------------------------------------
# building scenarios

_NS = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "cosh", "sinh", "abs", "pi", "arctan")}


def _expr(src, names, what):
    try:
        code = compile(str(src), what, "eval")
        for n in code.co_names:
            if n not in _NS and n not in names:
                raise NameError(f"name '{n}' is not allowed")
        return lambda **kw: np.asarray(eval(code, {"__builtins__": {}}, {**_NS, **kw}), dtype=float)
    except (SyntaxError, NameError) as exc:
        raise ConfigError([(None, f"bad expression for {what}: {exc}")])


def build_scenario(cfg):
    """Initial metric, riding form and winding class from an effective config."""
    ini = cfg["initial"]
    cls = cfg["classes"]
    if cfg["family"] == "torus":
        grid = PeriodicGrid2(ini["nx"], ini["ny"], ini.get("lx", 2 * np.pi), ini.get("ly", 2 * np.pi))
        X, Y = grid.coords()
        u = np.broadcast_to(_expr(ini.get("u", 0), ("x", "y"), "initial.u")(x=X, y=Y), X.shape).copy()
        if "random" in ini:
            rng = np.random.default_rng(cfg["seed"])
            K = int(ini["random"].get("modes", 3))
            amp = float(ini["random"].get("amplitude", 0.1))
            for kx in range(-K, K + 1):
                for ky in range(0, K + 1):
                    if ky == 0 and kx <= 0:
                        continue
                    c = rng.standard_normal() * amp / (1 + kx * kx + ky * ky)
                    u += c * np.cos(kx * X * 2 * np.pi / grid.lx + ky * Y * 2 * np.pi / grid.ly
                                    + rng.uniform(0, 2 * np.pi))
        m0 = ConformalTorusMetric(grid, u)
        fp = _expr(cls["phi"].get("p", 0), ("x", "y"), "classes.phi.p")
        fq = _expr(cls["phi"].get("q", 0), ("x", "y"), "classes.phi.q")
        phi0 = OneForm.from_function(grid, lambda x, y: fp(x=x, y=y) + 0 * x, lambda x, y: fq(x=x, y=y) + 0 * x)
        alpha = WindingClass(*cls["alpha"])
    else:
        fphi = _expr(ini["phi"], ("x",), "initial.phi")
        fpsi = _expr(ini["psi"], ("x",), "initial.psi")
        m0 = WarpedMetric.from_functions(ini["n"], ini["nx"], ini.get("period", 2 * np.pi),
                                         lambda x: fphi(x=x), lambda x: fpsi(x=x))
        fp = _expr(cls["phi"].get("p", 0), ("x",), "classes.phi.p")
        phi0 = RadialForm.from_function(m0, lambda x: fp(x=x) + 0 * x)
        alpha = WindingClass.warped(cls["alpha"][0])
    return m0, phi0, alpha


# ---------------------------------------------------------------------------
# monitoring and artifacts


def _slack(cfg):
    return SlackBudget(**cfg.get("monitor", {}).get("slack", {}))


def monitor_trace(trace, cfg, out_dir=None):
    """All verdict reports for a trace; optionally writes the monitor artifacts."""
    mon = cfg.get("monitor", {})
    _, phi0, alpha = build_scenario(cfg)
    slack = _slack(cfg)
    m0 = trace.snapshots[0]
    bundle = make_bundle(m0, alpha, phi0)
    loops = loop_series(trace, alpha, multistart=mon.get("multistart", 4), N=mon.get("loop_vertices", 128))
    reports = {"main_lower_bound": main_theorem_check(trace, bundle, loops, slack=slack.main_rel)}
    reports.update(track_monotones(trace, bundle, slack=slack, loops=loops, k_max=mon.get("k_max", 8)))

    rc = rmin_comparison_check(trace)
    reports["rmin_comparison"] = MonotoneReport(
        "rmin_comparison", trace.times, trace.column("R_min"),
        float(rc["worst_excess"]) if np.isfinite(rc["worst_excess"]) else 0.0,
        float(rc["slack"]), "lower-bound",
        {k: v for k, v in rc.items() if k not in ("violations",)})
    if rc.get("T_ok") is False:
        reports["rmin_comparison"].worst_violation = np.inf
    extra = {"termination": trace.termination, "T_num": trace.T_num,
             "oracle_check": {"shorten": loops[0].shorten_value, "oracle": loops[0].oracle_value,
                              "flagged": loops[0].flagged}}
    if trace.singular:
        br = blowup_rate_check(trace)
        reports["blowup_rate"] = MonotoneReport(
            "blowup_rate", trace.times, trace.column("sup_rm"), -br["constant"], -1e-12,
            "bounded-below", br)
        levels = mon.get("dilation_levels", 5)
        if levels:
            cc = corollary_check(trace, bundle, default_ladder(trace, levels))
            ok = cc["ok"] and (cc["scaling_within_tol"] or not mon.get("cylinder_scaling", False))
            reports["corollary"] = MonotoneReport(
                "corollary", np.array(cc["t_j"]), cc["L_dilated"], 0.0 if ok else 1.0, 0.0,
                "growing", cc)
    v = verdict(reports, extra)
    if out_dir is not None:
        out = Path(out_dir)
        write_geodesic_dump(out / "geodesics.csv",
                            [(t, r.loop, r.value, r.residual) for t, r in zip(trace.times, loops)])
        (out / "comass_log.csv").write_text(bundle.comass0.log_csv())
        with open(out / "series.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quantity", "t", "value"])
            for r in reports.values():
                for t, val in zip(r.times, r.values):
                    w.writerow([r.name, repr(float(t)), repr(float(val))])
        (out / "verdict.json").write_text(json.dumps(v, indent=2, sort_keys=True) + "\n")
    return v


def run_scenario(cfg, out_dir):
    """Run a resolved config end to end; returns ``(exit_code, message)``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    try:
        m0, phi0, _ = build_scenario(cfg)
        trace = run_flow(m0, FlowConfig(**cfg["flow"]), form=phi0)
    except ConfigError as exc:
        return EXIT_CONFIG, exc.format()
    except (GeometryError, StepRejected, FloatingPointError, ValueError) as exc:
        if isinstance(exc, ValueError) and not isinstance(exc, GeometryError):
            return EXIT_CONFIG, f"invalid initial data: {exc}"
        (out / "events.json").write_text(json.dumps(
            {"event": type(exc).__name__, "message": str(exc)}, indent=2) + "\n")
        return EXIT_NUMERIC, f"numerical event: {type(exc).__name__}: {exc}"
    write_trace(trace, out)
    events = []
    if trace.singular:
        events.append({"event": "SingularityImminent", "t": float(trace.times[-1]),
                       "T_num": trace.T_num, "psi_floor": trace.meta.get("psi_floor")})
    (out / "events.json").write_text(json.dumps(events, indent=2) + "\n")
    try:
        v = monitor_trace(trace, cfg, out)
    except (GeometryError, FloatingPointError) as exc:
        return EXIT_NUMERIC, f"numerical event during monitoring: {exc}"
    failed = [r["name"] for r in v["reports"] if r["verdict"] != "pass"]
    if failed:
        return EXIT_VERDICT, f"verdict failures: {', '.join(failed)}"
    return EXIT_OK, "all verdicts pass"


def _run_one(args):
    cfg, out = args
    try:
        return run_scenario(cfg, out)
    except ConfigError as exc:
        return EXIT_CONFIG, exc.format()


# ---------------------------------------------------------------------------
# verbs


def _severity(codes):
    for c in (EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERDICT):
        if c in codes:
            return c
    return EXIT_OK


def cmd_run(ns):
    sources = list(ns.config or [])
    cfgs = []
    try:
        for p in sources:
            cfgs.append(load_config(p, ns.seed_override))
        for name in ns.preset or []:
            cfg = resolve({"preset": name}, source=f"preset:{name}")
            if ns.seed_override is not None:
                cfg["seed"] = int(ns.seed_override)
            cfgs.append(cfg)
    except ConfigError as exc:
        print(exc.format(), file=sys.stderr)
        return EXIT_CONFIG
    if not cfgs:
        print("run: give --config FILE or --preset NAME", file=sys.stderr)
        return EXIT_CONFIG
    base = Path(ns.out)
    if len(cfgs) == 1:
        jobs = [(cfgs[0], base if "output" not in cfgs[0] else Path(cfgs[0]["output"]))]
    else:
        jobs = [(c, base / c.get("name", f"scenario{i}")) for i, c in enumerate(cfgs)]
    if ns.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=ns.jobs) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for (cfg, out), (code, msg) in zip(jobs, results):
        print(f"{cfg.get('name', '?')}: exit {code}: {msg} [{out}]")
    return _severity([c for c, _ in results])


def cmd_list(ns):
    if ns.dump:
        if ns.dump not in _presets.PRESETS:
            near = difflib.get_close_matches(ns.dump, list(_presets.PRESETS), n=1, cutoff=0.3)
            print(f"unknown preset '{ns.dump}'" + (f"; nearest match '{near[0]}'" if near else ""),
                  file=sys.stderr)
            return EXIT_CONFIG
        cfg = resolve({"preset": ns.dump})
        print(yaml.safe_dump(cfg, sort_keys=True), end="")
        return EXIT_OK
    for name, text in _presets.PRESET_SUMMARY.items():
        print(f"{name:18s} {text}")
    return EXIT_OK


def cmd_verify(ns):
    d = Path(ns.trace)
    try:
        cfg = load_config(ns.config or d / "config.yaml", ns.seed_override)
    except ConfigError as exc:
        print(exc.format(), file=sys.stderr)
        return EXIT_CONFIG
    try:
        trace = read_trace(d)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read trace in {d}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    v = monitor_trace(trace, cfg)
    out = Path(ns.out) if ns.out else d / "verdict.verify.json"
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "verdict.json"
    out.write_text(json.dumps(v, indent=2, sort_keys=True) + "\n")
    failed = [r["name"] for r in v["reports"] if r["verdict"] != "pass"]
    print("verify: " + ("all verdicts pass" if not failed else "failures: " + ", ".join(failed)))
    return EXIT_VERDICT if failed else EXIT_OK


def cmd_dilate(ns):
    try:
        trace = read_trace(ns.trace)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read trace in {ns.trace}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    lam = ns.lam
    if lam is None:
        if not trace.singular:
            print("dilate: --lambda is required for a non-singular trace", file=sys.stderr)
            return EXIT_CONFIG
        lam = 1.0 / (trace.T_num - ns.t_j)
    try:
        d = dilate(trace, DilationSpec(lam, ns.t_j, ns.x_j), window=ns.window)
    except ValueError as exc:
        print(f"dilate: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_trace(d, ns.out)
    msg = f"dilated by lambda={lam:.6g} at t_j={ns.t_j:.6g}: {len(d.times)} snapshots -> {ns.out}"
    try:
        msg += f"; blowup constant {blowup_rate_check(d)['constant']:.6g}"
    except NotApplicable:
        pass
    print(msg)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ricci-lab", description="Ricci flow monotonicity laboratory")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run scenarios and write artifacts")
    r.add_argument("--config", action="append", help="scenario YAML (repeatable)")
    r.add_argument("--preset", action="append", help="named preset (repeatable)")
    r.add_argument("--out", default="runs", help="artifact directory")
    r.add_argument("--jobs", type=int, default=1, help="parallel scenarios")
    r.add_argument("--seed-override", type=int, default=None)
    r.set_defaults(func=cmd_run)

    lp = sub.add_parser("list-presets", help="print the preset catalog")
    lp.add_argument("--dump", metavar="NAME", help="echo the full effective config of a preset")
    lp.set_defaults(func=cmd_list)

    v = sub.add_parser("verify", help="re-run the monitor on a stored trace")
    v.add_argument("trace", help="trace directory written by run")
    v.add_argument("--config", default=None, help="config (default: the one stored with the trace)")
    v.add_argument("--out", default=None, help="verdict path or directory")
    v.add_argument("--jobs", type=int, default=1)
    v.add_argument("--seed-override", type=int, default=None)
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("dilate", help="rescale a stored trace")
    d.add_argument("trace", help="trace directory")
    d.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="scale factor (default 1/(T_num - t_j) on singular traces)")
    d.add_argument("--t-j", dest="t_j", type=float, required=True, help="base time (a snapshot time)")
    d.add_argument("--x-j", dest="x_j", type=int, default=0, help="base node index")
    d.add_argument("--window", type=float, nargs=2, default=None, metavar=("TAU_A", "TAU_B"))
    d.add_argument("--out", required=True, help="output directory")
    d.set_defaults(func=cmd_dilate)
    return p


def main(argv=None):
    ns = build_parser().parse_args(argv)
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
