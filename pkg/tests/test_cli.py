import json
import subprocess
import sys

import pytest
import yaml

from ricci_lab.cli import ConfigError, load_config, main, parse_config_text, resolve
from ricci_lab.presets import PRESETS

SMALL_TORUS = """\
name: small-torus
family: torus
seed: 3
initial:
  nx: 32
  ny: 32
  u: "0.2*sin(x)*cos(y)"
flow:
  dt_init: 0.01
  t_end: 0.05
  snapshot_stride: 40
classes:
  alpha: [1, 0]
  phi: {p: "1 + 0.3*sin(x)", q: "0"}
monitor:
  k_max: 4
  multistart: 4
  loop_vertices: 64
  slack: {duality_rel: 1.0e-3}
"""

SMALL_NECK = """\
preset: neckpinch-n3
name: small-neck
initial: {nx: 64}
flow: {dt_init: 0.002, snapshot_stride: 20, singularity_floor: 0.01}
monitor: {loop_vertices: 64, dilation_levels: 3}
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestConfig:
    def test_presets_resolve(self):
        for name in PRESETS:
            cfg = resolve({"preset": name})
            assert cfg["name"] == name

    def test_unknown_key_line(self):
        with pytest.raises(ConfigError) as exc:
            parse_config_text("family: torus\nflow:\n  dt_inti: 0.1\n", "c.yaml")
        msg = exc.value.format()
        assert "c.yaml:3" in msg and "did you mean 'dt_init'" in msg

    def test_type_error_line(self):
        with pytest.raises(ConfigError) as exc:
            parse_config_text("initial:\n  nx: many\n")
        assert exc.value.problems[0][0] == 2

    def test_random_needs_seed(self, tmp_path):
        text = SMALL_TORUS.replace("seed: 3\n", "").replace("  nx: 32\n", "  nx: 32\n  random: {modes: 2, amplitude: 0.1}\n")
        p = write(tmp_path, "r.yaml", text)
        with pytest.raises(ConfigError, match="requires 'seed'"):
            load_config(p)

    def test_zero_winding(self):
        data, lines = parse_config_text(SMALL_TORUS.replace("[1, 0]", "[0, 0]"))
        with pytest.raises(ConfigError, match="nonzero winding"):
            resolve(data, lines)

    def test_bad_expression(self, tmp_path):
        from ricci_lab.cli import build_scenario

        data, lines = parse_config_text(SMALL_TORUS.replace("0.2*sin(x)*cos(y)", "__import__('os')"))
        with pytest.raises(ConfigError, match="not allowed"):
            build_scenario(resolve(data, lines))


class TestVerbs:
    def test_list_presets(self, capsys):
        assert main(["list-presets"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 5
        assert out[0].startswith("flat-torus")

    def test_dump(self, capsys):
        assert main(["list-presets", "--dump", "neckpinch-n3"]) == 0
        cfg = yaml.safe_load(capsys.readouterr().out)
        assert cfg["initial"]["psi"] == "1 - 0.5*cos(x)"

    def test_unknown_preset(self, capsys, tmp_path):
        assert main(["run", "--preset", "neckpinch", "--out", str(tmp_path)]) == 2
        assert "nearest match 'neckpinch-n3'" in capsys.readouterr().err

    def test_malformed_config(self, capsys, tmp_path):
        p = write(tmp_path, "bad.yaml", "family: torus\ninitial:\n  nx: 32\n  random: {modes: 2}\n")
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert f"{p}:" in err

    def test_numerical_event(self, capsys, tmp_path):
        # a non-positive psi profile is rejected while building the metric
        p = write(tmp_path, "neg.yaml", "preset: neckpinch-n3\ninitial: {psi: '1 - 2*cos(x)'}\n")
        code = main(["run", "--config", str(p), "--out", str(tmp_path / "o")])
        assert code == 3
        ev = json.loads((tmp_path / "o" / "events.json").read_text())
        assert ev["event"] == "GeometryError"


@pytest.fixture(scope="module")
def torus_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("torus")
    p = write(d, "t.yaml", SMALL_TORUS)
    code = main(["run", "--config", str(p), "--out", str(d / "a")])
    return code, d, p


class TestRunArtifacts:
    def test_exit_and_files(self, torus_run):
        code, d, _ = torus_run
        assert code == 0
        names = {f.name for f in (d / "a").iterdir()}
        assert {"config.yaml", "trace.json", "trace.csv", "snapshots.npz", "events.json",
                "geodesics.csv", "comass_log.csv", "series.csv", "verdict.json"} <= names
        v = json.loads((d / "a" / "verdict.json").read_text())
        assert v["pass"]

    def test_rerun_byte_identical(self, torus_run):
        _, d, p = torus_run
        assert main(["run", "--config", str(p), "--out", str(d / "b")]) == 0
        for f in ("trace.csv", "trace.json", "series.csv", "geodesics.csv", "verdict.json", "config.yaml"):
            assert (d / "a" / f).read_bytes() == (d / "b" / f).read_bytes(), f

    def test_verify(self, torus_run):
        _, d, _ = torus_run
        assert main(["verify", str(d / "a"), "--out", str(d / "verify.json")]) == 0
        a = json.loads((d / "a" / "verdict.json").read_text())
        b = json.loads((d / "verify.json").read_text())
        assert a == b

    def test_dilate_torus(self, torus_run, capsys):
        _, d, _ = torus_run
        assert main(["dilate", str(d / "a"), "--t-j", "0.0", "--out", str(d / "dil")]) == 2
        assert "--lambda is required" in capsys.readouterr().err
        assert main(["dilate", str(d / "a"), "--t-j", "0.0", "--lambda", "4", "--out", str(d / "dil")]) == 0
        meta = json.loads((d / "dil" / "trace.json").read_text())["meta"]
        assert meta["dilated"] and meta["dilation"]["lambda_j"] == 4.0


def test_neckpinch_run_and_dilate(tmp_path, capsys):
    p = write(tmp_path, "n.yaml", SMALL_NECK)
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "n")]) == 0
    events = json.loads((tmp_path / "n" / "events.json").read_text())
    assert events[0]["event"] == "SingularityImminent"
    header = json.loads((tmp_path / "n" / "trace.json").read_text())
    times = [float(r.split(",")[0]) for r in (tmp_path / "n" / "trace.csv").read_text().splitlines()[1:]]
    tj = times[len(times) // 2]
    capsys.readouterr()
    assert main(["dilate", str(tmp_path / "n"), "--t-j", repr(tj), "--out", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out
    assert "blowup constant" in out
    assert header["termination"] == "singularity"
    assert main(["dilate", str(tmp_path / "n"), "--t-j", repr(tj + 1e-3), "--out", str(tmp_path / "e")]) == 2


def test_parallel_jobs(tmp_path):
    a = write(tmp_path, "a.yaml", SMALL_TORUS)
    b = write(tmp_path, "b.yaml", SMALL_TORUS.replace("name: small-torus", "name: second"))
    assert main(["run", "--config", str(a), "--config", str(b), "--jobs", "2", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "small-torus" / "verdict.json").exists()
    assert (tmp_path / "o" / "second" / "verdict.json").exists()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ricci_lab", "list-presets"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "dilation-ladder" in r.stdout
