import json
import math

import pytest

from bjlab.cli import main


def _json_out(tmp_path, argv):
    out = tmp_path / "out.json"
    code = main(argv + ["--out", str(out)])
    return code, json.loads(out.read_text())


def test_domain_check(tmp_path):
    code, d = _json_out(tmp_path, ["domain", "check", "--domain", "ellipse:0.8"])
    assert code == 0 and d["passed"]


def test_domain_check_fails_on_open_curve(tmp_path):
    f = tmp_path / "open.json"
    r0 = 1 / (2 * math.pi)
    f.write_text(json.dumps({"mean_radius": r0, "harmonics": [{"k": 1, "cos": 0.01, "sin": 0.0}]}))
    code, d = _json_out(tmp_path, ["domain", "check", "--domain", str(f)])
    assert code == 1 and not d["passed"]


def test_orbit_classify(tmp_path):
    code, d = _json_out(tmp_path, ["orbit", "classify", "--domain", "ellipse:0.8", "--p", "1", "--q", "2"])
    assert code == 0
    assert d["classification"] == "hyperbolic"
    assert d["eigenvalues"][0] == pytest.approx(16.0, rel=1e-10)


def test_rotate_degenerate_orbit_is_numeric_failure():
    # ellipse periodic orbits come in degenerate families, so the rotation solve is singular
    assert main(["perturb", "rotate", "--domain", "ellipse:0.8", "--q", "5", "--n", "1"]) == 1


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["domain", "check", "--domain", "does-not-exist.json"],
    ["orbit", "find", "--q", "notanint"],
    ["tangency", "scan"],
])
def test_usage_errors(argv):
    assert main(argv) == 2


def test_injectivity(tmp_path):
    f = tmp_path / "o.json"
    f.write_text(json.dumps([[0.1, 0.3, 0.5, 0.7], [0.2, 0.4, 0.6, 0.8]]))
    code, d = _json_out(tmp_path, ["injectivity", "--orbits", str(f), "--delta", "0.01"])
    assert code == 0 and d["orbit_ok"] == [True, True]
    assert main(["injectivity", "--orbits", str(f), "--delta", "0.2"]) == 1


def test_run_scenario(tmp_path):
    f = tmp_path / "s.json"
    f.write_text(json.dumps({"name": "s", "pipeline": [{"op": "circle.suite"}]}))
    assert main(["run", str(f), "--outdir", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "report.json").read_text())["passed"]
    f.write_text(json.dumps({"pipeline": [{"op": "fail"}]}))
    assert main(["run", str(f), "--outdir", str(tmp_path / "o")]) == 1
    f.write_text(json.dumps({"pipeline": [{"op": "unknown"}]}))
    assert main(["run", str(f)]) == 2


def test_verify_quick(tmp_path):
    assert main(["verify", "all", "--quick", "--out", str(tmp_path / "v.json")]) == 0
