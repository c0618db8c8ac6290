import hashlib
import json
import os
import subprocess
import sys

import pytest

from riccatilab import cli

SMALL = [
    "--set", "budgets.lyapunov.T=50", "--set", "budgets.lyapunov.ensemble=10",
    "--set", "budgets.lyapunov.n_boot=50", "--set", "budgets.lyapunov.attraction_frames=20",
    "--set", "budgets.ray.n=40", "--set", "budgets.ray.T=30",
    "--set", "budgets.brownian.exit_paths=300", "--set", "budgets.brownian.n_paths=10",
    "--set", "budgets.brownian.T=10",
    "--set", "budgets.integrability.n_mc=200", "--set", "budgets.integrability.levels=3",
    "--set", "budgets.integrability.Y_max=500", "--set", "budgets.integrability.Xi_max=500",
    "--set", "budgets.integrability.lemma_samples=500",
    "--set", "budgets.measures.limit_word_length=4",
]


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    # overrides given by the test come after the small budgets, so they win
    code = cli.main([argv[0], *SMALL, *argv[1:], "--out", str(out)])
    return code, out


def manifest(out):
    with open(out / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


class TestValidate:
    def test_fuchsian_ok(self, tmp_path):
        code, out = run(tmp_path, "validate", "--seed", "0")
        assert code == 0
        assert manifest(out)["status"] == "ok"

    def test_family_zero_is_invalid(self, tmp_path, capsys):
        code, _ = run(tmp_path, "validate", "--seed", "0", "--rep", "family", "--a", "0")
        assert code == 2
        assert "constructor precondition" in capsys.readouterr().out

    def test_perturbed_reports_peripheral_trace(self, tmp_path, capsys):
        code, out = run(tmp_path, "validate", "--seed", "0", "--rep", "perturbed")
        assert code == 2
        doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert doc["status"] == "invalid"
        assert any("peripheral trace" in r for r in doc["reasons"])
        assert (out / "FAILED").exists()


class TestConfig:
    def test_seed_is_mandatory(self, tmp_path):
        code, _ = run(tmp_path, "validate")
        assert code == 2

    def test_nonpositive_budget(self, tmp_path):
        code, _ = run(tmp_path, "ray", "--seed", "1", "--set", "budgets.ray.T=-1")
        assert code == 2

    def test_unknown_leaf(self, tmp_path):
        code, _ = run(tmp_path, "ray", "--seed", "1", "--set", "budgets.ray.colour=3")
        assert code == 2

    def test_config_file_and_override(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 4, "budgets": {"ray": {"n": 7}}}))
        cfg = cli.load_config(str(path), ["budgets.ray.T=12"])
        assert cfg.seed == 4 and cfg.budgets.ray.n == 7 and cfg.budgets.ray.T == 12
        assert cli.load_config(str(path), seed=9).seed == 9

    @pytest.mark.parametrize("a", ["2+0.4i", [2, 0.4]])
    def test_family_parameter_forms(self, a):
        cfg = cli.load_config(overrides=[f"family_a={json.dumps(a)}"], seed=0)
        assert cfg.family_parameter == 2 + 0.4j

    def test_bad_seed(self):
        with pytest.raises(ValueError):
            cli.load_config(seed=-3)


class TestArtifacts:
    @pytest.mark.parametrize("command", ["lyapunov", "ray", "brownian", "integrability"])
    def test_byte_identical_reruns(self, tmp_path, command):
        c1, a = run(tmp_path, command, "--seed", "3", name="a")
        c2, b = run(tmp_path, command, "--seed", "3", name="b")
        assert c1 == c2 == 0
        names = sorted(os.listdir(a))
        assert names == sorted(os.listdir(b))
        for n in names:
            assert (a / n).read_bytes() == (b / n).read_bytes(), n

    def test_different_seed_differs(self, tmp_path):
        run(tmp_path, "ray", "--seed", "3", name="a")
        run(tmp_path, "ray", "--seed", "4", name="b")
        assert (tmp_path / "a" / "ray_limits.csv").read_bytes() != (tmp_path / "b" / "ray_limits.csv").read_bytes()

    def test_manifest_hashes(self, tmp_path):
        code, out = run(tmp_path, "ray", "--seed", "2")
        assert code == 0
        m = manifest(out)
        listed = {e["path"] for e in m["files"]}
        assert listed == set(os.listdir(out)) - {"manifest.json"}
        for e in m["files"]:
            assert hashlib.sha256((out / e["path"]).read_bytes()).hexdigest() == e["sha256"]
        assert m["seed"] == 2 and len(m["config_sha256"]) == 64
        assert set(m["versions"]) >= {"numpy", "scipy", "python"}

    def test_csv_has_header(self, tmp_path):
        _, out = run(tmp_path, "ray", "--seed", "2")
        first = (out / "ray_limits.csv").read_text().splitlines()[0]
        assert first.startswith("theta,x,y,z")

    def test_svg_is_wellformed(self, tmp_path):
        import xml.etree.ElementTree as ET

        _, out = run(tmp_path, "lyapunov", "--seed", "2")
        root = ET.parse(out / "exponent_series.svg").getroot()
        assert root.tag.endswith("svg") and root.get("version") == "1.1"

    def test_lyapunov_summary_keys(self, tmp_path):
        _, out = run(tmp_path, "lyapunov", "--seed", "1")
        s = manifest(out)["summary"]
        assert {"lambda_plus", "stderr", "attraction_slope"} <= set(s)

    def test_limit_set_task(self, tmp_path):
        code, out = run(tmp_path, "measures", "limit-set", "--seed", "1", "--rep", "family", "--a", "2+0.4i")
        assert code == 0
        assert manifest(out)["summary"]["points"] > 10


class TestFailures:
    def test_hypotheses_need_force(self, tmp_path):
        code, _ = run(tmp_path, "lyapunov", "--seed", "1", "--rep", "upper_triangular", name="a")
        assert code == 2
        code, out = run(tmp_path, "lyapunov", "--seed", "1", "--rep", "upper_triangular", "--force", name="b")
        assert code == 0
        assert abs(manifest(out)["summary"]["lambda_plus"]) < 0.1

    def test_pipeline_failure_keeps_partial(self, tmp_path, monkeypatch):
        def boom(run_):
            run_.write_json("partial.json", {"stage": 1})
            raise RuntimeError("sub-pipeline exploded")

        monkeypatch.setitem(cli.COMMANDS, "ray", boom)
        code, out = run(tmp_path, "ray", "--seed", "1")
        assert code == 1
        assert (out / "FAILED").read_text().startswith("RuntimeError")
        m = manifest(out)
        assert m["status"] == "failed"
        assert {e["path"] for e in m["files"]} == {"partial.json", "FAILED"}


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "riccatilab", "validate", "--seed", "0", "--out", str(tmp_path / "v")],
        capture_output=True, text=True, timeout=300,
    )
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout)["status"] == "ok"
