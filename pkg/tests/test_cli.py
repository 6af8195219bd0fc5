import csv
import io
import json
import math

import numpy as np
import pytest

from rspi.cli import main
from rspi.experiments import ConfigError, load_config, run_fig_curves, run_leqg_sweep


def write_config(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def read_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def sign_changes(values):
    s = np.sign([v for v in values if v != 0])
    return int(np.sum(s[1:] != s[:-1]))


class TestConfig:
    def test_defaults_load(self):
        for exp in ("fig1", "fig2", "fig3", "fig4", "leqg-sweep", "validate-mc"):
            assert load_config(exp).seed == 42

    @pytest.mark.parametrize(
        "raw",
        [
            {"bogus": 1},
            {"x_grid": {"start": 0, "nope": 1}},
            {"experiment": "fig3"},
            {"risk": [{"theta": 0.0, "lambda_theta": 1.0}]},
            {"risk": [{"kappa": 1.0}]},
            {"sigma": 1.0, "R": 2.0, "lambda0": 1.0},
        ],
    )
    def test_rejected(self, raw):
        with pytest.raises(ConfigError):
            load_config("fig2", raw)

    def test_lambda0_derived(self):
        cfg = load_config("fig2", {"sigma": 2.0, "R": 0.5})
        assert cfg["lambda0"] == pytest.approx(1.0)

    @pytest.mark.parametrize("content", ["{not json", "[1, 2]", '{"bogus": 1}'])
    def test_exit_code_one(self, tmp_path, content, capsys):
        p = tmp_path / "bad.json"
        p.write_text(content)
        assert main(["fig2", "--config", str(p)]) == 1
        assert "config error" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["fig2", "--config", str(tmp_path / "nope.json")]) == 1


class TestFigCurves:
    def test_fig2_schema_and_roots(self, tmp_path):
        out = tmp_path / "fig2.csv"
        assert main(["fig2", "--out", str(out)]) == 0
        rows = read_rows(out)
        assert list(rows[0]) == ["x", "lambda_theta", "t", "control"]
        assert {r["lambda_theta"] for r in rows} == {"-0.5", "inf", "1", "0.5"}
        curve = lambda lt, t: [float(r["control"]) for r in rows if r["lambda_theta"] == lt and r["t"] == t]
        assert sign_changes(curve("1", "0")) == 1
        assert sign_changes(curve("1", "0.5")) == 3

    def test_fig3_stays_between_threats(self, tmp_path):
        out = tmp_path / "fig3.csv"
        assert main(["fig3", "--out", str(out)]) == 0
        for r in read_rows(out):
            x, u = float(r["x"]), float(r["control"])
            if r["lambda_theta"] == "-0.5" and r["t"] == "0.5" and 0 < abs(x) < 0.9:
                assert np.sign(u) == -np.sign(x)

    def test_fig1_header_flags_defaults(self, capsys):
        assert main(["fig1"]) == 0
        text = capsys.readouterr().out
        assert text.startswith("# fig1 parameters chosen by this tool")
        assert text.splitlines()[1] == "x,lambda_theta,t,control"

    def test_seventeen_digits(self):
        text = run_fig_curves(load_config("fig2"))
        v = float(text.splitlines()[1].split(",")[3])
        assert f"{v:.17g}" == text.splitlines()[1].split(",")[3]

    def test_risk_entries_by_theta(self):
        a = run_fig_curves(load_config("fig2", {"risk": [{"theta": 0.5}]}))
        b = run_fig_curves(load_config("fig2", {"risk": [{"lambda_theta": 2.0}]}))
        assert a == b


class TestLeqgSweep:
    def test_rows(self):
        rows = list(csv.DictReader(io.StringIO(run_leqg_sweep(load_config("leqg-sweep")))))
        assert list(rows[0]) == ["x", "t", "theta", "wellposed", "control"]
        get = lambda x, t, th: next(r for r in rows if (r["x"], r["t"], r["theta"]) == (x, t, th))
        assert float(get("1", "0", "0")["control"]) == -0.5
        assert float(get("0", "0", "0.5")["control"]) == 0.0
        bad = get("1", "0", "2")
        assert bad["wellposed"] == "false" and bad["control"] == ""
        assert get("1", "0.5", "2")["wellposed"] == "true"

    def test_amplitude_regimes(self):
        rows = list(csv.DictReader(io.StringIO(run_leqg_sweep(load_config("leqg-sweep")))))
        amp = lambda th: [abs(float(r["control"])) for r in rows if r["theta"] == th and r["x"] == "1"]
        a0, a1 = amp("0"), amp("1")
        # below 1/(sigma^2 R^2) the amplitude grows towards the horizon; at it, stays constant
        assert all(p < q for p, q in zip(a0, a0[1:]))
        assert a1 == [1.0] * len(a1)


class TestFig4:
    def test_schema_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "fig4", "n_runs": 40, "dt": 1e-2})
        outs = []
        for w in (1, 4):
            out = tmp_path / f"f4_{w}.csv"
            assert main(["fig4", "--config", str(cfg), "--out", str(out), "--workers", str(w)]) == 0
            outs.append((out.read_bytes(), (tmp_path / f"f4_{w}_summary.csv").read_bytes()))
        assert outs[0] == outs[1]
        rows = read_rows(tmp_path / "f4_1.csv")
        assert list(rows[0]) == ["theta", "run_index", "cost"] and len(rows) == 160
        assert all(math.isfinite(float(r["cost"])) for r in rows if r["theta"] == "0")
        summary = read_rows(tmp_path / "f4_1_summary.csv")
        assert list(summary[0]) == [
            "theta", "mean", "var", "median", "q90", "q99", "bin_left", "bin_right", "count", "log10_prob"
        ]
        assert len(summary) == 4 * 30

    def test_seed_changes_output(self, tmp_path):
        cfg = write_config(tmp_path, {"n_runs": 20, "dt": 1e-2})
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["fig4", "--config", str(cfg), "--out", str(a)])
        main(["fig4", "--config", str(cfg), "--out", str(b), "--seed", "7"])
        assert a.read_bytes() != b.read_bytes()


SMALL_VALIDATE = {
    "n_samples": 4000,
    "dt": 0.05,
    "leqg": {"theta": [0.0], "x": [-1.0, 1.0]},
    "partition": {"theta": [0.5], "x": [0.0]},
}


class TestValidateMc:
    def test_passes_and_flags_divergence(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "validate-mc", **SMALL_VALIDATE})
        out = tmp_path / "report.csv"
        assert main(["validate-mc", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_rows(out)
        assert all(r["passed"] == "true" for r in rows)
        probe = [r for r in rows if r["suite"] == "blowup-probe"]
        assert "suspected divergent path integral" in probe[0]["note"]

    def test_degenerate_point_fails_gate(self, tmp_path):
        bad = {**SMALL_VALIDATE, "partition": {"regions": [{"lower": -50, "upper": 50, "cost": -1000}], "theta": [2.0], "x": [0.0]}}
        cfg = write_config(tmp_path, bad)
        out = tmp_path / "report.csv"
        assert main(["validate-mc", "--config", str(cfg), "--out", str(out)]) == 2
        row = next(r for r in read_rows(out) if r["suite"] == "partition-log-z")
        assert row["passed"] == "false" and "partition function non-positive" in row["note"]

    def test_byte_identical_across_workers(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_VALIDATE)
        outs = []
        for w in (1, 4):
            out = tmp_path / f"r{w}.csv"
            main(["validate-mc", "--config", str(cfg), "--out", str(out), "--workers", str(w)])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
