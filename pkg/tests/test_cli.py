import json
import re

import numpy as np
import pytest
import yaml

from conftest import write_arch_table
from lawlab.checklist import BULLETS, render_checklist
from lawlab.cli import main
from lawlab.config import ExperimentConfig
from lawlab.ledger import to_csv
from lawlab.report import load_report
from lawlab.synth import demo_arch_table, final_checkpoint_dataset


def run_cli(args):
    return main(args)


@pytest.fixture
def workdir(tmp_path, known_params):
    ds = final_checkpoint_dataset(known_params, count=20, seed=11)
    data = tmp_path / "runs.csv"
    data.write_text(to_csv(ds), encoding="utf-8")
    config = {
        "data": {"path": "runs.csv"},
        "init": {"strategy": "top_k_of_grid", "k": 10},
        "report": {
            "reference_points": [
                {"label": "anchor", "c": 1e9, "n": 1.8e4, "d": 9e3},
            ]
        },
    }
    cfg_path = tmp_path / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return tmp_path, cfg_path, data


class TestCmdFit:
    def test_minimal_config_recovers_params(self, workdir, capsys):
        tmp, cfg, _ = workdir
        out = tmp / "report.json"
        assert run_cli(["fit", "--config", str(cfg), "--out", str(out)]) == 0
        report = load_report(out)
        params = report["fit"]["best"]["params"]
        assert abs(params["alpha"] - 0.45) < 1e-3
        assert abs(params["beta"] - 0.38) < 1e-3
        assert abs(params["log_e"] - 0.4) < 1e-2

    def test_nls_with_log_huber_exits_nonzero_citing_section(self, workdir, capsys):
        tmp, cfg, _ = workdir
        bad = yaml.safe_load(cfg.read_text())
        bad["optimizer"] = {"kind": "nls"}
        bad_path = tmp / "bad.yaml"
        bad_path.write_text(yaml.safe_dump(bad))
        code = run_cli(["fit", "--config", str(bad_path), "--out", str(tmp / "r.json")])
        assert code != 0
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["section"] == "optimizer.kind"

    def test_rerun_byte_identical_minus_timing(self, workdir):
        tmp, cfg, _ = workdir
        out1, out2 = tmp / "r1.json", tmp / "r2.json"
        assert run_cli(["fit", "--config", str(cfg), "--out", str(out1)]) == 0
        assert run_cli(["fit", "--config", str(cfg), "--out", str(out2)]) == 0
        a = json.loads(out1.read_text())
        b = json.loads(out2.read_text())
        a.pop("timing"), b.pop("timing")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_data_override(self, workdir, known_params):
        tmp, cfg, _ = workdir
        other = final_checkpoint_dataset(known_params, count=12, seed=99)
        other_path = tmp / "other.csv"
        other_path.write_text(to_csv(other))
        out = tmp / "r.json"
        assert run_cli(
            ["fit", "--config", str(cfg), "--data", str(other_path), "--out", str(out)]
        ) == 0
        assert load_report(out)["dataset"]["n_ingested"] == 12

    def test_missing_data_file_is_machine_readable_error(self, workdir, capsys):
        tmp, cfg, _ = workdir
        code = run_cli(
            ["fit", "--config", str(cfg), "--data", str(tmp / "nope.csv"), "--out", str(tmp / "r.json")]
        )
        assert code != 0
        err = json.loads(capsys.readouterr().err)
        assert "error" in err


class TestCmdMatrix:
    def test_matrix_runs_and_writes_comparison(self, workdir):
        tmp, cfg, data = workdir
        matrix = {
            "base": yaml.safe_load(cfg.read_text()),
            "variants": [
                {"name": "baseline", "overrides": {}},
                {"name": "tied", "overrides": {"hypothesis": {"form": "tied"}}},
            ],
        }
        mpath = tmp / "matrix.yaml"
        mpath.write_text(yaml.safe_dump(matrix))
        out = tmp / "out"
        assert run_cli(["matrix", "--config", str(mpath), "--out", str(out)]) == 0
        assert (out / "report-baseline.json").exists()
        assert (out / "report-tied.json").exists()
        lines = (out / "comparison.csv").read_text().splitlines()
        header = lines[0].split(",")
        assert header[:5] == ["variant", "objective", "alpha", "beta", "allocation_exponent"]
        assert "n_opt@anchor" in header
        assert len(lines) == 3


class TestCmdPlot:
    def test_single_report_is_straight_line_in_loglog(self, workdir):
        tmp, cfg, _ = workdir
        report = tmp / "r.json"
        svg = tmp / "chart.svg"
        run_cli(["fit", "--config", str(cfg), "--out", str(report)])
        assert run_cli(["plot", str(report), "--out", str(svg), "--axes", "c_vs_n"]) == 0
        text = svg.read_text()
        points = re.search(r'<polyline points="([^"]+)"', text).group(1).split()
        xy = np.array([[float(v) for v in p.split(",")] for p in points])
        # pixel coordinates are affine in (log c, log y): a straight line up
        # to the 0.01 px coordinate quantization of the SVG writer
        coeffs = np.polyfit(xy[:, 0], xy[:, 1], 1)
        resid = xy[:, 1] - np.polyval(coeffs, xy[:, 0])
        assert np.max(np.abs(resid)) < 0.02

    def test_tied_rho_curve_is_horizontal(self, tmp_path, tied_params):
        ds = final_checkpoint_dataset(tied_params, count=20, seed=4)
        data = tmp_path / "runs.csv"
        data.write_text(to_csv(ds))
        cfg_path = tmp_path / "c.yaml"
        cfg_path.write_text(
            yaml.safe_dump(
                {
                    "hypothesis": {"form": "tied"},
                    "data": {"path": "runs.csv"},
                    "init": {"strategy": "top_k_of_grid", "k": 8},
                }
            )
        )
        report = tmp_path / "r.json"
        svg = tmp_path / "rho.svg"
        assert run_cli(["fit", "--config", str(cfg_path), "--out", str(report)]) == 0
        assert run_cli(["plot", str(report), "--out", str(svg), "--axes", "c_vs_rho"]) == 0
        points = re.search(r'<polyline points="([^"]+)"', svg.read_text()).group(1).split()
        ys = [float(p.split(",")[1]) for p in points]
        assert max(ys) - min(ys) < 0.02  # horizontal within a 50th of a pixel

    def test_two_reports_annotate_min_and_max(self, workdir):
        tmp, cfg, _ = workdir
        r1 = tmp / "r1.json"
        run_cli(["fit", "--config", str(cfg), "--out", str(r1)])
        alt = yaml.safe_load(cfg.read_text())
        alt["hypothesis"] = {"form": "tied"}
        alt_path = tmp / "alt.yaml"
        alt_path.write_text(yaml.safe_dump(alt))
        r2 = tmp / "r2.json"
        run_cli(["fit", "--config", str(alt_path), "--out", str(r2)])
        svg = tmp / "two.svg"
        assert run_cli(["plot", str(r1), str(r2), "--out", str(svg)]) == 0
        text = svg.read_text()
        lo = re.search(r">min ([0-9.e+-]+)</text>", text).group(1)
        hi = re.search(r">max ([0-9.e+-]+)</text>", text).group(1)
        assert float(lo) < float(hi)

    def test_deterministic_bytes(self, workdir):
        tmp, cfg, _ = workdir
        report = tmp / "r.json"
        run_cli(["fit", "--config", str(cfg), "--out", str(report)])
        s1, s2 = tmp / "a.svg", tmp / "b.svg"
        run_cli(["plot", str(report), "--out", str(s1)])
        run_cli(["plot", str(report), "--out", str(s2)])
        assert s1.read_bytes() == s2.read_bytes()


class TestCmdChecklist:
    def test_objective_and_ci_answers(self, workdir):
        tmp, cfg, _ = workdir
        report = tmp / "r.json"
        out = tmp / "checklist.md"
        run_cli(["fit", "--config", str(cfg), "--out", str(report)])
        assert run_cli(
            ["checklist", "--config", str(cfg), "--report", str(report), "--out", str(out)]
        ) == 0
        text = out.read_text()
        assert "log_huber, delta=0.001" in text
        assert "confidence intervals: NOT SPECIFIED / not run" in text

    def test_parity_one_line_per_bullet(self, workdir):
        tmp, cfg, _ = workdir
        report = tmp / "r.json"
        out = tmp / "checklist.md"
        run_cli(["fit", "--config", str(cfg), "--out", str(report)])
        run_cli(["checklist", "--config", str(cfg), "--report", str(report), "--out", str(out)])
        answered = [l for l in out.read_text().splitlines() if l.startswith("- **")]
        assert len(answered) == len(BULLETS) == 24

    def test_hash_mismatch(self, workdir, capsys):
        tmp, cfg, _ = workdir
        report = tmp / "r.json"
        run_cli(["fit", "--config", str(cfg), "--out", str(report)])
        changed = yaml.safe_load(cfg.read_text())
        changed["objective"] = {"kind": "mae", "delta": None}
        other = tmp / "changed.yaml"
        other.write_text(yaml.safe_dump(changed))
        code = run_cli(
            ["checklist", "--config", str(other), "--report", str(report), "--out", str(tmp / "c.md")]
        )
        assert code != 0
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["type"] == "HashMismatch"

    def test_every_bullet_answered_nonempty(self, workdir):
        tmp, cfg, _ = workdir
        report_path = tmp / "r.json"
        run_cli(["fit", "--config", str(cfg), "--out", str(report_path)])
        text = render_checklist(ExperimentConfig.load(cfg), load_report(report_path))
        for line in text.splitlines():
            if line.startswith("- **"):
                answer = line.split("**")[-1].strip()
                assert answer, line


class TestCmdFlops:
    def test_toy_arch_numbers(self, tmp_path, toy_arch, capsys):
        table = write_arch_table(tmp_path, {"toy": toy_arch})
        code = run_cli(
            ["flops", "--arch-table", str(table), "--arch-id", "toy", "--tokens", "1000", "--json"]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["n_total"] == 50
        assert out["n_nonembed"] == 38
        assert out["forward_flops_per_token_nonembed"] == 86.0
        assert out["forward_flops_per_token_with_embeddings"] == 110.0
        assert out["c_detailed_with_embeddings"] == 3.0 * 110.0 * 1000
        assert out["c_six_nd_total"] == 6 * 50 * 1000

    def test_six_nd_line_consistency(self, tmp_path, capsys):
        table = write_arch_table(tmp_path, demo_arch_table())
        run_cli(
            ["flops", "--arch-table", str(table), "--arch-id", "xl", "--tokens", "12345", "--json"]
        )
        out = json.loads(capsys.readouterr().out)
        assert out["c_six_nd_total"] == 6 * out["n_total"] * 12345
        assert out["c_six_nd_nonembed"] == 6 * out["n_nonembed"] * 12345
        assert out["ratio_detailed_to_six_nd"] == pytest.approx(
            out["c_detailed_with_embeddings"] / out["c_six_nd_total"]
        )

    def test_12m_shape_prints_both_conventions(self, tmp_path, capsys):
        # 5 layers, hidden 448, 7 heads of size 64, 4x gated FFN, vocab 50257
        table = write_arch_table(tmp_path, demo_arch_table())
        code = run_cli(
            ["flops", "--arch-table", str(table), "--arch-id", "tiny", "--tokens", "1000000"]
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "N (with embeddings):" in text
        assert "N (non-embedding):" in text
        # both conventions present and distinct; no equality with a nominal label
        n_with = int(re.search(r"N \(with embeddings\):\s+(\d+)", text).group(1))
        n_without = int(re.search(r"N \(non-embedding\):\s+(\d+)", text).group(1))
        assert n_with > n_without

    def test_unknown_arch(self, tmp_path, toy_arch, capsys):
        table = write_arch_table(tmp_path, {"toy": toy_arch})
        code = run_cli(
            ["flops", "--arch-table", str(table), "--arch-id", "nope", "--tokens", "10"]
        )
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["type"] == "UnknownArch"
