import json
import math

import pytest
import yaml

from lawlab.config import DEFAULTS, ExperimentConfig, MatrixConfig, deep_merge
from lawlab.errors import ConfigError
from lawlab.forms import TiedParams, dict_to_vector, optimal_allocation, vector_to_params
from lawlab.ledger import Dataset, RunRecord, to_csv
from lawlab.report import run_experiment, run_matrix, serialize_report, strip_timing
from lawlab.synth import final_checkpoint_dataset


class TestConfig:
    def test_empty_config_gets_defaults(self, tmp_path):
        cfg = ExperimentConfig.from_dict({}, tmp_path)
        assert cfg.raw == DEFAULTS
        assert cfg.form == "chinchilla"
        assert cfg.objective_spec().kind == "log_huber"
        assert cfg.objective_spec().delta == 1e-3
        assert cfg.optimizer_spec().tol == 1e-6

    def test_schema_violation_reports_section(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict({"hypothesis": {"form": "bogus"}}, tmp_path)
        assert exc.value.section == "hypothesis.form"

    def test_nls_with_log_huber_cites_optimizer_kind(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict({"optimizer": {"kind": "nls"}}, tmp_path)
        assert exc.value.section == "optimizer.kind"

    def test_detailed_without_arch_table_rejected(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict({"counting": {"flop_method": "detailed"}}, tmp_path)
        assert exc.value.section == "counting.arch_table"

    def test_round_trip_is_fixed_point(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {"hypothesis": {"form": "tied"}, "objective": {"kind": "mse", "delta": None}},
            tmp_path,
        )
        text = cfg.to_yaml()
        cfg2 = ExperimentConfig.from_dict(yaml.safe_load(text), tmp_path)
        assert cfg2.raw == cfg.raw
        assert cfg2.to_yaml() == text
        assert cfg2.sha256() == cfg.sha256()

    def test_preset_loading(self, tmp_path):
        presets = {
            "reference": {"log_e": 0.5, "log_a": math.log(406.4), "log_b": math.log(410.7),
                           "alpha": 0.34, "beta": 0.28}
        }
        (tmp_path / "presets.json").write_text(json.dumps(presets))
        cfg = ExperimentConfig.from_dict(
            {"init": {"strategy": "fixed", "preset_file": "presets.json", "preset": "reference"}},
            tmp_path,
        )
        strategy = cfg.init_strategy()
        assert strategy.kind == "fixed"
        assert strategy.params[3] == 0.34

    def test_missing_preset_name_cites_section(self, tmp_path):
        (tmp_path / "presets.json").write_text("{}")
        cfg = ExperimentConfig.from_dict(
            {"init": {"strategy": "fixed", "preset_file": "presets.json", "preset": "nope"}},
            tmp_path,
        )
        with pytest.raises(ConfigError) as exc:
            cfg.init_strategy()
        assert exc.value.section == "init.preset"

    def test_fixed_without_source_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"init": {"strategy": "fixed"}}, tmp_path)

    def test_isoflop_budget_forms(self, tmp_path):
        explicit = ExperimentConfig.from_dict(
            {"isoflop": {"enabled": True, "budgets": [1e15, 1e16]}}, tmp_path
        )
        assert explicit.isoflop_budgets() == ([1e15, 1e16], 8)
        auto = ExperimentConfig.from_dict(
            {"isoflop": {"enabled": True, "budgets": {"auto": {"count": 5}}}}, tmp_path
        )
        assert auto.isoflop_budgets() == (None, 5)

    def test_deep_merge_replaces_scalars_and_recurses(self):
        merged = deep_merge({"a": {"b": 1, "c": 2}, "d": 3}, {"a": {"b": 9}})
        assert merged == {"a": {"b": 9, "c": 2}, "d": 3}


def minimal_config(tmp_path, data_path, **overrides):
    base = {
        "data": {"path": str(data_path)},
        "init": {"strategy": "top_k_of_grid", "k": 10},
        "report": {
            "reference_points": [
                {"label": "mid", "c": 1e9},
                {"label": "big", "c": 1e12, "n": 1.5e4, "d": 2e7},
            ]
        },
    }
    return ExperimentConfig.from_dict(deep_merge(base, overrides), tmp_path)


@pytest.fixture
def small_csv(tmp_path, known_params):
    ds = final_checkpoint_dataset(known_params, count=20, seed=11)
    path = tmp_path / "runs.csv"
    path.write_text(to_csv(ds), encoding="utf-8")
    return path


class TestRunExperiment:
    def test_report_recovers_generating_params(self, tmp_path, small_csv, known_params):
        cfg = minimal_config(tmp_path, small_csv)
        report = run_experiment(cfg)
        assert report["schema_version"] == 1
        assert report["dataset"]["n_ingested"] == 20
        params = report["fit"]["best"]["params"]
        assert abs(params["alpha"] - known_params.alpha) < 1e-3
        assert abs(params["beta"] - known_params.beta) < 1e-3
        assert report["config"] == cfg.raw
        assert report["config_sha256"] == cfg.sha256()

    def test_allocation_recomputable(self, tmp_path, small_csv):
        cfg = minimal_config(tmp_path, small_csv)
        report = run_experiment(cfg)
        fitted = vector_to_params("chinchilla", dict_to_vector("chinchilla", report["params"]))
        for entry in report["allocation"]:
            n_opt, d_opt, rho = optimal_allocation(fitted, entry["c"])
            assert abs(n_opt - entry["n_opt"]) <= 1e-10 * abs(n_opt)
            assert abs(d_opt - entry["d_opt"]) <= 1e-10 * abs(d_opt)
            assert abs(rho - entry["rho"]) <= 1e-10 * abs(rho)

    def test_reports_byte_identical_minus_timing(self, tmp_path, small_csv):
        cfg = minimal_config(tmp_path, small_csv)
        a = serialize_report(strip_timing(run_experiment(cfg)))
        b = serialize_report(strip_timing(run_experiment(cfg)))
        assert a == b

    def test_validation_block_with_split_and_bootstrap(self, tmp_path, known_params):
        ds = final_checkpoint_dataset(known_params, count=30, seed=13, noise_sigma=0.02)
        path = tmp_path / "noisy.csv"
        path.write_text(to_csv(ds), encoding="utf-8")
        cs = sorted(6.0 * r.n_total * r.tokens_seen for r in ds.records)
        cfg = minimal_config(
            tmp_path,
            path,
            validation={"split_c": cs[len(cs) // 2], "bootstrap": {"b": 4, "seed": 0}},
            optimizer={"max_iter": 200},
        )
        report = run_experiment(cfg)
        assert "extrapolation" in report["validation"]
        assert "bootstrap" in report["validation"]
        assert set(report["validation"]["bootstrap"]["intervals"]) == {
            "log_e", "log_a", "log_b", "alpha", "beta",
        }

    def test_degenerate_fit_reported_not_clipped(self):
        # a kaplan vector with a negative exponent is a reportable outcome:
        # coordinates stay verbatim, only the natural-parameter view is absent
        from lawlab.report import _natural_params

        degenerate = {"log_nc": 30.0, "log_dc": 1.0, "alpha_n": 0.05, "alpha_d": -0.2}
        assert _natural_params("kaplan", degenerate) is None
        healthy = {"log_nc": 30.0, "log_dc": 1.0, "alpha_n": 0.05, "alpha_d": 0.2}
        natural = _natural_params("kaplan", healthy)
        assert natural["alpha_d"] == 0.2

    def test_kaplan_report_notes_orientation_and_omits_allocation(self, tmp_path, small_csv):
        cfg = minimal_config(
            tmp_path,
            small_csv,
            hypothesis={"form": "kaplan"},
            init={"strategy": "top_k_of_grid", "k": 5},
            optimizer={"max_iter": 100},
        )
        report = run_experiment(cfg)
        assert report["allocation"] is None
        assert any("decreasing orientation" in note for note in report["notes"])

    def test_isoflop_block(self, tmp_path, tied_params):
        from lawlab.synth import isoflop_dataset

        ds = isoflop_dataset(tied_params, [2**k * 10**6 for k in range(7)])
        path = tmp_path / "iso.csv"
        path.write_text(to_csv(ds), encoding="utf-8")
        cfg = minimal_config(
            tmp_path,
            path,
            hypothesis={"form": "tied"},
            isoflop={"enabled": True, "budgets": {"auto": {"count": 6}}},
            init={"strategy": "top_k_of_grid", "k": 5},
        )
        report = run_experiment(cfg)
        assert report["isoflop"] is not None
        assert report["isoflop"]["ratio"]["exp_a"] == pytest.approx(0.5, abs=0.05)
        assert "allocation" in report["isoflop"]


class TestRunMatrix:
    def make_matrix(self, tmp_path, data_path, variants):
        base = {
            "data": {"path": str(data_path)},
            "init": {"strategy": "top_k_of_grid", "k": 5},
            "optimizer": {"max_iter": 200},
            "report": {"reference_points": [{"label": "ref", "c": 1e9}]},
        }
        matrix_path = tmp_path / "matrix.yaml"
        matrix_path.write_text(yaml.safe_dump({"base": base, "variants": variants}))
        return MatrixConfig.load(matrix_path)

    def test_identical_variants_identical_rows(self, tmp_path, small_csv):
        matrix = self.make_matrix(
            tmp_path, small_csv, [{"name": "a", "overrides": {}}, {"name": "b", "overrides": {}}]
        )
        summary = run_matrix(matrix, tmp_path / "out")
        rows = summary["variants"]
        assert len(rows) == 2
        a, b = (dict(r) for r in rows)
        a.pop("variant"), b.pop("variant")
        assert a == b

    def test_failures_recorded_run_continues(self, tmp_path, small_csv):
        matrix = self.make_matrix(
            tmp_path,
            small_csv,
            [
                {"name": "ok", "overrides": {}},
                {"name": "bad", "overrides": {"data": {"path": "missing.csv"}}},
            ],
        )
        summary = run_matrix(matrix, tmp_path / "out")
        assert [f["variant"] for f in summary["failures"]] == ["bad"]
        assert [r["variant"] for r in summary["variants"]] == ["ok"]
        assert (tmp_path / "out" / "comparison.csv").exists()

    def test_lowest_objective_flagged(self, tmp_path, known_params):
        ds = final_checkpoint_dataset(known_params, count=25, seed=17, noise_sigma=0.05)
        path = tmp_path / "noisy.csv"
        path.write_text(to_csv(ds), encoding="utf-8")
        matrix = self.make_matrix(
            tmp_path,
            path,
            [
                {"name": "log_huber", "overrides": {}},
                {"name": "mse_log", "overrides": {"objective": {"kind": "mse", "delta": None, "space": "log"}}},
            ],
        )
        summary = run_matrix(matrix, tmp_path / "out")
        flags = [r["lowest_objective"] for r in summary["variants"]]
        assert flags.count(True) == 1

    def test_comparison_csv_recomputable_from_reports(self, tmp_path, small_csv):
        matrix = self.make_matrix(
            tmp_path,
            small_csv,
            [
                {"name": "base", "overrides": {}},
                {"name": "tied", "overrides": {"hypothesis": {"form": "tied"}}},
            ],
        )
        out = tmp_path / "out"
        run_matrix(matrix, out)
        csv_lines = (out / "comparison.csv").read_text().splitlines()
        header = csv_lines[0].split(",")
        for line in csv_lines[1:]:
            row = dict(zip(header, line.split(",")))
            report = json.loads((out / f"report-{row['variant']}.json").read_text())
            natural = report["natural_params"]
            assert float(row["objective"]) == report["fit"]["best"]["objective"]
            assert float(row["alpha"]) == natural["alpha"]
            assert float(row["beta"]) == natural["beta"]
            expected_exp = natural["beta"] / (natural["alpha"] + natural["beta"])
            assert float(row["allocation_exponent"]) == expected_exp
            alloc = {e["label"]: e["n_opt"] for e in report["allocation"]}
            assert float(row["n_opt@ref"]) == alloc["ref"]

    def test_dn_ratio_variants_order_fitted_rho(self, tmp_path):
        # two regions generated from different laws: low-ratio records follow a
        # law with optimum rho=14, high-ratio records one with rho=30; ratio
        # filters then pull the fitted optimum in the filter's direction
        low = TiedParams(0.3, 8.0 - 0.5 * math.log(14.0), 8.0, 0.5)
        high = TiedParams(0.3, 8.0 - 0.5 * math.log(30.0), 8.0, 0.5)
        records = []
        for k in range(6):
            n = 2**k * 10**6
            for i, rho in enumerate((5.0, 9.0, 13.0, 17.0)):
                d = int(rho * n)
                from lawlab.forms import predict_loss

                records.append(
                    RunRecord(
                        run_id=f"lo-{k}-{i}", n_total=n, n_nonembed=n, tokens_seen=d,
                        step=1, total_steps=1, peak_lr=1e-3,
                        loss=float(predict_loss("tied", low, float(n), float(d))),
                        source="syn",
                    )
                )
            for i, rho in enumerate((23.0, 28.0, 34.0, 40.0)):
                d = int(rho * n)
                from lawlab.forms import predict_loss

                records.append(
                    RunRecord(
                        run_id=f"hi-{k}-{i}", n_total=n, n_nonembed=n, tokens_seen=d,
                        step=1, total_steps=1, peak_lr=1e-3,
                        loss=float(predict_loss("tied", high, float(n), float(d))),
                        source="syn",
                    )
                )
        path = tmp_path / "mix.csv"
        path.write_text(to_csv(Dataset(tuple(records), label="mix")))
        matrix = self.make_matrix(
            tmp_path,
            path,
            [
                {"name": "dn_le_18", "overrides": {"data": {"filters": {"dn_max": 18}}}},
                {"name": "dn_ge_22", "overrides": {"data": {"filters": {"dn_min": 22}}}},
            ],
        )
        out = tmp_path / "out"
        run_matrix(matrix, out)
        reports = {
            name: json.loads((out / f"report-{name}.json").read_text())
            for name in ("dn_le_18", "dn_ge_22")
        }
        rhos = {}
        for name, report in reports.items():
            p = vector_to_params("chinchilla", dict_to_vector("chinchilla", report["params"]))
            rhos[name] = optimal_allocation(p, 1e22)[2]
        assert rhos["dn_ge_22"] > rhos["dn_le_18"]
