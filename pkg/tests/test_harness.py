"""Tests for the experiment harness: configs, metrics files, grids, CLI."""

import json
import subprocess
import sys

import numpy as np
import pytest

from fedfusion._errors import ConfigError, ShapeError
from fedfusion.cli import main as cli_main
from fedfusion.harness import (
    OUTPUT_ENV_VAR,
    SCHEMA_VERSION,
    MetricsRow,
    _derive_seed,
    build_seed_data,
    decision_boundary_grid,
    load_bound_config,
    load_experiment_config,
    partition_report,
    read_metrics,
    resolve_output_root,
    rounds_to_target,
    run_bound_suite,
    run_experiment,
    save_boundary_grid,
    write_metrics,
)
from fedfusion.models import Prototype, init_params, load_params, predict_logits
from fedfusion.numerics import softmax


def write_config(path, **overrides):
    """A small valid experiment INI; keyword overrides replace whole lines."""
    lines = {
        "schema_version": "schema_version = 1",
        "seeds": "seeds = 0",
        "output": f"output = {path.parent / 'out'}",
        "classes": "classes = 3",
        "per_class": "per_class = 30",
        "scale": "scale = 0.6",
        "test_per_class": "test_per_class = 30",
        "val_fraction": "val_fraction = 0.2",
        "alpha": "alpha = 1.0",
        "rounds": "rounds = 2",
        "clients": "clients = 4",
        "participation": "participation = 0.5",
        "local_epochs": "local_epochs = 2",
        "local_lr": "local_lr = 0.05",
        "local_batch": "local_batch = 16",
        "strategies": "strategies = fedavg",
        "prototypes": "prototypes = 2,8,3",
        "target": "target = none",
        "centralized_epochs": "centralized_epochs = 3",
    }
    lines.update(overrides)
    text = "\n".join(
        [
            "[experiment]",
            lines["schema_version"],
            lines["seeds"],
            lines["output"],
            "",
            "[dataset]",
            lines["classes"],
            lines["per_class"],
            lines["scale"],
            lines["test_per_class"],
            lines["val_fraction"],
            "",
            "[partition]",
            lines["alpha"],
            "",
            "[federated]",
            lines["rounds"],
            lines["clients"],
            lines["participation"],
            lines["local_epochs"],
            lines["local_lr"],
            lines["local_batch"],
            lines["strategies"],
            lines["prototypes"],
            "",
            "[distillation]",
            "max_steps = 10",
            "patience = 5",
            "pool_size = 32",
            "batch_size = 16",
            "",
            "[evaluation]",
            lines["target"],
            lines["centralized_epochs"],
            "",
        ]
    )
    path.write_text(text)
    return path


def sample_row(round_index=3):
    return MetricsRow(
        round=round_index,
        wall_ms=12.5,
        acc_averaged=0.61,
        acc_fused=0.73,
        acc_ensemble=0.75,
        acc_per_prototype={"p0": 0.73},
        distill_steps=42,
    )


class TestRoundsToTarget:
    def test_first_crossing_is_one_based(self):
        assert rounds_to_target([0.3, 0.8, 0.7], 0.75) == 2

    def test_zero_target_hits_round_one(self):
        assert rounds_to_target([0.3, 0.8], 0.0) == 1

    def test_unreached_target_returns_none(self):
        assert rounds_to_target([0.3, 0.4, 0.5], 0.9) is None

    def test_empty_history_returns_none(self):
        assert rounds_to_target([], 0.1) is None

    def test_reads_acc_fused_from_rows(self):
        rows = [sample_row(1), sample_row(2)]
        rows[0].acc_fused = 0.2
        assert rounds_to_target(rows, 0.7) == 2
        assert rounds_to_target(rows, 0.74) is None

    def test_monotone_in_target(self):
        history = [0.1, 0.4, 0.6, 0.8, 0.9]
        hits = [rounds_to_target(history, t) for t in (0.05, 0.4, 0.75, 0.85)]
        assert hits == [1, 2, 4, 5]


class TestMetricsFile:
    def test_json_roundtrip_is_lossless(self):
        row = sample_row()
        back = MetricsRow.from_json(row.to_json())
        assert back == row

    def test_json_is_deterministic(self):
        assert sample_row().to_json() == sample_row().to_json()

    def test_write_read_roundtrip(self, tmp_path):
        rows = [sample_row(i) for i in range(1, 4)]
        path = tmp_path / "metrics.jsonl"
        write_metrics(rows, path)
        assert read_metrics(path) == rows
        # one JSON object per line
        assert len(path.read_text().strip().splitlines()) == 3


class TestDecisionBoundaryGrid:
    def proto(self):
        return Prototype("grid", (2, 8, 3))

    def test_rows_are_probability_vectors(self):
        params = init_params(self.proto(), 0)
        _, _, probs = decision_boundary_grid(params, (-2.0, 2.0), 7)
        assert probs.shape == (7, 7, 3)
        assert np.allclose(probs.sum(axis=2), 1.0, atol=1e-12)

    def test_orientation_matches_documented_layout(self):
        # probs[i, j] must be the model's prediction at the point (xs[j], ys[i])
        params = init_params(self.proto(), 3)
        xs, ys, probs = decision_boundary_grid(params, (-1.5, 2.5), 5)
        for i in (0, 2, 4):
            for j in (0, 1, 3):
                point = np.array([[xs[j], ys[i]]])
                direct = softmax(predict_logits(params, point))[0]
                assert np.allclose(probs[i, j], direct, atol=1e-15)

    def test_axis_values_span_bounds(self):
        params = init_params(self.proto(), 0)
        xs, ys, _ = decision_boundary_grid(params, (-3.0, 3.0), 9)
        assert xs[0] == -3.0 and xs[-1] == 3.0
        assert np.array_equal(xs, ys)

    def test_rejects_non_planar_prototype(self):
        params = init_params(Prototype("p3", (3, 8, 3)), 0)
        with pytest.raises(ShapeError):
            decision_boundary_grid(params, (-1.0, 1.0), 5)

    def test_rejects_bad_bounds_and_resolution(self):
        params = init_params(self.proto(), 0)
        with pytest.raises(ValueError):
            decision_boundary_grid(params, (1.0, -1.0), 5)
        with pytest.raises(ValueError):
            decision_boundary_grid(params, (-1.0, 1.0), 1)

    def test_csv_export_roundtrips_values(self, tmp_path):
        params = init_params(self.proto(), 1)
        xs, ys, probs = decision_boundary_grid(params, (-1.0, 1.0), 3)
        path = tmp_path / "grid.csv"
        save_boundary_grid(xs, ys, probs, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "x,y,p0,p1,p2"
        assert len(lines) == 1 + 9
        # row-major order: first row of cells is y = ys[0], x sweeping
        first = [float(v) for v in lines[1].split(",")]
        assert first[0] == xs[0] and first[1] == ys[0]
        second = [float(v) for v in lines[2].split(",")]
        assert second[0] == xs[1] and second[1] == ys[0]
        # %.17g roundtrips float64 exactly
        assert first[2:] == [float(p) for p in probs[0, 0]]


class TestSeedDerivation:
    def test_streams_are_distinct_and_stable(self):
        first = [_derive_seed(0, tag) for tag in range(7)]
        again = [_derive_seed(0, tag) for tag in range(7)]
        assert first == again
        assert len(set(first)) == 7

    def test_streams_differ_across_seeds(self):
        assert _derive_seed(0, 0) != _derive_seed(1, 0)


class TestConfigLoading:
    def test_full_config_parses(self, tmp_path):
        path = write_config(
            tmp_path / "exp.ini",
            seeds="seeds = 0, 1",
            strategies="strategies = fedavg, feddf",
            target="target = relative:0.9",
        )
        cfg = load_experiment_config(path)
        assert cfg.seeds == [0, 1]
        assert cfg.classes == 3 and cfg.per_class == 30
        assert cfg.strategies == ["fedavg", "feddf"]
        assert cfg.prototype_widths == [(2, 8, 3)]
        assert cfg.target_mode == "relative" and cfg.target_value == 0.9
        assert cfg.distill["max_steps"] == 10
        assert cfg.distill["pool"] == "heldout"
        assert cfg.activation == "relu"  # default

    def test_prototype_ids_and_round_robin_assignment(self, tmp_path):
        path = write_config(
            tmp_path / "h.ini",
            strategies="strategies = feddf_hetero",
            prototypes="prototypes = 2,8,3 | 2,12,3 | 2,16,3",
            clients="clients = 5",
        )
        cfg = load_experiment_config(path)
        protos = cfg.prototypes()
        assert [p.id for p in protos] == ["p0", "p1", "p2"]
        assert cfg.client_prototype_map() == ["p0", "p1", "p2", "p0", "p1"]

    def test_public_dict_is_json_serializable(self, tmp_path):
        cfg = load_experiment_config(write_config(tmp_path / "exp.ini"))
        blob = json.dumps(cfg.public_dict(), sort_keys=True)
        assert "dataset" in cfg.public_dict()
        assert "federated" in cfg.public_dict()
        assert json.loads(blob) == cfg.public_dict()

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_config(tmp_path / "nope.ini")

    def test_missing_key_names_the_field(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[experiment]\nschema_version = 1\n")
        with pytest.raises(ConfigError, match="experiment.seeds"):
            load_experiment_config(path)

    def test_wrong_schema_version_raises(self, tmp_path):
        path = write_config(tmp_path / "bad.ini", schema_version="schema_version = 99")
        with pytest.raises(ConfigError, match="schema_version"):
            load_experiment_config(path)

    def test_unknown_strategy_raises(self, tmp_path):
        path = write_config(tmp_path / "bad.ini", strategies="strategies = fedsomething")
        with pytest.raises(ConfigError, match="fedsomething"):
            load_experiment_config(path)

    def test_multiple_prototypes_need_hetero(self, tmp_path):
        path = write_config(tmp_path / "bad.ini", prototypes="prototypes = 2,8,3 | 2,12,3")
        with pytest.raises(ConfigError, match="feddf_hetero"):
            load_experiment_config(path)

    def test_prototype_width_must_match_data(self, tmp_path):
        path = write_config(tmp_path / "bad.ini", prototypes="prototypes = 3,8,3")
        with pytest.raises(ConfigError, match="input width"):
            load_experiment_config(path)
        path = write_config(tmp_path / "bad2.ini", prototypes="prototypes = 2,8,4")
        with pytest.raises(ConfigError, match="output width"):
            load_experiment_config(path)

    def test_bad_target_string_raises(self, tmp_path):
        path = write_config(tmp_path / "bad.ini", target="target = eventually")
        with pytest.raises(ConfigError, match="evaluation.target"):
            load_experiment_config(path)


class TestSeedData:
    def cfg(self, tmp_path):
        return load_experiment_config(
            write_config(tmp_path / "exp.ini", strategies="strategies = feddf")
        )

    def test_shapes_and_split_sizes(self, tmp_path):
        cfg = self.cfg(tmp_path)
        data = build_seed_data(cfg, 0)
        assert len(data.train) + len(data.val) == cfg.classes * cfg.per_class
        assert len(data.test) == cfg.classes * cfg.test_per_class
        assert sum(len(s) for s in data.shards) == len(data.train)
        assert data.pool_inputs.shape == (cfg.distill["pool_size"], 2)

    def test_deterministic_per_seed(self, tmp_path):
        cfg = self.cfg(tmp_path)
        a = build_seed_data(cfg, 5)
        b = build_seed_data(cfg, 5)
        assert np.array_equal(a.train.inputs, b.train.inputs)
        assert np.array_equal(a.pool_inputs, b.pool_inputs)
        c = build_seed_data(cfg, 6)
        assert not np.array_equal(a.train.inputs, c.train.inputs)

    def test_partition_report_fields(self, tmp_path):
        cfg = self.cfg(tmp_path)
        report = partition_report(cfg, 0)
        assert report["clients"] == cfg.clients
        assert len(report["clients_detail"]) == cfg.clients
        sizes = [row["size"] for row in report["clients_detail"]]
        assert sum(sizes) == report["train_size"]
        for row in report["clients_detail"]:
            assert sum(row["class_histogram"]) == row["size"]


class TestRunExperiment:
    def test_artifacts_and_summary(self, tmp_path):
        cfg = load_experiment_config(write_config(tmp_path / "exp.ini"))
        summary = run_experiment(cfg)
        root = resolve_output_root(cfg)
        assert (root / "summary.json").is_file()
        rows = read_metrics(root / "seed0" / "fedavg" / "metrics.jsonl")
        assert len(rows) == cfg.rounds
        assert [r.round for r in rows] == [1, 2]
        params = load_params(root / "seed0" / "fedavg" / "final_p0.params", cfg.prototypes())
        assert params.prototype.layer_widths == (2, 8, 3)
        assert summary["schema_version"] == SCHEMA_VERSION
        entry = summary["results"]["fedavg"]["0"]
        assert entry["final_acc_fused"] == rows[-1].acc_fused
        assert 0.0 <= entry["test_acc_fused"] <= 1.0
        assert summary["aggregate"]["fedavg"]["target_reached_count"] == 0

    def test_summary_file_is_reproducible(self, tmp_path):
        cfg = load_experiment_config(write_config(tmp_path / "exp.ini"))
        run_experiment(cfg)
        first = (resolve_output_root(cfg) / "summary.json").read_bytes()
        run_experiment(cfg)
        second = (resolve_output_root(cfg) / "summary.json").read_bytes()
        assert first == second

    def test_relative_target_records_rounds(self, tmp_path):
        cfg = load_experiment_config(
            write_config(tmp_path / "exp.ini", target="target = relative:0.5")
        )
        summary = run_experiment(cfg)
        assert "0" in summary["targets"]
        assert summary["targets"]["0"] == pytest.approx(
            0.5 * summary["centralized"]["0"]["val_accuracy"]
        )

    def test_output_env_var_overrides_root(self, tmp_path, monkeypatch):
        cfg = load_experiment_config(write_config(tmp_path / "exp.ini"))
        override = tmp_path / "elsewhere"
        monkeypatch.setenv(OUTPUT_ENV_VAR, str(override))
        assert resolve_output_root(cfg) == override
        run_experiment(cfg)
        assert (override / "summary.json").is_file()
        assert not (tmp_path / "out" / "summary.json").exists()


class TestBoundSuite:
    def write_bound(self, tmp_path, instances=5):
        path = tmp_path / "bound.ini"
        path.write_text(
            "[bound]\n"
            f"instances = {instances}\n"
            "grid_size = 9\n"
            "ref_size = 2000\n"
            "seed = 0\n"
            f"output = {tmp_path / 'bout'}\n"
        )
        return path

    def test_config_parses_with_defaults(self, tmp_path):
        cfg = load_bound_config(self.write_bound(tmp_path))
        assert cfg.instances == 5
        assert cfg.family == "mixed"
        assert cfg.delta == 0.05
        assert cfg.k_clients is None and cfg.m is None

    def test_bad_bound_configs_raise(self, tmp_path):
        path = tmp_path / "b.ini"
        path.write_text("[bound]\ninstances = 0\noutput = x\n")
        with pytest.raises(ConfigError, match="instances"):
            load_bound_config(path)
        path.write_text("[bound]\ninstances = 3\nfamily = circles\noutput = x\n")
        with pytest.raises(ConfigError, match="family"):
            load_bound_config(path)

    def test_suite_runs_and_reports(self, tmp_path):
        out = run_bound_suite(load_bound_config(self.write_bound(tmp_path)))
        assert out["instances"] == 5
        assert out["holds"] == 5
        assert len(out["reports"]) == 5
        assert (tmp_path / "bout" / "bound_reports.json").is_file()
        on_disk = json.loads((tmp_path / "bout" / "bound_reports.json").read_text())
        assert on_disk["holds"] == out["holds"]


class TestCli:
    def test_run_command_reports_and_exits_zero(self, tmp_path, capsys):
        path = write_config(tmp_path / "exp.ini")
        assert cli_main(["run", str(path)]) == 0
        out = capsys.readouterr().out
        assert "fedavg: mean test acc" in out
        assert "summary.json" in out

    def test_config_error_exits_one(self, tmp_path, capsys):
        path = write_config(tmp_path / "bad.ini", strategies="strategies = fedsomething")
        assert cli_main(["run", str(path)]) == 1
        err = capsys.readouterr().err
        assert err.startswith("config error:")

    def test_partition_stats_is_deterministic(self, tmp_path, capsys):
        path = write_config(tmp_path / "exp.ini")
        assert cli_main(["partition-stats", str(path)]) == 0
        first = capsys.readouterr().out
        assert cli_main(["partition-stats", str(path)]) == 0
        second = capsys.readouterr().out
        assert first == second
        assert "mean label entropy" in first
        assert (tmp_path / "out" / "partition_stats_seed0.json").is_file()

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "fedfusion", "run", str(tmp_path / "missing.ini")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 1
        assert proc.stderr.startswith("config error:")
