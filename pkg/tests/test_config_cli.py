import csv
import json
from pathlib import Path

import numpy as np
import pytest

from anchoral import (ConfigError, effective_config_dict, effective_config_json,
                      parse_config, parse_config_dict, read_rounds_csv)
from anchoral.cli import main
from anchoral.runner import median_iqr


class TestParseConfig:
    def test_empty_object_gives_documented_defaults(self):
        cfg = parse_config_dict({})
        assert cfg.filter.type == "anchoral"
        assert cfg.filter.a == 10
        assert cfg.filter.n_neighbors == 50
        assert cfg.filter.max_subpool == 1000
        assert cfg.filter.m == 10000
        assert cfg.filter.k == 50
        assert cfg.loop.budget == 5000
        assert cfg.loop.rounds == 200
        assert cfg.query_size == 25
        assert cfg.loop.n_init == 100
        assert cfg.loop.per_minority == 5
        assert cfg.index.ef_construction == 200
        assert cfg.index.ef_search == 200
        assert cfg.index.max_connections == 64
        assert cfg.strategy.type == "entropy"
        assert cfg.train.batch_size == 32
        assert cfg.train.max_epochs == 10
        assert cfg.train.min_steps == 100
        assert cfg.train.early_stop_delta == 1e-5

    def test_bounds_checked(self):
        with pytest.raises(ConfigError, match="filter.a"):
            parse_config_dict({"filter": {"type": "anchoral", "a": 0}})
        with pytest.raises(ConfigError, match="loop.budget"):
            parse_config_dict({"loop": {"budget": 0}})
        with pytest.raises(ConfigError, match=r"loop\.budget // loop\.rounds"):
            parse_config_dict({"loop": {"budget": 10, "rounds": 100}})

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="'config.nope'"):
            parse_config_dict({"nope": {}})
        with pytest.raises(ConfigError, match="filter.banana"):
            parse_config_dict({"filter": {"type": "anchoral", "banana": 1}})
        # keys belonging to another filter type are unknown for this one
        with pytest.raises(ConfigError, match="filter.m"):
            parse_config_dict({"filter": {"type": "anchoral", "m": 10}})

    def test_type_errors_name_key_and_type(self):
        with pytest.raises(ConfigError, match="'filter.a' expects int, got str"):
            parse_config_dict({"filter": {"type": "anchoral", "a": "ten"}})
        with pytest.raises(ConfigError, match="'train.learning_rate' expects number"):
            parse_config_dict({"train": {"learning_rate": "fast"}})
        with pytest.raises(ConfigError, match="expects int, got bool"):
            parse_config_dict({"loop": {"budget": True}})

    def test_enum_values_checked(self):
        with pytest.raises(ConfigError, match="strategy.type"):
            parse_config_dict({"strategy": {"type": "hope"}})
        with pytest.raises(ConfigError, match="filter.type"):
            parse_config_dict({"filter": {"type": "hope"}})
        with pytest.raises(ConfigError, match="index.type"):
            parse_config_dict({"index": {"type": "hope"}})

    @pytest.mark.parametrize("raw", [
        {},
        {"filter": {"type": "seals", "k": 17}},
        {"filter": {"type": "random_subset", "m": 123}},
        {"filter": {"type": "noop"}},
        {"filter": {"type": "anchoral", "a": 4,
                    "anchor_strategy_overrides": {"0": "entropy"}},
         "strategy": {"type": "badge"},
         "loop": {"budget": 300, "rounds": 10, "time_limit": 5.0}},
    ])
    def test_effective_config_roundtrip(self, raw):
        cfg = parse_config_dict(raw)
        emitted = effective_config_dict(cfg)
        assert parse_config_dict(emitted) == cfg
        again = json.loads(effective_config_json(cfg))
        assert parse_config_dict(again) == cfg

    def test_parse_config_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"strategy": {"type": "random"}}')
        assert parse_config(path).strategy.type == "random"
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(ConfigError, match="invalid JSON"):
            parse_config(bad)

    def test_seed_offset(self):
        cfg = parse_config_dict({"seeds": {"model_init": 10, "data_order": 20,
                                           "initial_set": 30, "selection": 40}})
        shifted = cfg.with_seed_offset(3)
        assert shifted.seeds.model_init == 13
        assert shifted.seeds.selection == 43


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "dataset"
    rc = main(["synth", "--out", str(out), "--n", "600", "--d", "8",
               "--minority-fraction", "0.05", "--minority-clusters", "2",
               "--majority-clusters", "3", "--sigma", "0.3",
               "--center-scale", "4", "--seed", "5", "--test-majority", "200"])
    assert rc == 0
    return out


def cli_config(dataset_dir, tmp_path, **extra):
    data = {
        "dataset": {"dir": str(dataset_dir)},
        "index": {"type": "exact"},
        "filter": {"type": "anchoral", "a": 3, "K": 10, "max_subpool": 60},
        "strategy": {"type": "entropy"},
        "train": {"min_steps": 8, "max_epochs": 2},
        "loop": {"budget": 60, "rounds": 3, "n_init": 20, "per_minority": 3,
                 "record_timing": False},
    }
    data.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


class TestSynthCommand:
    def test_outputs_and_metadata(self, cli_dataset):
        for name in ("train.aemb", "train_labels.csv", "test.aemb",
                     "test_labels.csv", "metadata.json"):
            assert (cli_dataset / name).exists()
        meta = json.loads((cli_dataset / "metadata.json").read_text())
        assert len(meta["cluster_ids"]) == 600
        assert meta["spec"]["n_total"] == 600
        assert meta["spec"]["minority_fraction"] == 0.05

    def test_refuses_overwrite(self, cli_dataset, capsys):
        rc = main(["synth", "--out", str(cli_dataset), "--n", "10"])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("anchoral-error: ")
        assert len(err.strip().splitlines()) == 1


class TestIndexCommand:
    def test_build_and_reuse(self, cli_dataset, tmp_path):
        rc = main(["index", "--dataset", str(cli_dataset)])
        assert rc == 0
        assert (cli_dataset / "index.aidx").exists()
        assert main(["index", "--dataset", str(cli_dataset)]) == 1  # no --force
        assert main(["index", "--dataset", str(cli_dataset), "--force"]) == 0

    def test_run_with_hnsw_index(self, tmp_path):
        dataset = tmp_path / "hnsw_ds"
        assert main(["synth", "--out", str(dataset), "--n", "400", "--d", "8",
                     "--minority-fraction", "0.05", "--minority-clusters", "2",
                     "--majority-clusters", "3", "--seed", "6"]) == 0
        cfg = cli_config(dataset, tmp_path,
                         index={"type": "hnsw", "ef_construction": 40,
                                "ef_search": 40, "max_connections": 8})
        out = tmp_path / "runs_hnsw"
        rc = main(["run", "--config", str(cfg), "--out", str(out), "--build-index"])
        assert rc == 0
        assert (out / "anchoral_entropy_s0" / "rounds.csv").exists()

    def test_param_mismatch_refused(self, cli_dataset, tmp_path, capsys):
        # cli_dataset already holds an index built with default params
        cfg = cli_config(cli_dataset, tmp_path,
                         index={"type": "hnsw", "max_connections": 8,
                                "ef_construction": 40, "ef_search": 40})
        rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")])
        assert rc == 1
        assert "Rebuild or fix the config" in capsys.readouterr().err


class TestRunCommand:
    def test_run_writes_artifacts(self, cli_dataset, tmp_path):
        cfg = cli_config(cli_dataset, tmp_path)
        out = tmp_path / "runs"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        run_dir = out / "anchoral_entropy_s0"
        assert (run_dir / "rounds.csv").exists()
        assert (run_dir / "effective-config.json").exists()
        result = json.loads((run_dir / "result.json").read_text())
        assert result["completed_budget"] == 60
        assert result["dataset_hash"]
        rows = read_rounds_csv(run_dir / "rounds.csv")
        assert len(rows) == result["n_rounds"] == 3

    def test_refuses_rerun_without_force(self, cli_dataset, tmp_path, capsys):
        cfg = cli_config(cli_dataset, tmp_path)
        out = tmp_path / "runs"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 1
        assert "force" in capsys.readouterr().err
        assert main(["run", "--config", str(cfg), "--out", str(out), "--force"]) == 0

    def test_seed_sweep_derivation(self, cli_dataset, tmp_path):
        cfg = cli_config(cli_dataset, tmp_path)
        out = tmp_path / "sweep"
        assert main(["run", "--config", str(cfg), "--out", str(out),
                     "--seeds", "2"]) == 0
        dirs = sorted(p.name for p in out.iterdir())
        assert dirs == ["anchoral_entropy_s0", "anchoral_entropy_s1"]
        cfg0 = json.loads((out / dirs[0] / "effective-config.json").read_text())
        cfg1 = json.loads((out / dirs[1] / "effective-config.json").read_text())
        for stream in ("model_init", "data_order", "initial_set", "selection"):
            assert cfg1["seeds"][stream] == cfg0["seeds"][stream] + 1

    def test_multi_filter_and_report(self, cli_dataset, tmp_path, capsys):
        cfg = cli_config(cli_dataset, tmp_path)
        out = tmp_path / "compare"
        assert main(["run", "--config", str(cfg), "--out", str(out),
                     "--seeds", "2", "--filter", "anchoral",
                     "--filter", "random_subset"]) == 0
        report_dir = tmp_path / "report"
        assert main(["report", str(out), "--out", str(report_dir)]) == 0
        text = (report_dir / "summary.txt").read_text()
        assert "Budget-Matched" in text
        assert "anchoral" in text and "random_subset" in text
        for fname in ("summary.csv", "curve_labeled_minority.csv",
                      "curve_subpool_minority.csv"):
            assert (report_dir / fname).exists()

    def test_parallel_jobs(self, cli_dataset, tmp_path):
        cfg = cli_config(cli_dataset, tmp_path)
        out = tmp_path / "par"
        assert main(["run", "--config", str(cfg), "--out", str(out),
                     "--seeds", "2", "--jobs", "2"]) == 0
        assert (out / "anchoral_entropy_s0" / "result.json").exists()
        assert (out / "anchoral_entropy_s1" / "result.json").exists()


class TestReportCommand:
    def test_single_run_iqr_zero(self, cli_dataset, tmp_path):
        cfg = cli_config(cli_dataset, tmp_path)
        out = tmp_path / "one"
        main(["run", "--config", str(cfg), "--out", str(out)])
        report_dir = tmp_path / "rep"
        assert main(["report", str(out), "--out", str(report_dir)]) == 0
        with open(report_dir / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert all(float(r["budget_iqr"]) == 0.0 for r in rows)

    def test_duplicated_result_keeps_median(self, cli_dataset, tmp_path):
        cfg = cli_config(cli_dataset, tmp_path)
        out = tmp_path / "dup"
        main(["run", "--config", str(cfg), "--out", str(out)])
        single = json.loads((out / "anchoral_entropy_s0" / "result.json").read_text())
        import shutil
        shutil.copytree(out / "anchoral_entropy_s0", out / "anchoral_entropy_s1")
        report_dir = tmp_path / "rep_dup"
        assert main(["report", str(out), "--out", str(report_dir)]) == 0
        with open(report_dir / "summary.csv") as fh:
            row = next(csv.DictReader(fh))
        assert float(row["auc_minority_median"]) == pytest.approx(single["auc_minority"])
        assert float(row["auc_minority_iqr"]) == 0.0

    def test_table_matches_hand_recomputation(self, cli_dataset, tmp_path):
        cfg = cli_config(cli_dataset, tmp_path)
        out = tmp_path / "hand"
        main(["run", "--config", str(cfg), "--out", str(out), "--seeds", "3"])
        report_dir = tmp_path / "rep_hand"
        main(["report", str(out), "--out", str(report_dir)])
        # oracle: recompute the minority AUC median from the rounds.csv files
        aucs = []
        for run_dir in sorted(out.iterdir()):
            rows = read_rounds_csv(run_dir / "rounds.csv")
            xs = [r["labeled_total"] for r in rows]
            ys = [r["minority_f1"] for r in rows]
            area = float(np.trapezoid(ys, xs))
            aucs.append(area)
        with open(report_dir / "summary.csv") as fh:
            row = next(csv.DictReader(fh))
        assert float(row["auc_minority_median"]) == pytest.approx(
            median_iqr(aucs).median, abs=1e-9)

    def test_hash_mismatch_refused(self, cli_dataset, tmp_path, capsys):
        other = tmp_path / "other_ds"
        main(["synth", "--out", str(other), "--n", "500", "--d", "8",
              "--minority-fraction", "0.05", "--minority-clusters", "2",
              "--majority-clusters", "3", "--seed", "99"])
        cfg_a = cli_config(cli_dataset, tmp_path)
        out_a = tmp_path / "runs_a"
        main(["run", "--config", str(cfg_a), "--out", str(out_a)])
        cfg_b = tmp_path / "cfg_b.json"
        data = json.loads(cfg_a.read_text())
        data["dataset"]["dir"] = str(other)
        cfg_b.write_text(json.dumps(data))
        out_b = tmp_path / "runs_b"
        main(["run", "--config", str(cfg_b), "--out", str(out_b)])
        rc = main(["report", str(out_a), str(out_b), "--out", str(tmp_path / "repx")])
        assert rc == 1
        assert "refusing to mix" in capsys.readouterr().err

    def test_error_line_is_machine_parsable(self, tmp_path, capsys):
        rc = main(["run", "--config", str(tmp_path / "missing.json"),
                   "--out", str(tmp_path / "o")])
        assert rc == 1
        err = capsys.readouterr().err.strip()
        assert len(err.splitlines()) == 1
        assert err.startswith("anchoral-error: ")
