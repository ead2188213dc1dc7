"""Config parsing, TOML round trips, and end-to-end CLI exercises."""

import csv
import json

import pytest

from groupmuon.cli import main
from groupmuon.config import (
    DEFAULTS,
    SweepSpec,
    config_to_toml,
    load_run_config,
    parse_run_config,
    parse_sweep_spec,
    sweep_cells,
)
from groupmuon.errors import ConfigFileError
from groupmuon.harness.records import CSV_FIELDS

SMALL_RUN = """
[model]
num_layers = 1
d_model = 24
num_heads = 6
head_dim = 4
vocab_size = 16
seq_len = 8

[optimizer]
kind = "muon_group"
steps = 5
eval_every = 2
batch_size = 4

[grouping]
group_size = 2
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestRunConfig:
    def test_defaults_parse(self):
        cfg = parse_run_config({})
        assert cfg.steps == DEFAULTS["optimizer"]["steps"]
        assert cfg.model.num_heads == 12
        assert cfg.optimizer.kind == "muon_full"
        assert cfg.output_format == "csv"

    def test_seed_section_flows_through(self):
        cfg = parse_run_config({"seeds": {"init": 3, "data": 4, "grouping": 5}})
        assert cfg.model.init_seed == 3
        assert cfg.data_seed == 4
        assert cfg.optimizer.grouping_seed == 5

    def test_unknown_section_named(self):
        with pytest.raises(ConfigFileError, match="sched"):
            parse_run_config({"sched": {}})

    def test_unknown_key_named(self):
        with pytest.raises(ConfigFileError, match="warmup"):
            parse_run_config({"optimizer": {"warmup": 10}})

    def test_type_mismatch_rejected(self):
        with pytest.raises(ConfigFileError, match="steps"):
            parse_run_config({"optimizer": {"steps": "many"}})
        with pytest.raises(ConfigFileError, match="steps"):
            parse_run_config({"optimizer": {"steps": True}})

    def test_incoherent_grouping_rejected(self):
        with pytest.raises(ConfigFileError, match="5"):
            parse_run_config({"grouping": {"group_size": 5}})
        with pytest.raises(ConfigFileError, match="resample"):
            parse_run_config({"grouping": {"resample_each_step": True,
                                           "rule": "adjacent"}})
        with pytest.raises(ConfigFileError, match="ns_iterations"):
            parse_run_config({"optimizer": {"ns_iterations": 0}})

    def test_toml_round_trip_defaults(self, tmp_path):
        cfg = parse_run_config({})
        path = _write(tmp_path, "a.toml", config_to_toml(cfg))
        assert load_run_config(path) == cfg

    def test_toml_round_trip_non_defaults(self, tmp_path):
        cfg = parse_run_config({
            "model": {"task": "char-lm", "num_layers": 1},
            "optimizer": {"kind": "muon_group", "base_lr": 0.005,
                          "nesterov": True},
            "grouping": {"rule": "random", "resample_each_step": True,
                         "group_size": 3, "target": "v"},
            "criterion": {"rank_policy": "relative", "rank_rel_tol": 1e-8},
            "output": {"format": "both", "directory": "exp"},
            "seeds": {"grouping": 11},
        })
        path = _write(tmp_path, "b.toml", config_to_toml(cfg))
        assert load_run_config(path) == cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigFileError):
            load_run_config(tmp_path / "nope.toml")

    def test_malformed_toml(self, tmp_path):
        with pytest.raises(ConfigFileError):
            load_run_config(_write(tmp_path, "bad.toml", "steps = ["))


class TestSweepSpec:
    def test_parse_and_cells(self):
        spec = parse_sweep_spec({"sweep": {"target": ["qk"],
                                           "rule": ["adjacent", "random"],
                                           "group_size": [2], "repetitions": 2}})
        assert sweep_cells(spec) == [
            ("qk", "adjacent", 2, 0), ("qk", "adjacent", 2, 1),
            ("qk", "random", 2, 0), ("qk", "random", 2, 1),
        ]

    def test_empty_axis_rejected(self):
        with pytest.raises(ConfigFileError, match="empty sweep"):
            parse_sweep_spec({"sweep": {"target": [], "rule": ["adjacent"],
                                        "group_size": [1]}})
        with pytest.raises(ConfigFileError, match="empty sweep"):
            SweepSpec(target=("qk",), rule=(), group_size=(1,))

    def test_unknown_values_rejected(self):
        with pytest.raises(ConfigFileError, match="ffn"):
            parse_sweep_spec({"sweep": {"target": ["ffn"], "rule": ["adjacent"],
                                        "group_size": [1]}})


class TestCliTrainAndProfile:
    def test_train_writes_records(self, tmp_path):
        cfg = _write(tmp_path, "run.toml", SMALL_RUN)
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out),
                     "--format", "both"]) == 0
        with open(out / "train.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == list(CSV_FIELDS)
        assert [r["step"] for r in rows if r["split"] == "train"] == [str(i) for i in range(5)]
        assert (out / "train.jsonl").exists()

    def test_train_deterministic_outputs(self, tmp_path):
        cfg = _write(tmp_path, "run.toml", SMALL_RUN)
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert main(["train", "--config", cfg, "--out", str(out)]) == 0
            outs.append((out / "train.csv").read_text())
        assert outs[0] == outs[1]

    def test_profile_writes_only_profile_rows(self, tmp_path):
        cfg = _write(tmp_path, "run.toml", SMALL_RUN)
        out = tmp_path / "prof"
        assert main(["profile", "--config", cfg, "--out", str(out)]) == 0
        with open(out / "profile.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and all(r["split"] == "profile" for r in rows)
        assert all(r["full_rank_ratio"] for r in rows)

    def test_config_errors_exit_2(self, tmp_path):
        bad = _write(tmp_path, "bad.toml", "[optimizer]\ngroup_size = 5\n")
        assert main(["train", "--config", bad, "--out", str(tmp_path / "x")]) == 2
        unknown = _write(tmp_path, "unk.toml", "[optimizer]\nwarmup = 3\n")
        assert main(["train", "--config", unknown, "--out", str(tmp_path / "y")]) == 2
        zero_iter = _write(tmp_path, "it.toml", "[optimizer]\nns_iterations = 0\n")
        assert main(["train", "--config", zero_iter, "--out", str(tmp_path / "z")]) == 2

    def test_divergence_exit_4(self, tmp_path):
        hot = SMALL_RUN.replace('kind = "muon_group"',
                                'kind = "muon_group"\nbase_lr = 80.0\nadaptive_lr = 5.0')
        cfg = _write(tmp_path, "run.toml", hot)
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "d")]) == 4

    def test_bad_log_level_exit_2(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GROUP_MUON_LOG", "verbose")
        cfg = _write(tmp_path, "run.toml", SMALL_RUN)
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "e")]) == 2


class TestCliVerify:
    def test_verify_passes_and_reports(self, tmp_path):
        out = tmp_path / "v"
        assert main(["verify", "--out", str(out)]) == 0
        report = json.loads((out / "verify_report.json").read_text())
        assert len(report) >= 6
        assert all(c["passed"] for c in report)
        assert {c["name"] for c in report} >= {"polar_identities", "bound_validity",
                                               "grouping_golden"}


class TestCliSweep:
    def test_small_sweep_grid(self, tmp_path):
        cfg = _write(tmp_path, "run.toml", SMALL_RUN)
        spec = _write(tmp_path, "sweep.toml",
                      '[sweep]\ntarget = ["qk"]\nrule = ["adjacent"]\n'
                      'group_size = [1, 2]\nrepetitions = 2\n')
        out = tmp_path / "sw"
        assert main(["sweep", "--config", cfg, "--sweep", spec,
                     "--out", str(out), "--format", "both"]) == 0
        with open(out / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        assert all(r["diverged"] == "False" for r in rows)
        # repetitions of a deterministic cell produce identical losses
        by_cell = {}
        for r in rows:
            by_cell.setdefault((r["target"], r["rule"], r["group_size"]), []).append(
                r["final_val_loss"])
        for losses in by_cell.values():
            assert len(set(losses)) == 1
        lines = (out / "sweep.jsonl").read_text().strip().split("\n")
        assert len(lines) == 4 and json.loads(lines[0])["steps"] == 5

    def test_sweep_parallel_matches_serial(self, tmp_path):
        cfg = _write(tmp_path, "run.toml", SMALL_RUN)
        spec = _write(tmp_path, "sweep.toml",
                      '[sweep]\ntarget = ["qk", "v"]\nrule = ["adjacent"]\n'
                      'group_size = [2]\n')
        serial, parallel = tmp_path / "s", tmp_path / "p"
        assert main(["sweep", "--config", cfg, "--sweep", spec,
                     "--out", str(serial)]) == 0
        assert main(["sweep", "--config", cfg, "--sweep", spec,
                     "--out", str(parallel), "--parallel", "2"]) == 0
        assert (serial / "sweep.csv").read_text() == (parallel / "sweep.csv").read_text()

    def test_indivisible_group_size_exit_2(self, tmp_path):
        cfg = _write(tmp_path, "run.toml", SMALL_RUN)
        spec = _write(tmp_path, "sweep.toml",
                      '[sweep]\ntarget = ["qk"]\nrule = ["adjacent"]\ngroup_size = [5]\n')
        assert main(["sweep", "--config", cfg, "--sweep", spec,
                     "--out", str(tmp_path / "bad")]) == 2

    def test_empty_axis_exit_2(self, tmp_path, capsys):
        cfg = _write(tmp_path, "run.toml", SMALL_RUN)
        spec = _write(tmp_path, "sweep.toml",
                      '[sweep]\ntarget = []\nrule = ["adjacent"]\ngroup_size = [1]\n')
        assert main(["sweep", "--config", cfg, "--sweep", spec,
                     "--out", str(tmp_path / "bad")]) == 2
        assert "empty sweep" in capsys.readouterr().err


class TestCliOracle:
    def _last_json(self, capsys):
        out = capsys.readouterr().out.strip().split("\n")
        return json.loads(out[-1])

    def test_aligned_gain(self, capsys):
        assert main(["oracle", "aligned-gain", "k=4", "a=1.0"]) == 0
        payload = self._last_json(capsys)
        assert payload["gain"] == pytest.approx(2.0)
        assert payload["rank_gap"] == 3

    def test_aligned_gain_explicit_strengths(self, capsys):
        assert main(["oracle", "aligned-gain", "k=3", "strengths=1,2,0.5"]) == 0
        payload = self._last_json(capsys)
        assert payload["gain"] == pytest.approx(3.5 - (1 + 4 + 0.25) ** 0.5)

    def test_lr_transfer(self, capsys):
        assert main(["oracle", "lr-transfer", "base_lr=0.02",
                     "full=96x96", "group=8x96"]) == 0
        payload = self._last_json(capsys)
        assert payload["lr"] == pytest.approx(0.02)

    def test_grouping(self, capsys):
        assert main(["oracle", "grouping", "h=12", "g=3", "rule=interval"]) == 0
        payload = self._last_json(capsys)
        assert payload["groups"] == [[0, 4, 8], [1, 5, 9], [2, 6, 10], [3, 7, 11]]

    def test_unknown_kind_exit_2(self, capsys):
        assert main(["oracle", "entropy"]) == 2
        assert "aligned-gain" in capsys.readouterr().err

    def test_missing_parameter_exit_2(self):
        assert main(["oracle", "lr-transfer", "base_lr=0.02"]) == 2
