"""End-to-end command-line behavior, run in process."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import pytest

from trajfuse.cli import OUT_DIR_ENV, main
from trajfuse.io import load_fused, load_manifest


SYNTH_ARGV = ["synth", "--samples", "30", "--horizon", "6", "--seed", "123",
              "--threads", "1"]

SYNTH_FILES = {
    "manifest.json", "predictions.ndjson", "ground_truth.ndjson",
    "fused_weighted.ndjson", "fused_simple.ndjson", "fused_threshold.ndjson",
    "summary.csv", "overlap.csv",
}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("synth_data")
    assert main(SYNTH_ARGV + ["--out", str(out)]) == 0
    return out


def eval_argv(dataset: Path, out: str, *extra: str) -> list[str]:
    return [
        "eval",
        "--manifest", str(dataset / "manifest.json"),
        "--predictions", str(dataset / "predictions.ndjson"),
        "--ground-truth", str(dataset / "ground_truth.ndjson"),
        "--out", out,
        *extra,
    ]


def stderr_payload(capsys) -> dict:
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


class TestSynth:
    def test_writes_the_full_file_set(self, dataset):
        assert {p.name for p in dataset.iterdir()} == SYNTH_FILES

    def test_manifest_matches_run(self, dataset):
        manifest = load_manifest(str(dataset / "manifest.json"))
        assert manifest.sample_count == 30
        assert manifest.horizon == 6
        assert manifest.model_ids == ("const_velocity", "const_turn_rate", "noisy_oracle")

    def test_fused_files_cover_every_sample(self, dataset):
        for name in ("fused_weighted", "fused_simple", "fused_threshold"):
            fused = list(load_fused(str(dataset / f"{name}.ndjson")))
            assert len(fused) == 30
            assert [f.sample_id for f in fused] == sorted(f.sample_id for f in fused)

    def test_summary_lists_members_and_ensembles(self, dataset):
        with open(dataset / "summary.csv", encoding="utf-8", newline="") as f:
            methods = [row["method"] for row in csv.DictReader(f)]
        assert methods == ["const_turn_rate", "const_velocity", "ensemble_simple",
                           "ensemble_threshold", "ensemble_weighted", "noisy_oracle"]

    def test_reruns_are_byte_identical_across_thread_counts(self, dataset, tmp_path):
        serial = tmp_path / "serial"
        threaded = tmp_path / "threaded"
        base = ["synth", "--samples", "30", "--horizon", "6", "--seed", "123"]
        assert main(base + ["--threads", "1", "--out", str(serial)]) == 0
        assert main(base + ["--threads", "4", "--out", str(threaded)]) == 0
        for name in SYNTH_FILES:
            assert (serial / name).read_bytes() == (threaded / name).read_bytes(), name
            assert (serial / name).read_bytes() == (dataset / name).read_bytes(), name

    def test_bad_samples_rejected(self, tmp_path, capsys):
        assert main(["synth", "--samples", "0", "--out", str(tmp_path / "o")]) == 1
        assert stderr_payload(capsys)["error"] == "InvalidInput"

    def test_bad_mix_rejected(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        assert main(["synth", "--samples", "5", "--mix", "1,2", "--out", out]) == 1
        assert main(["synth", "--samples", "5", "--mix", "0.5,0.4,0.2", "--out", out]) == 1
        assert stderr_payload(capsys)["error"] == "InvalidInput"

    def test_explicit_primary_model(self, tmp_path):
        out = tmp_path / "o"
        assert main(["synth", "--samples", "5", "--strategy", "threshold",
                     "--primary-model", "noisy_oracle", "--tau", "0.9",
                     "--out", str(out)]) == 0
        assert (out / "fused_threshold.ndjson").exists()

    def test_unknown_primary_model(self, tmp_path, capsys):
        assert main(["synth", "--samples", "5", "--strategy", "threshold",
                     "--primary-model", "stranger", "--out", str(tmp_path / "o")]) == 1
        assert stderr_payload(capsys)["error"] == "InvalidInput"


class TestFuse:
    def test_fuses_to_sorted_ndjson(self, dataset, tmp_path):
        out = str(tmp_path / "fused.ndjson")
        assert main(["fuse",
                     "--manifest", str(dataset / "manifest.json"),
                     "--predictions", str(dataset / "predictions.ndjson"),
                     "--out", out]) == 0
        fused = list(load_fused(out))
        assert len(fused) == 30
        assert all(f.strategy == "weighted" for f in fused)

    def test_matches_synth_dump(self, dataset, tmp_path):
        # Fusing the written predictions reproduces the synth run's file.
        out = tmp_path / "refused.ndjson"
        assert main(["fuse",
                     "--manifest", str(dataset / "manifest.json"),
                     "--predictions", str(dataset / "predictions.ndjson"),
                     "--out", str(out)]) == 0
        assert out.read_bytes() == (dataset / "fused_weighted.ndjson").read_bytes()

    def test_threshold_strategy(self, dataset, tmp_path):
        out = str(tmp_path / "fused.ndjson")
        assert main(["fuse",
                     "--manifest", str(dataset / "manifest.json"),
                     "--predictions", str(dataset / "predictions.ndjson"),
                     "--strategy", "threshold", "--primary-model", "const_turn_rate",
                     "--tau", "0.5", "--out", out]) == 0
        strategies = {f.strategy for f in load_fused(out)}
        assert strategies <= {"threshold", "weighted"}

    def test_all_is_not_a_fuse_strategy(self, dataset, tmp_path, capsys):
        assert main(["fuse",
                     "--manifest", str(dataset / "manifest.json"),
                     "--predictions", str(dataset / "predictions.ndjson"),
                     "--strategy", "all", "--out", str(tmp_path / "f")]) == 1
        assert stderr_payload(capsys)["error"] == "UsageError"

    def test_tau_without_threshold_rejected(self, dataset, tmp_path, capsys):
        assert main(["fuse",
                     "--manifest", str(dataset / "manifest.json"),
                     "--predictions", str(dataset / "predictions.ndjson"),
                     "--tau", "0.5", "--out", str(tmp_path / "f")]) == 1
        payload = stderr_payload(capsys)
        assert payload["error"] == "InvalidInput"
        assert "tau" in payload["message"]

    def test_primary_without_threshold_rejected(self, dataset, tmp_path, capsys):
        assert main(["fuse",
                     "--manifest", str(dataset / "manifest.json"),
                     "--predictions", str(dataset / "predictions.ndjson"),
                     "--primary-model", "const_velocity",
                     "--out", str(tmp_path / "f")]) == 1
        assert stderr_payload(capsys)["error"] == "InvalidInput"

    def test_duplicate_across_prediction_files_rejected(self, dataset, tmp_path, capsys):
        pred = str(dataset / "predictions.ndjson")
        assert main(["fuse",
                     "--manifest", str(dataset / "manifest.json"),
                     "--predictions", pred, pred,
                     "--out", str(tmp_path / "f")]) == 1
        assert "twice" in stderr_payload(capsys)["message"]

    def test_missing_manifest_is_io_error(self, dataset, tmp_path, capsys):
        assert main(["fuse",
                     "--manifest", str(tmp_path / "nope.json"),
                     "--predictions", str(dataset / "predictions.ndjson"),
                     "--out", str(tmp_path / "f")]) == 2
        assert stderr_payload(capsys)["error"] == "IOError"

    def test_malformed_prediction_line(self, dataset, tmp_path, capsys):
        broken = tmp_path / "broken.ndjson"
        broken.write_text((dataset / "predictions.ndjson").read_text()
                          + '{"sample_id": "sX"}\n')
        assert main(["fuse",
                     "--manifest", str(dataset / "manifest.json"),
                     "--predictions", str(broken),
                     "--out", str(tmp_path / "f")]) == 1
        assert stderr_payload(capsys)["error"] == "ParseError"


class TestEval:
    def test_default_summary(self, dataset, tmp_path):
        out = tmp_path / "summary.csv"
        assert main(eval_argv(dataset, str(out))) == 0
        with open(out, encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        assert [r["method"] for r in rows] == [
            "const_turn_rate", "const_velocity", "ensemble_weighted", "noisy_oracle",
        ]
        assert "top10_ade" in rows[0]

    def test_strategy_all_needs_primary(self, dataset, tmp_path, capsys):
        assert main(eval_argv(dataset, str(tmp_path / "s.csv"),
                              "--strategy", "all")) == 1
        assert "primary" in stderr_payload(capsys)["message"]

    def test_strategy_all_with_primary(self, dataset, tmp_path):
        out = tmp_path / "summary.csv"
        assert main(eval_argv(dataset, str(out), "--strategy", "all",
                              "--primary-model", "const_turn_rate")) == 0
        with open(out, encoding="utf-8", newline="") as f:
            methods = {r["method"] for r in csv.DictReader(f)}
        assert {"ensemble_weighted", "ensemble_simple", "ensemble_threshold"} <= methods

    def test_matches_synth_summary(self, dataset, tmp_path):
        # Evaluating the dumped files reproduces the synth run's summary.
        out = tmp_path / "summary.csv"
        assert main(eval_argv(dataset, str(out), "--strategy", "all",
                              "--primary-model", "const_turn_rate")) == 0
        assert out.read_bytes() == (dataset / "summary.csv").read_bytes()

    def test_k_list_controls_columns(self, dataset, tmp_path):
        out = tmp_path / "summary.csv"
        assert main(eval_argv(dataset, str(out), "--k-list", "5,50")) == 0
        header = out.read_text().splitlines()[0]
        assert header == "method,top5_ade,top5_fde,top50_ade,top50_fde,overall_ade,overall_fde"

    def test_json_format(self, dataset, tmp_path):
        out = tmp_path / "summary.json"
        assert main(eval_argv(dataset, str(out), "--format", "json")) == 0
        rows = json.load(open(out, encoding="utf-8"))
        assert all(isinstance(r["overall_ade"], float) for r in rows)

    def test_sort_by_ade_runs(self, dataset, tmp_path):
        assert main(eval_argv(dataset, str(tmp_path / "s.csv"), "--sort-by-ade")) == 0

    def test_bad_k_list(self, dataset, tmp_path, capsys):
        assert main(eval_argv(dataset, str(tmp_path / "s.csv"),
                              "--k-list", "abc")) == 1
        assert main(eval_argv(dataset, str(tmp_path / "s.csv"),
                              "--k-list", "0")) == 1
        assert stderr_payload(capsys)["error"] == "InvalidInput"

    def test_missing_ground_truth_record(self, dataset, tmp_path, capsys):
        trimmed = tmp_path / "gt.ndjson"
        lines = (dataset / "ground_truth.ndjson").read_text().splitlines()
        trimmed.write_text("\n".join(lines[:-1]) + "\n")
        argv = eval_argv(dataset, str(tmp_path / "s.csv"))
        argv[argv.index("--ground-truth") + 1] = str(trimmed)
        assert main(argv) == 1
        assert "no ground truth" in stderr_payload(capsys)["message"]

    def test_threads_flag_does_not_change_output(self, dataset, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert main(eval_argv(dataset, str(a), "--threads", "1")) == 0
        assert main(eval_argv(dataset, str(b), "--threads", "4")) == 0
        assert a.read_bytes() == b.read_bytes()


class TestOverlap:
    def argv(self, dataset: Path, out: str, *extra: str) -> list[str]:
        return [
            "overlap",
            "--manifest", str(dataset / "manifest.json"),
            "--predictions", str(dataset / "predictions.ndjson"),
            "--ground-truth", str(dataset / "ground_truth.ndjson"),
            "--out", out,
            *extra,
        ]

    def test_matches_synth_overlap(self, dataset, tmp_path):
        out = tmp_path / "overlap.csv"
        assert main(self.argv(dataset, str(out))) == 0
        assert out.read_bytes() == (dataset / "overlap.csv").read_bytes()

    def test_json_format(self, dataset, tmp_path):
        out = tmp_path / "overlap.json"
        assert main(self.argv(dataset, str(out), "--format", "json")) == 0
        payload = json.load(open(out, encoding="utf-8"))
        assert set(payload["sizes"]) == {"const_velocity", "const_turn_rate", "noisy_oracle"}

    def test_overlap_k_bounds(self, dataset, tmp_path, capsys):
        assert main(self.argv(dataset, str(tmp_path / "o.csv"),
                              "--overlap-k", "0")) == 1
        assert main(self.argv(dataset, str(tmp_path / "o.csv"),
                              "--overlap-k", "101")) == 1
        assert stderr_payload(capsys)["error"] == "InvalidInput"

    def test_single_model_manifest_rejected(self, dataset, tmp_path, capsys):
        manifest = json.load(open(dataset / "manifest.json", encoding="utf-8"))
        manifest["model_ids"] = ["const_velocity"]
        lone = tmp_path / "manifest.json"
        lone.write_text(json.dumps(manifest))
        argv = self.argv(dataset, str(tmp_path / "o.csv"))
        argv[argv.index("--manifest") + 1] = str(lone)
        assert main(argv) == 1
        assert "at least 2" in stderr_payload(capsys)["message"]


class TestFlags:
    def test_floor_above_one_flags_everything(self, dataset, tmp_path):
        out = tmp_path / "flags.json"
        assert main(["flags", "--fused", str(dataset / "fused_weighted.ndjson"),
                     "--confidence-floor", "1.01", "--format", "json",
                     "--out", str(out)]) == 0
        payload = json.load(open(out, encoding="utf-8"))
        assert payload["count"] == 30

    def test_floor_zero_flags_nothing(self, dataset, tmp_path):
        out = tmp_path / "flags.csv"
        assert main(["flags", "--fused", str(dataset / "fused_weighted.ndjson"),
                     "--confidence-floor", "0", "--out", str(out)]) == 0
        assert out.read_text().splitlines() == ["sample_id,confidence"]

    def test_flagged_subset_matches_recomputation(self, dataset, tmp_path):
        fused_path = str(dataset / "fused_weighted.ndjson")
        expected = sorted(
            (p.sample_id, p.confidence)
            for p in load_fused(fused_path)
            if p.confidence < 0.9
        )
        assert 0 < len(expected) < 30
        out = tmp_path / "flags.json"
        assert main(["flags", "--fused", fused_path, "--confidence-floor", "0.9",
                     "--format", "json", "--out", str(out)]) == 0
        payload = json.load(open(out, encoding="utf-8"))
        assert [(f["sample_id"], f["confidence"]) for f in payload["flagged"]] == expected

    def test_csv_confidences_roundtrip(self, dataset, tmp_path):
        fused_path = str(dataset / "fused_weighted.ndjson")
        out = tmp_path / "flags.csv"
        assert main(["flags", "--fused", fused_path, "--confidence-floor", "1.01",
                     "--out", str(out)]) == 0
        by_id = {p.sample_id: p.confidence for p in load_fused(fused_path)}
        with open(out, encoding="utf-8", newline="") as f:
            for row in csv.DictReader(f):
                assert float(row["confidence"]) == by_id[row["sample_id"]]

    def test_infinite_floor_rejected(self, dataset, tmp_path, capsys):
        assert main(["flags", "--fused", str(dataset / "fused_weighted.ndjson"),
                     "--confidence-floor", "inf", "--out", str(tmp_path / "f")]) == 1
        assert stderr_payload(capsys)["error"] == "InvalidInput"


class TestConfigFile:
    def test_config_supplies_defaults_and_flags_win(self, dataset, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"k_list": "5", "format": "json"}))
        out = tmp_path / "summary.csv"
        assert main(eval_argv(dataset, str(out), "--config", str(config),
                              "--format", "csv")) == 0
        header = out.read_text().splitlines()[0]
        # k_list came from the config; format came from the explicit flag.
        assert header == "method,top5_ade,top5_fde,overall_ade,overall_fde"

    def test_config_alone_sets_format(self, dataset, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"format": "json"}))
        out = tmp_path / "summary.json"
        assert main(eval_argv(dataset, str(out), "--config", str(config))) == 0
        assert isinstance(json.load(open(out, encoding="utf-8")), list)

    def test_unknown_config_key_rejected(self, dataset, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"bogus": 1}))
        assert main(eval_argv(dataset, str(tmp_path / "s.csv"),
                              "--config", str(config))) == 1
        assert "bogus" in stderr_payload(capsys)["message"]

    def test_malformed_config_rejected(self, dataset, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text("{broken")
        assert main(eval_argv(dataset, str(tmp_path / "s.csv"),
                              "--config", str(config))) == 1
        assert stderr_payload(capsys)["error"] == "InvalidInput"

    def test_synth_samples_from_config(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"samples": 7, "horizon": 4}))
        out = tmp_path / "o"
        assert main(["synth", "--config", str(config), "--seed", "5",
                     "--out", str(out)]) == 0
        manifest = load_manifest(str(out / "manifest.json"))
        assert manifest.sample_count == 7
        assert manifest.horizon == 4


class TestOutputPaths:
    def test_out_dir_env_var(self, dataset, tmp_path, monkeypatch):
        target = tmp_path / "reports"
        target.mkdir()
        monkeypatch.setenv(OUT_DIR_ENV, str(target))
        assert main(["flags", "--fused", str(dataset / "fused_weighted.ndjson"),
                     "--confidence-floor", "1.01"]) == 0
        assert (target / "flags.csv").exists()

    def test_default_out_is_cwd(self, dataset, tmp_path, monkeypatch):
        monkeypatch.delenv(OUT_DIR_ENV, raising=False)
        monkeypatch.chdir(tmp_path)
        assert main(["flags", "--fused", str(dataset / "fused_weighted.ndjson"),
                     "--confidence-floor", "1.01"]) == 0
        assert (tmp_path / "flags.csv").exists()

    def test_stdout_reports_written_files(self, dataset, tmp_path, capsys):
        out = str(tmp_path / "flags.csv")
        assert main(["flags", "--fused", str(dataset / "fused_weighted.ndjson"),
                     "--out", out]) == 0
        assert f"wrote {out}" in capsys.readouterr().out


class TestUsage:
    def test_no_command(self, capsys):
        assert main([]) == 1
        assert stderr_payload(capsys)["error"] == "UsageError"

    def test_unknown_command(self, capsys):
        assert main(["transmogrify"]) == 1
        assert stderr_payload(capsys)["error"] == "UsageError"

    def test_missing_required_flag(self, capsys):
        assert main(["fuse"]) == 1
        assert stderr_payload(capsys)["error"] == "UsageError"

    def test_bad_choice(self, dataset, capsys):
        assert main(eval_argv(dataset, "x", "--format", "yaml")) == 1
        assert stderr_payload(capsys)["error"] == "UsageError"

    def test_bad_threads(self, dataset, tmp_path, capsys):
        assert main(eval_argv(dataset, str(tmp_path / "s.csv"),
                              "--threads", "0")) == 1
        assert stderr_payload(capsys)["error"] == "InvalidInput"

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--help"])
        assert exc.value.code == 0

    def test_errors_are_json_on_stderr(self, tmp_path, capsys):
        assert main(["flags", "--fused", str(tmp_path / "missing.ndjson"),
                     "--out", str(tmp_path / "f")]) == 2
        payload = stderr_payload(capsys)
        assert set(payload) == {"error", "message"}
