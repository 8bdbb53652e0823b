"""Command-line surface: fuse, eval, overlap, synth, flags.

Exit codes: 0 success, 1 for validation/parse errors (including bad
flags), 2 for I/O errors.  Errors are emitted as one JSON object on
stderr so wrappers can consume them.  Every command is deterministic:
rerunning with identical inputs, seeds, and flags writes byte-identical
files at any ``--threads`` setting.

Configuration precedence is flags > --config JSON file > built-in
defaults.  The TRAJFUSE_OUT_DIR environment variable supplies the
directory for default output paths when --out is not given.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import ModelOutput, Sample, Trajectory, select_most_likely
from .errors import InvalidInput, TrajfuseError
from .fusion import (
    DEFAULT_TAU,
    FusedPrediction,
    flag_low_confidence,
    fuse_simple,
    fuse_threshold,
    fuse_weighted,
)
from .io import (
    DatasetManifest,
    GroundTruthRecord,
    load_fused,
    load_ground_truth,
    load_manifest,
    load_predictions,
    write_fused,
    write_ground_truth,
    write_manifest,
    write_predictions,
    write_report,
)
from .metrics import (
    DEFAULT_K_LIST,
    DEFAULT_OVERLAP_K,
    build_ledger,
    ensemble_method_id,
    overlap_report,
    summary_table,
    top_k_error,
)
from .synth import (
    PINNED_PRIMARY,
    PINNED_SEED,
    ScenarioConfig,
    pinned_config,
    pinned_predictors,
    synth_experiment,
)

__all__ = ["main"]

OUT_DIR_ENV = "TRAJFUSE_OUT_DIR"

_DEFAULT_K_STR = ",".join(str(k) for k in DEFAULT_K_LIST)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse's default error() exits 2; the exit-code contract reserves
    # 2 for I/O problems, so usage errors are rerouted to exit 1.
    def error(self, message):
        raise _UsageError(message)


@dataclass(frozen=True)
class RunConfig:
    """Validated, normalized settings for one command invocation."""

    command: str
    manifest: str | None = None
    predictions: tuple[str, ...] = ()
    ground_truth: str | None = None
    fused: str | None = None
    strategies: tuple[str, ...] = ("weighted",)
    tau: float = DEFAULT_TAU
    primary_model: str | None = None
    k_list: tuple[float, ...] = tuple(float(k) for k in DEFAULT_K_LIST)
    overlap_k: float = DEFAULT_OVERLAP_K
    confidence_floor: float = 0.5
    fmt: str = "csv"
    out: str = ""
    seed: int = PINNED_SEED
    threads: int = 1
    sort_by_ade: bool = False
    samples: int = 10_000
    horizon: int = 12
    dt: float = 0.5
    mix: tuple[float, float, float] = (0.45, 0.35, 0.20)


def _parse_k_list(raw: str) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise InvalidInput("--k-list must contain at least one percentage")
    ks = []
    for part in parts:
        try:
            k = float(part)
        except ValueError:
            raise InvalidInput(f"--k-list entry '{part}' is not a number") from None
        if not (math.isfinite(k) and 0 < k <= 100):
            raise InvalidInput(f"--k-list entry {k} must be in (0, 100]")
        ks.append(k)
    return tuple(ks)


def _parse_mix(raw: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3:
        raise InvalidInput(f"--mix needs three comma-separated proportions, got '{raw}'")
    try:
        a, b, c = (float(p) for p in parts)
    except ValueError:
        raise InvalidInput(f"--mix entries must be numbers, got '{raw}'") from None
    return (a, b, c)


def _default_out(filename: str) -> str:
    return os.path.join(os.environ.get(OUT_DIR_ENV, "."), filename)


def _resolve_strategies(raw: str, tau_given: bool, primary: str | None) -> tuple[str, ...]:
    if raw == "all":
        strategies: tuple[str, ...] = ("weighted", "simple", "threshold")
    else:
        strategies = (raw,)
    if "threshold" in strategies:
        if primary is None:
            raise InvalidInput("--strategy threshold requires --primary-model")
    else:
        if tau_given:
            raise InvalidInput("--tau only applies with --strategy threshold")
        if primary is not None:
            raise InvalidInput("--primary-model only applies with --strategy threshold")
    return strategies


def _make_run_config(args: argparse.Namespace) -> RunConfig:
    command = args.command
    fmt = getattr(args, "format", "csv")
    threads = getattr(args, "threads", 1)
    if threads is None:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise InvalidInput(f"--threads must be >= 1, got {threads}")

    if command == "flags":
        floor = args.confidence_floor
        if not math.isfinite(floor):
            raise InvalidInput(f"--confidence-floor must be finite, got {floor}")
        return RunConfig(
            command=command,
            fused=args.fused,
            confidence_floor=floor,
            fmt=fmt,
            out=args.out or _default_out(f"flags.{fmt}"),
            threads=threads,
        )

    if command == "synth":
        primary = args.primary_model
        if primary is None and args.strategy in ("threshold", "all"):
            primary = PINNED_PRIMARY
        strategies = _resolve_strategies(args.strategy, args.tau is not None, primary)
        return RunConfig(
            command=command,
            strategies=strategies,
            tau=args.tau if args.tau is not None else DEFAULT_TAU,
            primary_model=primary,
            k_list=_parse_k_list(args.k_list),
            overlap_k=args.overlap_k,
            fmt=fmt,
            out=args.out or _default_out("synth_out"),
            seed=args.seed,
            threads=threads,
            samples=args.samples,
            horizon=args.horizon,
            dt=args.dt,
            mix=_parse_mix(args.mix) if isinstance(args.mix, str) else tuple(args.mix),
        )

    # fuse / eval / overlap share the dataset-input surface.
    common = dict(
        command=command,
        manifest=args.manifest,
        predictions=tuple(args.predictions),
        threads=threads,
    )
    if command == "overlap":
        k = args.overlap_k
        if not (math.isfinite(k) and 0 < k <= 100):
            raise InvalidInput(f"--overlap-k must be in (0, 100], got {k}")
        return RunConfig(
            ground_truth=args.ground_truth,
            overlap_k=k,
            fmt=fmt,
            out=args.out or _default_out(f"overlap.{fmt}"),
            **common,
        )

    # overlap has no --tau flag, so this check comes after its branch.
    if args.tau is not None and not math.isfinite(args.tau):
        raise InvalidInput(f"--tau must be finite, got {args.tau}")
    if command == "fuse":
        strategies = _resolve_strategies(args.strategy, args.tau is not None,
                                         args.primary_model)
        if len(strategies) != 1:
            raise InvalidInput("fuse takes a single --strategy, not 'all'")
        return RunConfig(
            strategies=strategies,
            tau=args.tau if args.tau is not None else DEFAULT_TAU,
            primary_model=args.primary_model,
            out=args.out or _default_out("fused.ndjson"),
            **common,
        )
    if command == "eval":
        strategies = _resolve_strategies(args.strategy, args.tau is not None,
                                         args.primary_model)
        return RunConfig(
            ground_truth=args.ground_truth,
            strategies=strategies,
            tau=args.tau if args.tau is not None else DEFAULT_TAU,
            primary_model=args.primary_model,
            k_list=_parse_k_list(args.k_list),
            sort_by_ade=args.sort_by_ade,
            fmt=fmt,
            out=args.out or _default_out(f"summary.{fmt}"),
            **common,
        )
    raise InvalidInput(f"unknown command '{command}'")


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    """Ordered map, optionally via a thread pool; results match serial order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _load_samples(
    manifest: DatasetManifest,
    prediction_paths: Sequence[str],
    ground_truth_path: str | None,
) -> list[Sample]:
    """Group prediction dumps (and optional ground truth) into Samples.

    Samples are ordered by sample_id; each sample's outputs follow the
    manifest's model order.  With ground truth given, every predicted
    sample must have a matching record.
    """
    by_sample: dict[str, dict[str, ModelOutput]] = {}
    for path in prediction_paths:
        for output in load_predictions(path, manifest):
            per_model = by_sample.setdefault(output.sample_id, {})
            if output.model_id in per_model:
                raise InvalidInput(
                    f"model '{output.model_id}' appears twice for sample "
                    f"'{output.sample_id}' across prediction files"
                )
            per_model[output.model_id] = output
    gt_by_sample: dict[str, Trajectory] = {}
    if ground_truth_path is not None:
        for rec in load_ground_truth(ground_truth_path, manifest):
            gt_by_sample[rec.sample_id] = rec.trajectory
    samples = []
    for sample_id in sorted(by_sample):
        gt = None
        if ground_truth_path is not None:
            gt = gt_by_sample.get(sample_id)
            if gt is None:
                raise InvalidInput(f"no ground truth for predicted sample '{sample_id}'")
        per_model = by_sample[sample_id]
        outputs = tuple(per_model[mid] for mid in manifest.model_ids if mid in per_model)
        samples.append(Sample(sample_id=sample_id, ground_truth=gt, outputs=outputs))
    return samples


def _fuse_fn(strategy: str, primary: str | None, tau: float) -> Callable[[Sample], FusedPrediction]:
    if strategy == "weighted":
        return fuse_weighted
    if strategy == "simple":
        return fuse_simple
    return lambda sample: fuse_threshold(sample, primary, tau)


def _note(path: str) -> None:
    print(f"wrote {path}")


def cmd_fuse(cfg: RunConfig) -> int:
    manifest = load_manifest(cfg.manifest)
    samples = _load_samples(manifest, cfg.predictions, None)
    strategy = cfg.strategies[0]
    fused = _parallel_map(_fuse_fn(strategy, cfg.primary_model, cfg.tau),
                          samples, cfg.threads)
    write_fused(cfg.out, fused)
    _note(cfg.out)
    return 0


def _evaluated_methods(
    samples: Sequence[Sample],
    manifest: DatasetManifest,
    cfg: RunConfig,
) -> dict[str, dict[str, Trajectory]]:
    methods: dict[str, dict[str, Trajectory]] = {}
    for model_id in manifest.model_ids:
        per_sample = {}
        for sample in samples:
            for output in sample.outputs:
                if output.model_id == model_id:
                    per_sample[sample.sample_id] = select_most_likely(output).trajectory
        if per_sample:
            methods[model_id] = per_sample
    for strategy in cfg.strategies:
        fused = _parallel_map(_fuse_fn(strategy, cfg.primary_model, cfg.tau),
                              samples, cfg.threads)
        methods[ensemble_method_id(strategy)] = {
            f.sample_id: f.trajectory for f in fused
        }
    return methods


def cmd_eval(cfg: RunConfig) -> int:
    manifest = load_manifest(cfg.manifest)
    samples = _load_samples(manifest, cfg.predictions, cfg.ground_truth)
    if not samples:
        raise InvalidInput("no samples to evaluate")
    methods = _evaluated_methods(samples, manifest, cfg)
    ledger = build_ledger(samples, methods)
    rows = summary_table(ledger, cfg.k_list, sort_by_ade=cfg.sort_by_ade)
    write_report(cfg.out, rows, cfg.fmt, k_list=cfg.k_list)
    _note(cfg.out)
    return 0


def cmd_overlap(cfg: RunConfig) -> int:
    manifest = load_manifest(cfg.manifest)
    if len(manifest.model_ids) < 2:
        raise InvalidInput("overlap needs at least 2 models in the manifest")
    samples = _load_samples(manifest, cfg.predictions, cfg.ground_truth)
    if not samples:
        raise InvalidInput("no samples to analyze")
    methods: dict[str, dict[str, Trajectory]] = {}
    for model_id in manifest.model_ids:
        per_sample = {}
        for sample in samples:
            for output in sample.outputs:
                if output.model_id == model_id:
                    per_sample[sample.sample_id] = select_most_likely(output).trajectory
        if per_sample:
            methods[model_id] = per_sample
    if len(methods) < 2:
        raise InvalidInput("overlap needs predictions from at least 2 models")
    ledger = build_ledger(samples, methods)
    sets = {
        model_id: top_k_error(ledger, model_id, "ade", cfg.overlap_k).sample_ids
        for model_id in methods
    }
    write_report(cfg.out, overlap_report(sets), cfg.fmt)
    _note(cfg.out)
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    base = pinned_config()
    config = ScenarioConfig(
        sample_count=cfg.samples,
        horizon=cfg.horizon,
        dt=cfg.dt,
        mix=cfg.mix,
        speed_range=base.speed_range,
        turn_rate_range=base.turn_rate_range,
        noise_sigma=base.noise_sigma,
        seed=cfg.seed,
    )
    predictors = pinned_predictors()
    primary = cfg.primary_model

    os.makedirs(cfg.out, exist_ok=True)
    gt_records: list[GroundTruthRecord] = []
    outputs: list[ModelOutput] = []
    fused_by_strategy: dict[str, list[FusedPrediction]] = {s: [] for s in cfg.strategies}

    def hook(scenario, sample, fused):
        gt_records.append(GroundTruthRecord(scenario.sample_id, scenario.ground_truth))
        outputs.extend(sample.outputs)
        for strategy, pred in fused.items():
            fused_by_strategy[strategy].append(pred)

    result = synth_experiment(
        config,
        predictors,
        strategies=cfg.strategies,
        primary_model=primary,
        tau=cfg.tau,
        k_list=cfg.k_list,
        sample_hook=hook,
        threads=cfg.threads,
    )

    manifest = DatasetManifest(
        dataset_name="synth",
        horizon=config.horizon,
        dt=config.dt,
        model_ids=tuple(p.name for p in predictors),
        sample_count=config.sample_count,
    )
    paths = {
        "manifest": os.path.join(cfg.out, "manifest.json"),
        "predictions": os.path.join(cfg.out, "predictions.ndjson"),
        "ground_truth": os.path.join(cfg.out, "ground_truth.ndjson"),
        "summary": os.path.join(cfg.out, f"summary.{cfg.fmt}"),
        "overlap": os.path.join(cfg.out, f"overlap.{cfg.fmt}"),
    }
    write_manifest(paths["manifest"], manifest)
    write_predictions(paths["predictions"], outputs)
    write_ground_truth(paths["ground_truth"], gt_records)
    for strategy in cfg.strategies:
        fused_path = os.path.join(cfg.out, f"fused_{strategy}.ndjson")
        write_fused(fused_path, fused_by_strategy[strategy])
        _note(fused_path)
    write_report(paths["summary"], result.summary, cfg.fmt, k_list=cfg.k_list)
    sets = {
        name: top_k_error(result.ledger, name, "ade", cfg.overlap_k).sample_ids
        for name in result.predictor_names
    }
    write_report(paths["overlap"], overlap_report(sets), cfg.fmt)
    for key in ("manifest", "predictions", "ground_truth", "summary", "overlap"):
        _note(paths[key])
    return 0


def cmd_flags(cfg: RunConfig) -> int:
    flagged = [
        (pred.sample_id, pred.confidence)
        for pred in load_fused(cfg.fused)
        if flag_low_confidence(pred, cfg.confidence_floor)
    ]
    flagged.sort(key=lambda item: item[0])
    if cfg.fmt == "json":
        payload = {
            "confidence_floor": cfg.confidence_floor,
            "count": len(flagged),
            "flagged": [
                {"sample_id": sid, "confidence": conf} for sid, conf in flagged
            ],
        }
        with open(cfg.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(payload, indent=2, sort_keys=True))
            f.write("\n")
    else:
        with open(cfg.out, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["sample_id", "confidence"])
            for sid, conf in flagged:
                writer.writerow([sid, repr(conf)])
    _note(cfg.out)
    return 0


_COMMANDS = {
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "overlap": cmd_overlap,
    "synth": cmd_synth,
    "flags": cmd_flags,
}


def _add_common(parser: argparse.ArgumentParser, *, out_help: str) -> None:
    parser.add_argument("--config", help="JSON file of flag defaults (flags still win)")
    parser.add_argument("--out", help=out_help)
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: all cores; 1 = serial reference)")


def _add_dataset_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, help="dataset manifest JSON")
    parser.add_argument("--predictions", required=True, nargs="+",
                        help="prediction dump(s), NDJSON")


def _add_strategy(parser: argparse.ArgumentParser, *, allow_all: bool) -> None:
    choices = ["weighted", "simple", "threshold"] + (["all"] if allow_all else [])
    parser.add_argument("--strategy", choices=choices, default="weighted",
                        help="fusion strategy (default: weighted)")
    parser.add_argument("--tau", type=float, default=None,
                        help=f"threshold strategy confidence bar (default {DEFAULT_TAU})")
    parser.add_argument("--primary-model", default=None,
                        help="model trusted by the threshold strategy")


def build_parser() -> tuple[_Parser, dict[str, _Parser], dict[str, set[str]]]:
    parser = _Parser(
        prog="trajfuse",
        description="Fuse multimodal trajectory predictions and evaluate the long tail.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subparsers: dict[str, _Parser] = {}

    p = sub.add_parser("fuse", help="fuse prediction dumps into one trajectory per sample")
    _add_dataset_inputs(p)
    _add_strategy(p, allow_all=False)
    _add_common(p, out_help="output NDJSON path (default: fused.ndjson)")
    subparsers["fuse"] = p

    p = sub.add_parser("eval", help="score members and fused strategies, write summary table")
    _add_dataset_inputs(p)
    p.add_argument("--ground-truth", required=True, help="ground-truth NDJSON")
    _add_strategy(p, allow_all=True)
    p.add_argument("--k-list", default=_DEFAULT_K_STR,
                   help=f"comma-separated Top-K%% columns (default {_DEFAULT_K_STR})")
    p.add_argument("--sort-by-ade", action="store_true",
                   help="rank Top-K sets by ADE only; FDE column averages over that set")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_common(p, out_help="report path (default: summary.<format>)")
    subparsers["eval"] = p

    p = sub.add_parser("overlap", help="Venn analysis of the models' hardest-sample sets")
    _add_dataset_inputs(p)
    p.add_argument("--ground-truth", required=True, help="ground-truth NDJSON")
    p.add_argument("--overlap-k", type=float, default=DEFAULT_OVERLAP_K,
                   help=f"difficulty-set size in percent (default {DEFAULT_OVERLAP_K:g})")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_common(p, out_help="report path (default: overlap.<format>)")
    subparsers["overlap"] = p

    p = sub.add_parser("synth", help="run the synthetic end-to-end experiment")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--horizon", type=int, default=12)
    p.add_argument("--dt", type=float, default=0.5)
    p.add_argument("--mix", default="0.45,0.35,0.20",
                   help="straight,constant_turn,lane_change proportions")
    p.add_argument("--seed", type=int, default=PINNED_SEED)
    p.add_argument("--strategy", choices=["weighted", "simple", "threshold", "all"],
                   default="all")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--primary-model", default=None,
                   help=f"threshold strategy's trusted model (default {PINNED_PRIMARY})")
    p.add_argument("--k-list", default=_DEFAULT_K_STR)
    p.add_argument("--overlap-k", type=float, default=DEFAULT_OVERLAP_K)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_common(p, out_help="output directory (default: synth_out)")
    subparsers["synth"] = p

    p = sub.add_parser("flags", help="list samples whose fused confidence is below a floor")
    p.add_argument("--fused", required=True, help="fused NDJSON from the fuse command")
    p.add_argument("--confidence-floor", type=float, default=0.5)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_common(p, out_help="report path (default: flags.<format>)")
    subparsers["flags"] = p

    config_keys = {
        name: {
            action.dest
            for action in sp._actions
            if action.dest not in ("help", "config")
        }
        for name, sp in subparsers.items()
    }
    return parser, subparsers, config_keys


def _apply_config_file(config_path: str, subparser: _Parser, allowed: set[str]) -> None:
    with open(config_path, "r", encoding="utf-8") as f:
        try:
            overrides = json.load(f)
        except ValueError as e:
            raise InvalidInput(f"config file {config_path}: {e}") from None
    if not isinstance(overrides, dict):
        raise InvalidInput(f"config file {config_path} must hold a JSON object")
    unknown = set(overrides) - allowed
    if unknown:
        raise InvalidInput(
            f"config file {config_path}: unknown key(s) {', '.join(sorted(unknown))}"
        )
    subparser.set_defaults(**overrides)


def main(argv: Sequence[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser, subparsers, config_keys = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            # Re-parse with the config file as the new defaults layer:
            # explicit flags keep priority because they override defaults.
            _apply_config_file(args.config, subparsers[args.command],
                               config_keys[args.command])
            args = parser.parse_args(argv)
        cfg = _make_run_config(args)
        return _COMMANDS[cfg.command](cfg)
    except _UsageError as e:
        _emit_error("UsageError", str(e))
        return 1
    except TrajfuseError as e:
        _emit_error(type(e).__name__, str(e))
        return 1
    except OSError as e:
        _emit_error("IOError", str(e))
        return 2


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}, sort_keys=True),
          file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
