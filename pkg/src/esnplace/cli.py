"""Command-line entry points.

Verbs: run, grid, sweep-start, holdout, rerank, synth, presets. Errors exit
nonzero with a one-line JSON object on stderr naming the category:
usage (2), config (3), data (4), internal (5).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, metrics, presets
from .descriptors import save_dataset, synth_dataset
from .errors import ConfigError, DataFormatError

EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_INTERNAL = 5


def _fail(category: str, message: str, code: int) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return code


def _load_config(args: argparse.Namespace) -> harness.ExperimentConfig:
    data: dict = {}
    if args.preset:
        data = presets.load_preset(args.preset)
        data.pop("notes", None)
    if args.config:
        data = harness.merge_config(data, json.loads(Path(args.config).read_text()))
    if not data:
        raise ConfigError("need --config and/or --preset")
    for key, value in (
        ("seed", args.seed),
        ("trials", args.trials),
        ("out_dir", args.out),
        ("model", args.model),
    ):
        if value is not None:
            data[key] = value
    if getattr(args, "exclude_validation_from_test", False):
        data["exclude_validation_from_test"] = True
    return harness.ExperimentConfig.from_dict(data)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--preset", help="named preset to use as the config base")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--trials", type=int, help="trial count override")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--model", help="model kind override")
    parser.add_argument(
        "--exclude-validation-from-test",
        action="store_true",
        help="drop the leading validation slice from final scoring",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esnplace",
        description="Reservoir-based sequence place recognition experiments",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run an experiment over one or more trials")
    _add_common(run)

    grid = sub.add_parser("grid", help="grid-search hyper-parameters, then run")
    _add_common(grid)
    grid.add_argument("--grid", required=True, help="grid spec JSON")

    sweep = sub.add_parser("sweep-start", help="recall vs frames-processed curve")
    _add_common(sweep)
    sweep.add_argument("--starts", type=int, required=True)
    sweep.add_argument("--horizon", type=int)

    hold = sub.add_parser("holdout", help="evaluate on frames excluded from training")
    _add_common(hold)
    hold.add_argument("--mode", choices=["single", "pairs"], default="single")
    hold.add_argument("--fraction", type=float, required=True)

    rer = sub.add_parser("rerank", help="re-rank a report's top-k by external scores")
    rer.add_argument("--report", required=True, help="per-trial report JSON")
    rer.add_argument("--scores", required=True, help="binary pairwise score file")
    rer.add_argument("--k", type=int, default=100)
    rer.add_argument("--out", required=True, help="path for the re-ranked report")

    synth = sub.add_parser("synth", help="generate a synthetic dataset on disk")
    synth.add_argument("--places", type=int, required=True)
    synth.add_argument("--noise", type=float, default=0.5)
    synth.add_argument("--drift", type=float, default=0.3)
    synth.add_argument("--dim", type=int, default=8)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--tolerance", type=float, default=0.0)
    synth.add_argument("--out", required=True)

    sub.add_parser("presets", help="list shipped preset names")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    result = harness.run_experiment(cfg)
    print(json.dumps(result.aggregate, indent=2, sort_keys=True))
    return 0


def _cmd_grid(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    grid_data = json.loads(Path(args.grid).read_text())
    grid = harness.GridSpec(
        candidates=grid_data["candidates"],
        validation_fraction=grid_data.get("validation_fraction", 0.10),
    )
    result = harness.grid_search(cfg, grid)
    print(
        json.dumps(
            {
                "best_params": result.best_params,
                "best_validation_accuracy": result.best_accuracy,
                "aggregate": result.final.aggregate,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    sweep = harness.start_point_sweep(cfg, args.starts, horizon=args.horizon)
    print(json.dumps(sweep.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_holdout(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    result, held = harness.holdout_generalization(cfg, args.mode, args.fraction)
    payload = result.aggregate
    payload["held_frames"] = [int(i) for i in np.nonzero(held)[0]]
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_rerank(args: argparse.Namespace) -> int:
    records, meta = metrics.load_report_records(args.report)
    table = harness.load_score_table(args.scores)
    reranked = harness.rerank_top_k(records, args.k, table)
    report = metrics.evaluate(
        reranked,
        meta["recall_ns"],
        meta["tolerance"],
        meta["tolerance_units"],
    )
    metrics.save_report(args.out, report)
    print(json.dumps(report.summary_row(), indent=2, sort_keys=True))
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    dataset = synth_dataset(
        args.places, args.noise, args.drift, args.seed, dim=args.dim
    )
    if args.tolerance:
        from dataclasses import replace

        dataset = type(dataset)(
            manifest=replace(dataset.manifest, tolerance=args.tolerance),
            reference=dataset.reference,
            query=dataset.query,
        )
    path = save_dataset(dataset, args.out)
    print(json.dumps({"manifest": str(path)}))
    return 0


def _cmd_presets(_: argparse.Namespace) -> int:
    for name in presets.list_presets():
        print(name)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "grid": _cmd_grid,
    "sweep-start": _cmd_sweep,
    "holdout": _cmd_holdout,
    "rerank": _cmd_rerank,
    "synth": _cmd_synth,
    "presets": _cmd_presets,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        return _fail("data", str(exc), EXIT_DATA)
    except Exception as exc:  # pragma: no cover - defensive
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
