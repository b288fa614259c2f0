"""Experiment orchestration: model assembly, trials, grid search, robustness
protocols, and re-ranking.

A trial pipelines one dataset end to end: train the hidden layer on the
reference descriptors, stream the embedded reference through a freshly
seeded reservoir (or reservoir stack), optionally calibrate sparse
thresholds, fit the readout, then reset the state to zero and stream the
query traversal through the very same reservoir for evaluation. Everything
is derived deterministically from (config, master seed): trial t uses seed
master + t for its reservoir and fixed offsets for the other random streams,
so identical invocations reproduce reports byte for byte.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import descriptors as desc_mod
from . import metrics as metrics_mod
from . import readout as readout_mod
from . import reservoir as reservoir_mod
from . import sparce as sparce_mod
from .descriptors import Dataset, DatasetManifest, load_dataset, load_manifest
from .errors import ConfigError, DataFormatError
from .metrics import EvalReport, PredictionRecord, evaluate, record_from_scores
from .readout import ReadoutModel, TrainConfig, TrainResult
from .reservoir import HierarchySpec, ReservoirSpec
from .sparce import SparceLayer

MODEL_KINDS = ("nv", "nv-esn", "nv-sparce-esn", "h-nv-esn", "h-nv-sparce-esn")

# Fixed offsets keep the independent random streams of one trial apart.
_HIDDEN_SEED_OFFSET = 1_000_003
_SHUFFLE_SEED_OFFSET = 2_000_003
_HOLDOUT_SEED_OFFSET = 3_000_017
_SWEEP_SEED_OFFSET = 4_000_037


@dataclass(frozen=True)
class HiddenConfig:
    width: int = 500
    learning_rate: float = 0.01
    batch_size: int = 20
    epochs: int = 60
    loss: str = "softmax"

    def __post_init__(self) -> None:
        if self.width < 1:
            raise ConfigError(f"hidden width must be >= 1, got {self.width}")
        if self.epochs < 0:
            raise ConfigError(f"hidden epochs must be >= 0, got {self.epochs}")

    def train_config(self, shuffle_seed: int) -> TrainConfig:
        return TrainConfig(
            loss=self.loss,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            shuffle_seed=shuffle_seed,
        )

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "loss": self.loss,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs besides the dataset payloads."""

    model: str
    train: TrainConfig = TrainConfig()
    hidden: HiddenConfig = HiddenConfig()
    manifest: str | None = None
    reservoir: dict | None = None
    hierarchy: dict | None = None
    sparce_percentile: float | None = None
    trials: int = 1
    recall_ns: tuple[int, ...] = (1, 5, 10)
    seed: int = 0
    out_dir: str | None = None
    exclude_validation_from_test: bool = False
    validation_fraction: float = 0.10
    save_models: bool = True
    report_ranking_limit: int = 100

    def __post_init__(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not self.recall_ns or any(n < 1 for n in self.recall_ns):
            raise ConfigError("recall_ns must be a nonempty list of n >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation_fraction must be in (0, 1), got {self.validation_fraction}"
            )
        if self.uses_hierarchy:
            if self.hierarchy is None:
                raise ConfigError(f"model {self.model!r} needs a hierarchy block")
        elif self.uses_reservoir and self.reservoir is None:
            raise ConfigError(f"model {self.model!r} needs a reservoir block")
        if self.uses_sparce and self.sparce_percentile is None:
            raise ConfigError(f"model {self.model!r} needs sparce_percentile")
        object.__setattr__(self, "recall_ns", tuple(int(n) for n in self.recall_ns))

    @property
    def uses_reservoir(self) -> bool:
        return self.model != "nv"

    @property
    def uses_hierarchy(self) -> bool:
        return self.model.startswith("h-")

    @property
    def uses_sparce(self) -> bool:
        return "sparce" in self.model

    def to_dict(self) -> dict:
        data: dict = {
            "model": self.model,
            "train": self.train.to_dict(),
            "hidden": self.hidden.to_dict(),
            "trials": self.trials,
            "recall_ns": list(self.recall_ns),
            "seed": self.seed,
            "exclude_validation_from_test": self.exclude_validation_from_test,
            "validation_fraction": self.validation_fraction,
            "save_models": self.save_models,
            "report_ranking_limit": self.report_ranking_limit,
        }
        if self.manifest is not None:
            data["manifest"] = self.manifest
        if self.reservoir is not None:
            data["reservoir"] = dict(self.reservoir)
        if self.hierarchy is not None:
            data["hierarchy"] = json.loads(json.dumps(self.hierarchy))
        if self.sparce_percentile is not None:
            data["sparce_percentile"] = self.sparce_percentile
        if self.out_dir is not None:
            data["out_dir"] = self.out_dir
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        data.pop("notes", None)
        train = data.pop("train", {})
        hidden = data.pop("hidden", {})
        train.pop("shuffle_seed", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "recall_ns" in data:
            data["recall_ns"] = tuple(data["recall_ns"])
        try:
            return cls(train=TrainConfig(**train), hidden=HiddenConfig(**hidden), **data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def merge_config(base: dict, override: dict) -> dict:
    """Shallow-merge two config dictionaries, nesting one level deep."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            inner = dict(merged[key])
            inner.update(value)
            merged[key] = inner
        else:
            merged[key] = value
    return merged


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def _reservoir_spec(cfg: ExperimentConfig, input_dim: int, seed: int) -> ReservoirSpec:
    params = dict(cfg.reservoir or {})
    params.pop("input_dim", None)
    params.pop("seed", None)
    try:
        return ReservoirSpec(input_dim=input_dim, seed=seed, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad reservoir block: {exc}") from exc


def _hierarchy_spec(cfg: ExperimentConfig, input_dim: int, seed: int) -> HierarchySpec:
    block = cfg.hierarchy or {}
    layers = []
    try:
        for k, layer in enumerate(block.get("layers", [])):
            params = dict(layer)
            params.pop("input_dim", None)
            params.pop("seed", None)
            dim = input_dim if k == 0 else layers[k - 1].size
            layers.append(ReservoirSpec(input_dim=dim, seed=seed + k, **params))
        return HierarchySpec(
            layers=tuple(layers),
            coupling_scales=tuple(block.get("coupling_scales", [])),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad hierarchy block: {exc}") from exc


@dataclass(frozen=True)
class TrialModel:
    """All trained pieces of one trial, frozen after training."""

    kind: str
    hidden: desc_mod.HiddenLayer
    readout: ReadoutModel
    sparce: SparceLayer | None
    reservoir_spec: ReservoirSpec | None
    reservoir: reservoir_mod.ReservoirMatrices | None
    hierarchy_spec: HierarchySpec | None
    hierarchy: tuple[reservoir_mod.ReservoirMatrices, ...] | None
    trace: tuple[readout_mod.EpochStats, ...]
    loss: str


def _reference_states(
    cfg: ExperimentConfig,
    embedded: np.ndarray,
    trial_seed: int,
) -> tuple[np.ndarray, dict]:
    """Stream the embedded reference through the trial's reservoir stack."""
    if not cfg.uses_reservoir:
        return embedded, {}
    if cfg.uses_hierarchy:
        hspec = _hierarchy_spec(cfg, embedded.shape[1], trial_seed)
        mats = reservoir_mod.build_hierarchy(hspec)
        layer_states = reservoir_mod.run_hierarchy_sequence(
            reservoir_mod.zeros_hierarchy_state(hspec), embedded, hspec, mats
        )
        states = reservoir_mod.concat_layer_states(layer_states)
        return states, {"hierarchy_spec": hspec, "hierarchy": mats}
    spec = _reservoir_spec(cfg, embedded.shape[1], trial_seed)
    mats = reservoir_mod.build_reservoir(spec)
    states = reservoir_mod.run_sequence(
        reservoir_mod.zeros_state(spec), embedded, spec, mats
    )
    return states, {"reservoir_spec": spec, "reservoir": mats}


def _query_states(model: TrialModel, embedded: np.ndarray) -> np.ndarray:
    """Stream the embedded query from a zero state through the same stack."""
    if model.kind == "nv":
        return embedded
    if model.hierarchy_spec is not None:
        layer_states = reservoir_mod.run_hierarchy_sequence(
            reservoir_mod.zeros_hierarchy_state(model.hierarchy_spec),
            embedded,
            model.hierarchy_spec,
            model.hierarchy,
        )
        return reservoir_mod.concat_layer_states(layer_states)
    return reservoir_mod.run_sequence(
        reservoir_mod.zeros_state(model.reservoir_spec),
        embedded,
        model.reservoir_spec,
        model.reservoir,
    )


def train_trial_model(
    cfg: ExperimentConfig,
    dataset: Dataset,
    trial: int,
    train_frames: np.ndarray | None = None,
) -> TrialModel:
    """Fit hidden layer, reservoir representation and readout for one trial.

    `train_frames` (boolean mask over reference frames) restricts the
    supervised stages; the reservoir always streams the full reference
    sequence so its states keep their temporal context.
    """
    places = dataset.manifest.places
    trial_seed = cfg.seed + trial
    labels = np.arange(places, dtype=np.int64)
    mask = np.ones(places, dtype=bool) if train_frames is None else train_frames
    if not mask.any():
        raise ConfigError("training mask leaves no reference frames")

    hidden_seed = trial_seed + _HIDDEN_SEED_OFFSET
    hidden, _head = desc_mod.train_hidden(
        dataset.reference.descriptors[mask],
        labels[mask],
        cfg.hidden.train_config(shuffle_seed=hidden_seed),
        width=cfg.hidden.width,
        seed=hidden_seed,
        places=places,
    )
    embedded_ref = desc_mod.embed(dataset.reference, hidden)
    states, pieces = _reference_states(cfg, embedded_ref, trial_seed)

    layer = None
    if cfg.uses_sparce:
        layer = sparce_mod.calibrate(states, cfg.sparce_percentile)

    model0 = readout_mod.init_readout(places, states.shape[1], cfg.train.use_bias)
    train_cfg = replace(cfg.train, shuffle_seed=trial_seed + _SHUFFLE_SEED_OFFSET)
    result: TrainResult = readout_mod.train(
        states[mask], labels[mask], model0, train_cfg, sparce=layer
    )
    return TrialModel(
        kind=cfg.model,
        hidden=hidden,
        readout=result.model,
        sparce=result.sparce,
        reservoir_spec=pieces.get("reservoir_spec"),
        reservoir=pieces.get("reservoir"),
        hierarchy_spec=pieces.get("hierarchy_spec"),
        hierarchy=pieces.get("hierarchy"),
        trace=result.trace,
        loss=cfg.train.loss,
    )


def score_query(
    model: TrialModel,
    dataset: Dataset,
    eval_mask: np.ndarray | None = None,
    keep: int | None = None,
) -> list[PredictionRecord]:
    """Stream the query traversal and build one prediction record per frame.

    `eval_mask` keeps records only for the selected query frames; the whole
    traversal is still processed so reservoir context is identical either
    way. Scores are the readout probabilities under the model's loss kind.
    """
    embedded = desc_mod.embed(dataset.query, model.hidden)
    reps = _query_states(model, embedded)
    if model.sparce is not None:
        reps = sparce_mod.apply(reps, model.sparce)
    logits = readout_mod.forward(reps, model.readout)
    scores = readout_mod.probabilities(logits, model.loss)
    truth = dataset.ground_truth
    records = []
    for t in range(scores.shape[0]):
        if eval_mask is not None and not eval_mask[t]:
            continue
        records.append(
            record_from_scores(t, scores[t], int(truth[t]), keep=keep)
        )
    return records


def _evaluate_records(
    cfg: ExperimentConfig, dataset: Dataset, records: list[PredictionRecord]
) -> EvalReport:
    manifest = dataset.manifest
    return evaluate(
        records,
        [n for n in cfg.recall_ns if n <= manifest.places],
        manifest.tolerance,
        manifest.tolerance_units,
        manifest.positions,
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list[EvalReport | None]
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def aggregate(self) -> dict:
        rows = [r.summary_row() for r in self.reports if r is not None]
        if not rows:
            return {"trials_succeeded": 0, "mean": {}, "std": {}}
        keys = rows[0].keys()
        mean = {k: float(np.mean([row[k] for row in rows])) for k in keys}
        std = {k: float(np.std([row[k] for row in rows])) for k in keys}
        return {"trials_succeeded": len(rows), "mean": mean, "std": std}

    def to_dict(self) -> dict:
        per_trial = []
        for t, report in enumerate(self.reports):
            row: dict = {"trial": t}
            if report is not None:
                row.update(report.summary_row())
            per_trial.append(row)
        return {
            "config": self.config.to_dict(),
            "trials": per_trial,
            "failures": [{"trial": t, "error": msg} for t, msg in self.failures],
            "aggregate": self.aggregate,
        }


def _write_trial_artifacts(
    cfg: ExperimentConfig,
    out_dir: Path,
    trial: int,
    model: TrialModel,
    report: EvalReport,
) -> None:
    trial_dir = out_dir / f"trial_{trial:03d}"
    trial_dir.mkdir(parents=True, exist_ok=True)
    metrics_mod.save_report(
        trial_dir / "report.json", report, ranking_limit=cfg.report_ranking_limit
    )
    readout_mod.write_trace(trial_dir / "trace.csv", model.trace)
    if cfg.save_models:
        readout_mod.save_readout(trial_dir / "readout.esnm", model.readout)
        if model.sparce is not None:
            sparce_mod.save_sparce(trial_dir / "sparce.esns", model.sparce)
        if model.reservoir is not None:
            reservoir_mod.save_reservoir(trial_dir / "reservoir.esnr", model.reservoir)
        if model.hierarchy is not None:
            for k, mats in enumerate(model.hierarchy):
                reservoir_mod.save_reservoir(trial_dir / f"reservoir_{k}.esnr", mats)


def _write_experiment_outputs(
    cfg: ExperimentConfig, out_dir: Path, result: ExperimentResult
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "aggregate.json").write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True)
    )
    rows = []
    for t, report in enumerate(result.reports):
        if report is None:
            continue
        row = {"trial": t}
        row.update(report.summary_row())
        rows.append(row)
    if rows:
        agg = result.aggregate
        for label in ("mean", "std"):
            row = {"trial": label}
            row.update(agg[label])
            rows.append(row)
        metrics_mod.write_summary_csv(out_dir / "summary.csv", rows)


def _resolve_dataset(cfg: ExperimentConfig, dataset: Dataset | None) -> Dataset:
    if dataset is not None:
        return dataset
    if cfg.manifest is None:
        raise ConfigError("config needs a manifest path or an in-memory dataset")
    return load_dataset(load_manifest(cfg.manifest))


def validation_mask(cfg: ExperimentConfig, dataset: Dataset) -> np.ndarray:
    """Leading contiguous slice of the query used for hyper-parameter tuning."""
    count = dataset.query.count
    val = math.ceil(cfg.validation_fraction * count)
    if val < 1 or val >= count:
        raise ConfigError(
            f"validation slice of {val} frames is empty or swallows the query"
        )
    mask = np.zeros(count, dtype=bool)
    mask[:val] = True
    return mask


def run_experiment(
    cfg: ExperimentConfig,
    dataset: Dataset | None = None,
    eval_mask: np.ndarray | None = None,
    train_frames: np.ndarray | None = None,
) -> ExperimentResult:
    """Run `cfg.trials` independent trials and aggregate their reports.

    A failing trial is recorded and skipped; the remaining trials still
    run. Artifacts land under `cfg.out_dir` when it is set.
    """
    dataset = _resolve_dataset(cfg, dataset)
    if eval_mask is None and cfg.exclude_validation_from_test:
        eval_mask = ~validation_mask(cfg, dataset)
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    result = ExperimentResult(config=cfg, reports=[None] * cfg.trials)
    for trial in range(cfg.trials):
        try:
            model = train_trial_model(cfg, dataset, trial, train_frames=train_frames)
            records = score_query(model, dataset, eval_mask=eval_mask)
            report = _evaluate_records(cfg, dataset, records)
        except (ConfigError, DataFormatError):
            raise
        except Exception as exc:  # keep remaining trials alive
            result.failures.append((trial, f"{type(exc).__name__}: {exc}"))
            continue
        result.reports[trial] = report
        if out_dir is not None:
            _write_trial_artifacts(cfg, out_dir, trial, model, report)
    if out_dir is not None:
        _write_experiment_outputs(cfg, out_dir, result)
    return result


@dataclass(frozen=True)
class GridSpec:
    """Candidate lists per tunable plus the validation slice size."""

    candidates: dict[str, list]
    validation_fraction: float = 0.10

    _KEYS = (
        "alpha",
        "alpha1",
        "alpha2",
        "gamma",
        "rho",
        "density",
        "coupling",
        "eta",
        "eta_theta",
        "batch_size",
        "percentile",
    )

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ConfigError("grid needs at least one candidate list")
        for key, values in self.candidates.items():
            if key not in self._KEYS:
                raise ConfigError(f"unknown grid key {key!r}; known: {self._KEYS}")
            if not values:
                raise ConfigError(f"grid key {key!r} has an empty candidate list")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation_fraction must be in (0, 1), got {self.validation_fraction}"
            )

    def cells(self) -> list[dict]:
        keys = list(self.candidates)
        return [
            dict(zip(keys, combo))
            for combo in itertools.product(*(self.candidates[k] for k in keys))
        ]


def apply_grid_params(cfg: ExperimentConfig, params: dict) -> ExperimentConfig:
    data = cfg.to_dict()
    for key, value in params.items():
        if key == "eta":
            data["train"]["learning_rate"] = value
        elif key == "eta_theta":
            data["train"]["threshold_learning_rate"] = value
        elif key == "batch_size":
            data["train"]["batch_size"] = value
        elif key == "percentile":
            data["sparce_percentile"] = value
        elif key == "coupling":
            data["hierarchy"]["coupling_scales"] = [value] * len(
                data["hierarchy"]["coupling_scales"]
            )
        elif key in ("alpha1", "alpha2"):
            layer = int(key[-1]) - 1
            data["hierarchy"]["layers"][layer]["leakage"] = value
        else:
            field_name = {
                "alpha": "leakage",
                "gamma": "input_gain",
                "rho": "spectral_scale",
                "density": "density",
            }[key]
            if cfg.uses_hierarchy:
                for layer in data["hierarchy"]["layers"]:
                    layer[field_name] = value
            else:
                data["reservoir"][field_name] = value
    return ExperimentConfig.from_dict(data)


@dataclass
class GridSearchResult:
    best_params: dict
    best_accuracy: float
    table: list[dict]
    final: ExperimentResult


def grid_search(
    cfg: ExperimentConfig,
    grid: GridSpec,
    dataset: Dataset | None = None,
) -> GridSearchResult:
    """Pick hyper-parameters by accuracy on the leading validation slice.

    Every cell trains one trial (trial 0 seed) and scores only the
    validation frames. Ties prefer the lower learning rate, then the lower
    input gain, then the earlier cell. The winning settings are re-run with
    the configured trial count; validation frames stay in the final scoring
    unless the config excludes them.
    """
    dataset = _resolve_dataset(cfg, dataset)
    base = replace(cfg, validation_fraction=grid.validation_fraction)
    val_mask = validation_mask(base, dataset)
    table = []
    scored = []
    for index, params in enumerate(grid.cells()):
        cell_cfg = replace(
            apply_grid_params(base, params), trials=1, out_dir=None,
            exclude_validation_from_test=False,
        )
        try:
            model = train_trial_model(cell_cfg, dataset, trial=0)
            records = score_query(model, dataset, eval_mask=val_mask)
            acc = metrics_mod.accuracy(
                records,
                dataset.manifest.tolerance,
                dataset.manifest.tolerance_units,
                dataset.manifest.positions,
            )
            error = None
        except Exception as exc:
            acc = float("nan")
            error = f"{type(exc).__name__}: {exc}"
        row = {"params": params, "validation_accuracy": acc}
        if error:
            row["error"] = error
        table.append(row)
        if not math.isnan(acc):
            rank = (
                -acc,
                params.get("eta", cfg.train.learning_rate),
                params.get("gamma", float("inf")),
                index,
            )
            scored.append((rank, index, params, acc))
    if not scored:
        raise ConfigError("every grid cell failed; nothing to select")
    scored.sort(key=lambda item: item[0])
    _, _, best_params, best_acc = scored[0]
    final_cfg = apply_grid_params(base, best_params)
    final_mask = ~val_mask if cfg.exclude_validation_from_test else None
    final = run_experiment(final_cfg, dataset=dataset, eval_mask=final_mask)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grid.json").write_text(
            json.dumps(
                {
                    "best_params": best_params,
                    "best_validation_accuracy": best_acc,
                    "table": table,
                },
                indent=2,
                sort_keys=True,
            )
        )
    return GridSearchResult(
        best_params=best_params, best_accuracy=best_acc, table=table, final=final
    )


@dataclass
class StartPointSweep:
    starts: np.ndarray
    mean_recall1: np.ndarray
    variance: np.ndarray

    def to_dict(self) -> dict:
        return {
            "starts": [int(s) for s in self.starts],
            "mean_recall1": [float(v) for v in self.mean_recall1],
            "variance": [float(v) for v in self.variance],
        }


def start_point_sweep(
    cfg: ExperimentConfig,
    starts: int | Sequence[int],
    horizon: int | None = None,
    dataset: Dataset | None = None,
) -> StartPointSweep:
    """Average per-offset top-1 correctness over random query entry points.

    For each start the reservoir state resets to zero and the query is
    streamed from that frame, so the curve shows how much context the model
    needs before its predictions stabilize. Explicit start lists are taken
    as-is; an integer asks for that many distinct random starts.
    """
    dataset = _resolve_dataset(cfg, dataset)
    count = dataset.query.count
    if isinstance(starts, int):
        if starts < 1:
            raise ConfigError(f"starts must be >= 1, got {starts}")
        if starts > count:
            raise ConfigError(f"{starts} starts exceed the {count}-frame query")
        horizon = horizon if horizon is not None else max(1, count // 2)
        valid = count - horizon + 1
        if starts > valid:
            raise ConfigError(
                f"{starts} starts do not fit a horizon of {horizon} "
                f"({valid} valid start positions)"
            )
        rng = np.random.default_rng(cfg.seed + _SWEEP_SEED_OFFSET)
        start_idx = np.sort(rng.choice(valid, size=starts, replace=False))
    else:
        start_idx = np.asarray(sorted(starts), dtype=np.int64)
        if start_idx.size == 0:
            raise ConfigError("explicit start list is empty")
        if start_idx.min() < 0 or start_idx.max() >= count:
            raise ConfigError("explicit starts fall outside the query")
        if horizon is None:
            horizon = count - int(start_idx.max())
        if int(start_idx.max()) + horizon > count:
            raise ConfigError("horizon overruns the query for the latest start")

    model = train_trial_model(cfg, dataset, trial=0)
    embedded = desc_mod.embed(dataset.query, model.hidden)
    truth = dataset.ground_truth
    manifest = dataset.manifest
    correct = np.zeros((len(start_idx), horizon))
    for row, start in enumerate(start_idx):
        window = embedded[start : start + horizon]
        reps = _query_states(model, window)
        if model.sparce is not None:
            reps = sparce_mod.apply(reps, model.sparce)
        logits = readout_mod.forward(reps, model.readout)
        top1 = np.argmax(logits, axis=1)
        for offset in range(horizon):
            correct[row, offset] = metrics_mod.is_match(
                int(top1[offset]),
                int(truth[start + offset]),
                manifest.tolerance,
                manifest.tolerance_units,
                manifest.positions,
            )
    sweep = StartPointSweep(
        starts=start_idx,
        mean_recall1=correct.mean(axis=0),
        variance=correct.var(axis=0),
    )
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "start_sweep.json").write_text(
            json.dumps(sweep.to_dict(), indent=2, sort_keys=True)
        )
    return sweep


def holdout_frames(
    places: int, mode: str, fraction: float, seed: int
) -> np.ndarray:
    """Deterministically pick held-out reference frames.

    "single" samples individual frames; "pairs" samples disjoint consecutive
    index pairs, covering at least the requested fraction.
    """
    if mode not in ("single", "pairs"):
        raise ConfigError(f"holdout mode must be 'single' or 'pairs', got {mode!r}")
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"holdout fraction must be in [0, 1), got {fraction}")
    target = math.ceil(fraction * places)
    held = np.zeros(places, dtype=bool)
    if target == 0:
        return held
    rng = np.random.default_rng(seed)
    if mode == "single":
        chosen = rng.choice(places, size=target, replace=False)
        held[chosen] = True
    else:
        wanted = math.ceil(target / 2)
        order = rng.permutation(places - 1)
        taken = 0
        for start in order:
            if taken == wanted:
                break
            if held[start] or held[start + 1]:
                continue
            held[start] = held[start + 1] = True
            taken += 1
        if taken < wanted:
            raise ConfigError(
                f"could not place {wanted} disjoint pairs among {places} frames"
            )
    if held.all():
        raise ConfigError("holdout fraction leaves no training frames")
    return held


def holdout_generalization(
    cfg: ExperimentConfig,
    mode: str,
    fraction: float,
    dataset: Dataset | None = None,
) -> tuple[ExperimentResult, np.ndarray]:
    """Evaluate only on frames whose labels were excluded from training.

    The hidden layer and readout never see the held-out reference frames;
    the reservoir still streams the full sequences. With fraction 0 this
    reduces to the ordinary experiment.
    """
    dataset = _resolve_dataset(cfg, dataset)
    held = holdout_frames(
        dataset.manifest.places, mode, fraction, cfg.seed + _HOLDOUT_SEED_OFFSET
    )
    if not held.any():
        return run_experiment(cfg, dataset=dataset), held
    truth = dataset.ground_truth
    eval_mask = held[truth]
    result = run_experiment(
        cfg, dataset=dataset, eval_mask=eval_mask, train_frames=~held
    )
    return result, held


def load_score_table(path: str | Path) -> dict[tuple[int, int], float]:
    """Read the external pairwise score file.

    Raw little-endian records of (query uint64, candidate uint64, score
    float32), sorted by query then candidate.
    """
    dtype = np.dtype([("query", "<u8"), ("candidate", "<u8"), ("score", "<f4")])
    raw = np.fromfile(path, dtype=dtype)
    if raw.size == 0:
        raise DataFormatError(f"score file {path} is empty")
    keys = np.stack([raw["query"], raw["candidate"]], axis=1)
    if np.any(np.diff(keys[:, 0]) < 0):
        raise DataFormatError(f"score file {path} is not sorted by query")
    same_query = np.diff(keys[:, 0]) == 0
    if np.any(np.diff(keys[:, 1])[same_query] <= 0):
        raise DataFormatError(
            f"score file {path} is not sorted by candidate within queries"
        )
    return {
        (int(q), int(c)): float(s)
        for q, c, s in zip(raw["query"], raw["candidate"], raw["score"])
    }


def write_score_table(
    path: str | Path, entries: Sequence[tuple[int, int, float]]
) -> None:
    dtype = np.dtype([("query", "<u8"), ("candidate", "<u8"), ("score", "<f4")])
    arr = np.array(sorted(entries), dtype=dtype)
    arr.tofile(path)


def rerank_top_k(
    records: list[PredictionRecord],
    k: int,
    scores: dict[tuple[int, int], float],
) -> list[PredictionRecord]:
    """Reorder each record's top-k candidates by an external pairwise score.

    Candidates beyond the top k keep their positions; ties in the external
    score preserve the original (classifier) order. The reordered prefix
    carries the external scores so downstream confidence sweeps use them.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    out = []
    for record in records:
        depth = min(k, record.ranking.size)
        prefix = record.ranking[:depth]
        try:
            external = np.array(
                [scores[(int(record.query_index), int(c))] for c in prefix]
            )
        except KeyError as exc:
            raise DataFormatError(
                f"score table misses pair (query {record.query_index}, "
                f"candidate {exc.args[0][1]})"
            ) from None
        order = np.argsort(-external, kind="stable")
        ranking = record.ranking.copy()
        ranked_scores = record.ranked_scores.copy()
        ranking[:depth] = prefix[order]
        ranked_scores[:depth] = external[order]
        out.append(
            PredictionRecord(
                query_index=record.query_index,
                ranking=ranking,
                ranked_scores=ranked_scores,
                truth=record.truth,
                n_places=record.n_places,
            )
        )
    return out
