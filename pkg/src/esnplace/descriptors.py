"""Descriptor ingestion, the dimensionality-reducing hidden layer, and
synthetic desk-scale datasets.

Image descriptors arrive as precomputed vectors (one row per frame, in
acquisition order) in a compact binary format; no image processing happens
here. A small feedforward classifier (one hidden layer, 500 units by
default) is trained on the reference traversal, then frozen; its hidden
representation becomes the reservoir input. Synthetic datasets emulate the
same file contract with a drifting prototype walk plus per-frame noise and a
global condition shift, so the full pipeline can run without any real data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import read_array, read_i64, read_prelude, write_array, write_i64, write_prelude
from .readout import (
    ReadoutModel,
    TrainConfig,
    _loss_fn,
    forward,
    one_hot,
)

_DESC_MAGIC = b"ESNPDESC"
_DESC_VERSION = 1

TOLERANCE_UNITS = ("frames", "meters")
DEFAULT_HIDDEN_WIDTH = 500


@dataclass(frozen=True)
class DescriptorSet:
    """Frame descriptors in acquisition order: (T, D0) float32 rows."""

    descriptors: np.ndarray
    frame_ids: np.ndarray

    def __post_init__(self) -> None:
        desc = np.asarray(self.descriptors, dtype=np.float32)
        if desc.ndim != 2:
            raise ValueError(f"descriptors must be (T, D) shaped, got {desc.shape}")
        if not np.all(np.isfinite(desc)):
            raise ValueError("descriptors contain non-finite values")
        ids = np.asarray(self.frame_ids, dtype=np.int64)
        if ids.shape != (desc.shape[0],):
            raise ValueError("need exactly one frame id per descriptor row")
        object.__setattr__(self, "descriptors", desc)
        object.__setattr__(self, "frame_ids", ids)

    @property
    def count(self) -> int:
        return self.descriptors.shape[0]

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]


def write_descriptors(path: str | Path, descriptors: np.ndarray) -> None:
    """Binary layout: 16-byte magic+version, int64 T and D, row-major float32."""
    desc = np.asarray(descriptors, dtype=np.float32)
    if desc.ndim != 2:
        raise ValueError(f"descriptors must be (T, D) shaped, got {desc.shape}")
    if not np.all(np.isfinite(desc)):
        raise ValueError("descriptors contain non-finite values")
    with open(path, "wb") as fh:
        write_prelude(fh, _DESC_MAGIC, _DESC_VERSION)
        write_i64(fh, desc.shape[0], desc.shape[1])
        write_array(fh, desc, "<f4")


def load_descriptors(
    path: str | Path,
    expected_rows: int | None = None,
    expected_dim: int | None = None,
) -> DescriptorSet:
    with open(path, "rb") as fh:
        read_prelude(fh, _DESC_MAGIC, _DESC_VERSION)
        rows, dim = read_i64(fh, 2)
        if rows < 0 or dim <= 0:
            raise ValueError(f"malformed header: rows={rows}, dim={dim}")
        if expected_rows is not None and rows != expected_rows:
            raise ValueError(f"file holds {rows} rows, expected {expected_rows}")
        if expected_dim is not None and dim != expected_dim:
            raise ValueError(f"file holds {dim}-d descriptors, expected {expected_dim}")
        desc = read_array(fh, "<f4", (rows, dim))
    if not np.all(np.isfinite(desc)):
        raise ValueError(f"{path}: descriptors contain non-finite values")
    return DescriptorSet(descriptors=desc, frame_ids=np.arange(rows, dtype=np.int64))


@dataclass(frozen=True)
class DatasetManifest:
    """Pointers and evaluation settings for one reference/query pair.

    `tolerance` is in frame-index units, or in the positions' distance
    units when `tolerance_units` is "meters" (which then requires one
    position per reference frame). `ground_truth[i]` is the reference index
    of query frame i; it defaults to the identity when row counts match.
    """

    name: str
    reference: str
    query: str
    places: int
    tolerance: float
    tolerance_units: str = "frames"
    positions: np.ndarray | None = None
    ground_truth: np.ndarray | None = None
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        if self.places < 1:
            raise ValueError(f"places must be >= 1, got {self.places}")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.tolerance_units not in TOLERANCE_UNITS:
            raise ValueError(
                f"tolerance_units must be one of {TOLERANCE_UNITS}, "
                f"got {self.tolerance_units!r}"
            )
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=float)
            if pos.ndim != 2 or pos.shape[0] != self.places:
                raise ValueError(
                    f"positions must be ({self.places}, k) shaped, got {pos.shape}"
                )
            object.__setattr__(self, "positions", pos)
        if self.tolerance_units == "meters" and self.positions is None:
            raise ValueError("meters tolerance requires per-frame positions")
        if self.ground_truth is not None:
            gt = np.asarray(self.ground_truth, dtype=np.int64)
            if gt.ndim != 1:
                raise ValueError("ground_truth must be a flat index list")
            if np.any(gt < 0) or np.any(gt >= self.places):
                raise ValueError(f"ground_truth indices must lie in [0, {self.places})")
            object.__setattr__(self, "ground_truth", gt)

    def reference_path(self) -> Path:
        return self.base_dir / self.reference

    def query_path(self) -> Path:
        return self.base_dir / self.query

    def to_dict(self) -> dict:
        data: dict = {
            "name": self.name,
            "reference": self.reference,
            "query": self.query,
            "places": self.places,
            "tolerance": self.tolerance,
            "tolerance_units": self.tolerance_units,
        }
        if self.positions is not None:
            data["positions"] = [list(map(float, row)) for row in self.positions]
        if self.ground_truth is not None:
            data["ground_truth"] = [int(v) for v in self.ground_truth]
        return data


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    data = json.loads(path.read_text())
    required = {"name", "reference", "query", "places", "tolerance"}
    missing = required - set(data)
    if missing:
        raise ValueError(f"manifest {path} is missing fields: {sorted(missing)}")
    return DatasetManifest(
        name=data["name"],
        reference=data["reference"],
        query=data["query"],
        places=int(data["places"]),
        tolerance=float(data["tolerance"]),
        tolerance_units=data.get("tolerance_units", "frames"),
        positions=data.get("positions"),
        ground_truth=data.get("ground_truth"),
        base_dir=path.parent,
    )


@dataclass(frozen=True)
class Dataset:
    """A manifest with its descriptor payloads loaded and validated."""

    manifest: DatasetManifest
    reference: DescriptorSet
    query: DescriptorSet

    @property
    def ground_truth(self) -> np.ndarray:
        if self.manifest.ground_truth is not None:
            return self.manifest.ground_truth
        return np.arange(self.query.count, dtype=np.int64)


def load_dataset(manifest: DatasetManifest) -> Dataset:
    reference = load_descriptors(
        manifest.reference_path(), expected_rows=manifest.places
    )
    query = load_descriptors(manifest.query_path(), expected_dim=reference.dim)
    if manifest.ground_truth is not None:
        if len(manifest.ground_truth) != query.count:
            raise ValueError(
                f"ground_truth lists {len(manifest.ground_truth)} entries for "
                f"{query.count} query frames"
            )
    elif query.count != manifest.places:
        raise ValueError(
            "query row count differs from places and no ground_truth is given"
        )
    return Dataset(manifest=manifest, reference=reference, query=query)


@dataclass(frozen=True)
class HiddenLayer:
    """Frozen dimensionality-reducing layer applied to raw descriptors."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=float)
        bias = np.array(self.bias, dtype=float)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ValueError(
                f"inconsistent hidden layer shapes: {weights.shape}, {bias.shape}"
            )
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        weights.flags.writeable = False
        bias.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    @property
    def width(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]


def init_hidden(input_dim: int, width: int, seed: int) -> HiddenLayer:
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(input_dim)
    return HiddenLayer(
        weights=rng.standard_normal((width, input_dim)) * scale,
        bias=np.zeros(width),
    )


def embed(descriptors: np.ndarray | DescriptorSet, hidden: HiddenLayer) -> np.ndarray:
    """Hidden-layer representation of each descriptor row. Pure and exact."""
    if isinstance(descriptors, DescriptorSet):
        descriptors = descriptors.descriptors
    desc = np.asarray(descriptors, dtype=float)
    if desc.shape[-1] != hidden.input_dim:
        raise ValueError(
            f"descriptor width {desc.shape[-1]} does not match hidden layer "
            f"input_dim {hidden.input_dim}"
        )
    return np.tanh(desc @ hidden.weights.T + hidden.bias)


def train_hidden(
    reference: DescriptorSet | np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    width: int = DEFAULT_HIDDEN_WIDTH,
    seed: int = 0,
    places: int | None = None,
) -> tuple[HiddenLayer, ReadoutModel]:
    """Train descriptor -> hidden -> places by mini-batch gradient descent.

    Returns the frozen hidden layer plus the classification head that was
    fitted on top of it. Downstream pipelines keep only the hidden layer;
    the head is returned so the joint classifier itself can be inspected or
    used as the no-reservoir baseline.
    """
    if isinstance(reference, DescriptorSet):
        reference = reference.descriptors
    desc = np.asarray(reference, dtype=float)
    labels = np.asarray(labels)
    if desc.ndim != 2 or desc.shape[0] == 0:
        raise ValueError("reference descriptors must be a nonempty (T, D) array")
    if labels.shape != (desc.shape[0],):
        raise ValueError("need exactly one label per reference frame")
    if np.any(labels < 0):
        raise ValueError("labels must be nonnegative")
    if places is None:
        places = int(labels.max()) + 1

    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(desc.shape[1])
    w1 = rng.standard_normal((width, desc.shape[1])) * scale
    b1 = np.zeros(width)
    w2 = rng.standard_normal((places, width)) / math.sqrt(width)
    b2 = np.zeros(places)

    targets = one_hot(labels, places)
    loss_fn = _loss_fn(cfg.loss)
    shuffle = np.random.default_rng(cfg.shuffle_seed)
    count = desc.shape[0]
    for _ in range(cfg.epochs):
        order = shuffle.permutation(count)
        for start in range(0, count, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = desc[idx]
            pre = batch @ w1.T + b1
            h = np.tanh(pre)
            logits = h @ w2.T + b2
            _, grad_logits = loss_fn(logits, targets[idx])
            grad_w2 = grad_logits.T @ h
            grad_b2 = grad_logits.sum(axis=0)
            grad_h = grad_logits @ w2
            grad_pre = grad_h * (1.0 - h * h)
            grad_w1 = grad_pre.T @ batch
            grad_b1 = grad_pre.sum(axis=0)
            w2 -= cfg.learning_rate * grad_w2
            b2 -= cfg.learning_rate * grad_b2
            w1 -= cfg.learning_rate * grad_w1
            b1 -= cfg.learning_rate * grad_b1
    hidden = HiddenLayer(weights=w1, bias=b1)
    head = ReadoutModel(weights=w2, bias=b2)
    return hidden, head


def hidden_head_accuracy(
    descriptors: np.ndarray | DescriptorSet,
    labels: np.ndarray,
    hidden: HiddenLayer,
    head: ReadoutModel,
) -> float:
    logits = forward(embed(descriptors, hidden), head)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def synth_dataset(
    places: int,
    noise: float,
    drift: float,
    seed: int,
    dim: int = 8,
    name: str = "synthetic",
) -> Dataset:
    """Generate a desk-scale stand-in for real descriptor traversals.

    Reference rows follow a stationary prototype walk: adjacent places are
    correlated by `drift` while each marginal stays standard normal. Query rows
    revisit the same places with iid Gaussian noise of scale `noise` plus a
    single global shift (also `noise`-scaled) that emulates a condition
    change between the two traversals. Ground truth is the identity mapping
    and the tolerance is 0 frames.
    """
    if places < 2:
        raise ValueError(f"places must be >= 2, got {places}")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    if not 0.0 <= drift < 1.0:
        raise ValueError(f"drift must be in [0, 1), got {drift}")
    rng = np.random.default_rng(seed)
    reference = np.empty((places, dim))
    reference[0] = rng.standard_normal(dim)
    fresh = math.sqrt(1.0 - drift * drift)
    for t in range(1, places):
        reference[t] = drift * reference[t - 1] + fresh * rng.standard_normal(dim)
    shift_direction = rng.standard_normal(dim)
    shift_direction /= np.linalg.norm(shift_direction)
    query = (
        reference
        + noise * rng.standard_normal((places, dim))
        + noise * shift_direction
    )
    manifest = DatasetManifest(
        name=name,
        reference="reference.esnd",
        query="query.esnd",
        places=places,
        tolerance=0.0,
        tolerance_units="frames",
        ground_truth=np.arange(places, dtype=np.int64),
    )
    return Dataset(
        manifest=manifest,
        reference=DescriptorSet(
            descriptors=reference.astype(np.float32),
            frame_ids=np.arange(places, dtype=np.int64),
        ),
        query=DescriptorSet(
            descriptors=query.astype(np.float32),
            frame_ids=np.arange(places, dtype=np.int64),
        ),
    )


def save_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write descriptor files plus manifest.json under `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dataset.manifest
    write_descriptors(out / manifest.reference, dataset.reference.descriptors)
    write_descriptors(out / manifest.query, dataset.query.descriptors)
    path = out / "manifest.json"
    save_manifest(path, manifest)
    return path
