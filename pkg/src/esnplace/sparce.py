"""Sparse readout thresholding of reservoir states.

Each neuron i gets a threshold theta_i = P_i + theta_bar_i: a fixed
percentile baseline P_i calibrated from the absolute activations seen on a
representative batch, plus a learnable offset theta_bar_i (zero-initialized,
adapted by gradient descent together with the readout). The transform

    x'_i = sign(x_i) * relu(|x_i| - theta_i)

zeroes weakly active neurons and shrinks the rest toward zero without
touching the reservoir dynamics themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .binio import (
    read_array,
    read_f64,
    read_i64,
    read_prelude,
    write_array,
    write_f64,
    write_i64,
    write_prelude,
)

_SNAPSHOT_MAGIC = b"ESNPSPRC"
_SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class SparceLayer:
    """Per-neuron thresholds: fixed percentile base plus learnable offset.

    `base` is frozen after calibration; training only ever replaces
    `offset`. `level` is the percentile (in [0, 100)) used at calibration.
    """

    base: np.ndarray
    offset: np.ndarray
    level: float

    def __post_init__(self) -> None:
        base = np.array(self.base, dtype=float)
        offset = np.array(self.offset, dtype=float)
        if base.ndim != 1 or base.shape != offset.shape:
            raise ValueError(
                f"base and offset must be matching vectors, got {base.shape} "
                f"and {offset.shape}"
            )
        if np.any(base < 0):
            raise ValueError("percentile base must be nonnegative")
        if not 0.0 <= self.level < 100.0:
            raise ValueError(f"percentile level must be in [0, 100), got {self.level}")
        base.flags.writeable = False
        offset.flags.writeable = False
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "offset", offset)

    @property
    def size(self) -> int:
        return self.base.shape[0]

    @property
    def thresholds(self) -> np.ndarray:
        return self.base + self.offset

    def with_offset(self, offset: np.ndarray) -> "SparceLayer":
        return SparceLayer(base=self.base, offset=offset, level=self.level)


def calibrate(states: np.ndarray, level: float) -> SparceLayer:
    """Fit per-neuron percentile baselines from a batch of states.

    `states` is (T, N), one reservoir state per row. The baseline of neuron
    i is the `level`-th percentile of |states[:, i]| under linear
    interpolation between order statistics; offsets start at exactly zero so
    the initial zero fraction on the calibration batch is level / 100.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ValueError("states must be a nonempty (T, N) array")
    if not 0.0 <= level < 100.0:
        raise ValueError(f"percentile level must be in [0, 100), got {level}")
    base = np.percentile(np.abs(states), level, axis=0, method="linear")
    return SparceLayer(base=base, offset=np.zeros(states.shape[1]), level=level)


def apply(x: np.ndarray, layer: SparceLayer) -> np.ndarray:
    """Threshold a state (N,) or a batch of states (T, N). Pure."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.size:
        raise ValueError(
            f"state width {x.shape[-1]} does not match layer size {layer.size}"
        )
    return np.sign(x) * np.maximum(np.abs(x) - layer.thresholds, 0.0)


def threshold_gradient(
    x: np.ndarray, upstream: np.ndarray, layer: SparceLayer
) -> np.ndarray:
    """Gradient of a scalar loss with respect to the learnable offsets.

    d x'_i / d theta_bar_i is -sign(x_i) where the neuron is active
    (|x_i| > theta_i) and 0 elsewhere, including at the kink and at x_i = 0.
    For batched inputs (T, N) the per-row contributions are summed; any
    batch averaging is expected to live in `upstream`.
    """
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.shape != upstream.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match state shape {x.shape}"
        )
    if x.shape[-1] != layer.size:
        raise ValueError(
            f"state width {x.shape[-1]} does not match layer size {layer.size}"
        )
    active = np.abs(x) > layer.thresholds
    local = np.where(active, -np.sign(x), 0.0)
    grad = upstream * local
    if grad.ndim == 2:
        grad = grad.sum(axis=0)
    return grad


def save_sparce(path: str | Path, layer: SparceLayer) -> None:
    with open(path, "wb") as fh:
        write_prelude(fh, _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION)
        write_i64(fh, layer.size)
        write_f64(fh, layer.level)
        write_array(fh, layer.base, "<f8")
        write_array(fh, layer.offset, "<f8")


def load_sparce(path: str | Path) -> SparceLayer:
    with open(path, "rb") as fh:
        read_prelude(fh, _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION)
        (n,) = read_i64(fh, 1)
        (level,) = read_f64(fh, 1)
        base = read_array(fh, "<f8", (n,))
        offset = read_array(fh, "<f8", (n,))
    return SparceLayer(base=base, offset=offset, level=level)
