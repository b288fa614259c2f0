"""Fixed random reservoirs with leaky-integrator dynamics.

A reservoir is a sparse random recurrent matrix W (normalized to unit
spectral radius) plus a dense Gaussian input matrix W_in. Both are frozen
at construction; only downstream readouts are ever trained. State evolution
follows

    x(t+1) = (1 - alpha) * x(t) + alpha * f(gamma * W_in s(t) + rho * W x(t))

so the hyper-parameter rho is the effective spectral radius of the
recurrence. Hierarchies stack reservoirs unidirectionally: layer 1 sees the
external signal, layer k > 1 sees layer k-1's previous-step state through a
dense coupling matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

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

ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
}

# Below this size, dense eigenvalues are cheaper and more robust than ARPACK.
_DENSE_EIG_MAX = 600
# Spectral radii below this are treated as zero (nilpotent / empty draws).
_ZERO_RADIUS_TOL = 1e-12
_RESAMPLE_LIMIT = 8
_SNAPSHOT_MAGIC = b"ESNPRSVR"
_SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class ReservoirSpec:
    """Hyper-parameters that fully determine a reservoir given a seed.

    `leakage` may be 0, which freezes the state (useful for degenerate
    hierarchy layers); 1 disables leaky integration entirely.
    """

    size: int
    input_dim: int
    leakage: float = 1.0
    input_gain: float = 1.0
    spectral_scale: float = 1.0
    density: float = 0.1
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError(f"size must be >= 1, got {self.size}")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not 0.0 <= self.leakage <= 1.0:
            raise ValueError(f"leakage must be in [0, 1], got {self.leakage}")
        if not self.input_gain > 0.0:
            raise ValueError(f"input_gain must be > 0, got {self.input_gain}")
        if not 0.0 < self.spectral_scale <= 1.0:
            raise ValueError(
                f"spectral_scale must be in (0, 1], got {self.spectral_scale}"
            )
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must be in (0, 1], got {self.density}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "input_dim": self.input_dim,
            "leakage": self.leakage,
            "input_gain": self.input_gain,
            "spectral_scale": self.spectral_scale,
            "density": self.density,
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReservoirSpec":
        return cls(**data)


@dataclass(frozen=True)
class ReservoirMatrices:
    """Frozen random matrices of one reservoir.

    `w` has unit spectral radius (within 1e-6); `w_in` is standard Gaussian.
    `density` and `seed` are kept as provenance for snapshots.
    """

    w: sp.csr_matrix
    w_in: np.ndarray
    density: float
    seed: int

    @property
    def size(self) -> int:
        return self.w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[1]


def save_spec(spec: ReservoirSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True))


def load_spec(path: str | Path) -> ReservoirSpec:
    return ReservoirSpec.from_dict(json.loads(Path(path).read_text()))


def spectral_radius(w: sp.spmatrix | np.ndarray) -> float:
    """Largest eigenvalue magnitude of a square matrix.

    Uses dense eigenvalues for small matrices and ARPACK otherwise. The
    Arnoldi run asks for a handful of eigenvalues with a generous Krylov
    space: with k=1 and close moduli ARPACK can lock onto a subdominant
    pair and silently miss the true radius. The starting vector is fixed
    for determinism.
    """
    n = w.shape[0]
    if w.shape[0] != w.shape[1]:
        raise ValueError(f"matrix must be square, got {w.shape}")
    if n <= _DENSE_EIG_MAX:
        dense = w.toarray() if sp.issparse(w) else np.asarray(w, dtype=float)
        return float(np.max(np.abs(np.linalg.eigvals(dense))))
    v0 = np.random.default_rng(0).standard_normal(n)
    k = min(8, n - 2)
    try:
        vals = spla.eigs(
            w,
            k=k,
            which="LM",
            v0=v0,
            ncv=min(n - 1, 96),
            tol=1e-14,
            return_eigenvectors=False,
            maxiter=n * 50,
        )
        return float(np.max(np.abs(vals)))
    except spla.ArpackNoConvergence:
        if n <= 4000:
            dense = w.toarray() if sp.issparse(w) else np.asarray(w, dtype=float)
            return float(np.max(np.abs(np.linalg.eigvals(dense))))
        raise


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _freeze_csr(w: sp.csr_matrix) -> sp.csr_matrix:
    w.data.flags.writeable = False
    w.indices.flags.writeable = False
    w.indptr.flags.writeable = False
    return w


def _sample_recurrent(n: int, density: float, rng: np.random.Generator) -> sp.csr_matrix:
    """Sparse matrix with iid Bernoulli(density) support and uniform [-1, 1] values.

    Sampled row by row so huge reservoirs never materialize an n*n mask.
    """
    indptr = np.zeros(n + 1, dtype=np.int64)
    per_row_cols = []
    for i in range(n):
        if density >= 1.0:
            cols = np.arange(n, dtype=np.int64)
        else:
            k = rng.binomial(n, density)
            cols = np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)
        per_row_cols.append(cols)
        indptr[i + 1] = indptr[i] + len(cols)
    indices = np.concatenate(per_row_cols) if n else np.empty(0, dtype=np.int64)
    data = rng.uniform(-1.0, 1.0, size=indptr[-1])
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def build_reservoir(spec: ReservoirSpec) -> ReservoirMatrices:
    """Sample and spectrally normalize the fixed matrices for `spec`.

    The recurrent matrix is rescaled so its spectral radius is 1 within
    1e-6, making `spec.spectral_scale` the exact effective radius at run
    time. A draw with zero spectral radius (possible for tiny or very
    sparse reservoirs) is resampled with an incremented seed a bounded
    number of times before giving up.
    """
    last_radius = 0.0
    for attempt in range(_RESAMPLE_LIMIT + 1):
        rng = np.random.default_rng(spec.seed + attempt)
        w = _sample_recurrent(spec.size, spec.density, rng)
        w_in = rng.standard_normal((spec.size, spec.input_dim))
        radius = spectral_radius(w)
        if radius > _ZERO_RADIUS_TOL:
            w = sp.csr_matrix(w / radius)
            check = spectral_radius(w)
            if abs(check - 1.0) > 1e-6:
                w = sp.csr_matrix(w / check)
                check = spectral_radius(w)
            if abs(check - 1.0) > 1e-6:
                raise RuntimeError(
                    f"spectral normalization failed: radius {check} after rescaling"
                )
            return ReservoirMatrices(
                w=_freeze_csr(w),
                w_in=_freeze(w_in),
                density=spec.density,
                seed=spec.seed,
            )
        last_radius = radius
    raise RuntimeError(
        f"recurrent matrix kept a zero spectral radius ({last_radius}) after "
        f"{_RESAMPLE_LIMIT} resamples; increase size or density"
    )


def zeros_state(spec: ReservoirSpec) -> np.ndarray:
    return np.zeros(spec.size)


def _leaky_update(
    state: np.ndarray,
    drive: np.ndarray,
    leakage: float,
    activation: Callable[[np.ndarray], np.ndarray],
) -> np.ndarray:
    return (1.0 - leakage) * state + leakage * activation(drive)


def step(
    state: np.ndarray,
    signal: np.ndarray,
    spec: ReservoirSpec,
    matrices: ReservoirMatrices,
) -> np.ndarray:
    """One discrete update of the leaky reservoir state. Pure: inputs untouched."""
    state = np.asarray(state, dtype=float)
    signal = np.asarray(signal, dtype=float)
    if state.shape != (spec.size,):
        raise ValueError(f"state has shape {state.shape}, expected ({spec.size},)")
    if signal.shape != (spec.input_dim,):
        raise ValueError(
            f"signal has shape {signal.shape}, expected ({spec.input_dim},)"
        )
    drive = spec.input_gain * (matrices.w_in @ signal) + spec.spectral_scale * (
        matrices.w @ state
    )
    return _leaky_update(state, drive, spec.leakage, ACTIVATIONS[spec.activation])


def run_sequence(
    initial: np.ndarray,
    signals: np.ndarray | Sequence[np.ndarray],
    spec: ReservoirSpec,
    matrices: ReservoirMatrices,
) -> np.ndarray:
    """Evolve the state over a signal sequence, returning all visited states.

    Row t of the result is the state after consuming signals[0..t].
    """
    signals = np.asarray(signals, dtype=float)
    if signals.ndim != 2 or signals.shape[0] == 0:
        raise ValueError("signals must be a nonempty (T, input_dim) array")
    states = np.empty((signals.shape[0], spec.size))
    x = np.asarray(initial, dtype=float)
    for t in range(signals.shape[0]):
        x = step(x, signals[t], spec, matrices)
        states[t] = x
    return states


@dataclass(frozen=True)
class HierarchySpec:
    """Unidirectional stack of reservoirs.

    Layer k's `input_dim` must equal layer k-1's size; the coupling scale
    multiplies the dense Gaussian matrix that feeds layer k-1's state into
    layer k (a scale of 0 decouples the layers). Only layer 1 receives the
    external signal.
    """

    layers: tuple[ReservoirSpec, ...]
    coupling_scales: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if len(self.layers) < 1:
            raise ValueError("hierarchy needs at least one layer")
        if len(self.coupling_scales) != len(self.layers) - 1:
            raise ValueError(
                f"expected {len(self.layers) - 1} coupling scales, "
                f"got {len(self.coupling_scales)}"
            )
        for scale in self.coupling_scales:
            if not scale >= 0.0:
                raise ValueError(f"coupling scales must be >= 0, got {scale}")
        for k in range(1, len(self.layers)):
            if self.layers[k].input_dim != self.layers[k - 1].size:
                raise ValueError(
                    f"layer {k} expects input_dim {self.layers[k - 1].size} "
                    f"(size of layer {k - 1}), got {self.layers[k].input_dim}"
                )

    @property
    def state_size(self) -> int:
        return sum(layer.size for layer in self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    def to_dict(self) -> dict:
        return {
            "layers": [layer.to_dict() for layer in self.layers],
            "coupling_scales": list(self.coupling_scales),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HierarchySpec":
        return cls(
            layers=tuple(ReservoirSpec.from_dict(d) for d in data["layers"]),
            coupling_scales=tuple(data["coupling_scales"]),
        )


def build_hierarchy(hspec: HierarchySpec) -> tuple[ReservoirMatrices, ...]:
    """Build one ReservoirMatrices per layer.

    Layer k's `w_in` doubles as the inter-layer coupling matrix for k > 0
    (dense Gaussian, shape size_k x size_{k-1}); its scale comes from
    `hspec.coupling_scales`, not from the layer's input gain.
    """
    return tuple(build_reservoir(layer) for layer in hspec.layers)


def zeros_hierarchy_state(hspec: HierarchySpec) -> list[np.ndarray]:
    return [zeros_state(layer) for layer in hspec.layers]


def step_hierarchy(
    states: Sequence[np.ndarray],
    signal: np.ndarray,
    hspec: HierarchySpec,
    matrices: Sequence[ReservoirMatrices],
) -> list[np.ndarray]:
    """Synchronous update of all layers.

    Every layer reads its upstream state as it was before this step, so the
    update order between layers is irrelevant.
    """
    if len(states) != len(hspec.layers):
        raise ValueError(
            f"expected {len(hspec.layers)} layer states, got {len(states)}"
        )
    new_states: list[np.ndarray] = []
    for k, (layer, mats) in enumerate(zip(hspec.layers, matrices)):
        x = np.asarray(states[k], dtype=float)
        if x.shape != (layer.size,):
            raise ValueError(
                f"layer {k} state has shape {x.shape}, expected ({layer.size},)"
            )
        if k == 0:
            feed = np.asarray(signal, dtype=float)
            if feed.shape != (layer.input_dim,):
                raise ValueError(
                    f"signal has shape {feed.shape}, expected ({layer.input_dim},)"
                )
            gain = layer.input_gain
        else:
            feed = np.asarray(states[k - 1], dtype=float)
            gain = hspec.coupling_scales[k - 1]
        drive = gain * (mats.w_in @ feed) + layer.spectral_scale * (mats.w @ x)
        new_states.append(
            _leaky_update(x, drive, layer.leakage, ACTIVATIONS[layer.activation])
        )
    return new_states


def run_hierarchy_sequence(
    initials: Sequence[np.ndarray],
    signals: np.ndarray | Sequence[np.ndarray],
    hspec: HierarchySpec,
    matrices: Sequence[ReservoirMatrices],
) -> list[np.ndarray]:
    """Evolve all layers over a signal sequence.

    Returns one (T, size_k) trajectory per layer; concatenate with
    `concat_layer_states` to obtain the readout representation.
    """
    signals = np.asarray(signals, dtype=float)
    if signals.ndim != 2 or signals.shape[0] == 0:
        raise ValueError("signals must be a nonempty (T, input_dim) array")
    steps = signals.shape[0]
    trajectories = [np.empty((steps, layer.size)) for layer in hspec.layers]
    states = [np.asarray(x, dtype=float) for x in initials]
    for t in range(steps):
        states = step_hierarchy(states, signals[t], hspec, matrices)
        for k, x in enumerate(states):
            trajectories[k][t] = x
    return trajectories


def concat_layer_states(trajectories: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(trajectories, axis=1)


def save_reservoir(path: str | Path, matrices: ReservoirMatrices) -> None:
    """Binary snapshot: COO triplets of W plus dense W_in, all little-endian."""
    coo = matrices.w.tocoo()
    with open(path, "wb") as fh:
        write_prelude(fh, _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION)
        write_i64(fh, matrices.size, matrices.input_dim, matrices.seed)
        write_f64(fh, matrices.density)
        write_i64(fh, coo.nnz)
        write_array(fh, coo.row, "<i8")
        write_array(fh, coo.col, "<i8")
        write_array(fh, coo.data, "<f8")
        write_array(fh, matrices.w_in, "<f8")


def load_reservoir(path: str | Path) -> ReservoirMatrices:
    with open(path, "rb") as fh:
        read_prelude(fh, _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION)
        n, d, seed = read_i64(fh, 3)
        (density,) = read_f64(fh, 1)
        (nnz,) = read_i64(fh, 1)
        rows = read_array(fh, "<i8", (nnz,))
        cols = read_array(fh, "<i8", (nnz,))
        vals = read_array(fh, "<f8", (nnz,))
        w_in = read_array(fh, "<f8", (n, d))
    w = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return ReservoirMatrices(
        w=_freeze_csr(w), w_in=_freeze(w_in), density=density, seed=seed
    )


def with_seed(spec: ReservoirSpec, seed: int) -> ReservoirSpec:
    return replace(spec, seed=seed)
