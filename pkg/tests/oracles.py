"""Independent reference implementations used to verify library results.

Everything here deliberately avoids the code paths under test: the spectral
radius estimate uses only repeated matrix-vector products, percentiles are
computed from first principles, and gradients come from central finite
differences.
"""

from __future__ import annotations

import math

import numpy as np


def power_krylov_radius(
    w,
    subspace: int = 48,
    warmup: int = 50,
    seed: int = 0,
    resid_tol: float = 3e-8,
    max_rounds: int = 40,
) -> float:
    """Spectral radius from power iterations plus a power-built Krylov basis.

    Warm power iterations align a vector with the dominant subspace; the
    span of its further powers is orthonormalized (modified Gram-Schmidt,
    run twice to hold orthogonality) and the small projected eigenproblem
    yields the dominant eigenvalue. Stops once the Ritz pair's residual
    certifies the estimate.
    """
    n = w.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    m = min(subspace, n)
    radius = 0.0
    for _ in range(max_rounds):
        for _ in range(warmup):
            v = w @ v
            v /= np.linalg.norm(v)
        q = np.empty((n, m))
        q[:, 0] = v
        cols = m
        for j in range(1, m):
            u = w @ q[:, j - 1]
            scale = np.linalg.norm(u)
            for _ in range(2):
                for i in range(j):
                    u -= (q[:, i] @ u) * q[:, i]
            norm = np.linalg.norm(u)
            if norm < 1e-10 * max(scale, 1e-30):
                cols = j
                break
            q[:, j] = u / norm
        basis = q[:, :cols]
        h = basis.T @ (w @ basis)
        vals, vecs = np.linalg.eig(h)
        top = int(np.argmax(np.abs(vals)))
        theta, y = vals[top], vecs[:, top]
        ritz = basis @ y
        resid = np.linalg.norm(w @ ritz - theta * ritz)
        radius = float(np.abs(theta))
        if resid < resid_tol or cols < m:
            return radius
    return radius


def percentile_linear(samples: np.ndarray, level: float) -> float:
    """Percentile with linear interpolation between order statistics."""
    values = np.sort(np.asarray(samples, dtype=float))
    if values.size == 0:
        raise ValueError("need at least one sample")
    if values.size == 1:
        return float(values[0])
    position = level / 100.0 * (values.size - 1)
    lower = int(math.floor(position))
    upper = min(lower + 1, values.size - 1)
    weight = position - lower
    return float(values[lower] * (1.0 - weight) + values[upper] * weight)


def central_difference(func, params: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    params = np.asarray(params, dtype=float)
    grad = np.zeros_like(params)
    flat = params.ravel()
    out = grad.ravel()
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        hi = func(bumped.reshape(params.shape))
        bumped[i] = flat[i] - h
        lo = func(bumped.reshape(params.shape))
        out[i] = (hi - lo) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.abs(a - b) / denom


def sign_test_pvalue(wins: int, losses: int) -> float:
    """One-sided exact sign test: P(at least `wins` successes | p = 1/2)."""
    n = wins + losses
    if n == 0:
        return 1.0
    total = sum(math.comb(n, k) for k in range(wins, n + 1))
    return total / 2.0**n


def scalar_leaky_step(x, signal, w, w_in, leakage, gain, rho):
    """Pure-python evaluation of the leaky reservoir update, one float at a time."""
    n = len(x)
    out = []
    for i in range(n):
        drive = 0.0
        for j in range(len(signal)):
            drive += gain * w_in[i][j] * signal[j]
        for j in range(n):
            drive += rho * w[i][j] * x[j]
        out.append((1.0 - leakage) * x[i] + leakage * math.tanh(drive))
    return out
