"""Independent oracles shared by the tests: central finite differences and a
relative-error convention for gradient checks."""

from __future__ import annotations

import numpy as np


def finite_difference(f, x0: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function over a flat parameter vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        step = np.zeros_like(x0)
        step[i] = eps
        g[i] = (f(x0 + step) - f(x0 - step)) / (2.0 * eps)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray,
                  floor: float = 1e-5) -> float:
    """max |a - n| / max(|a|, |n|, floor).

    The floor keeps near-zero coordinates from amplifying finite-difference
    roundoff (~1e-10 at eps=1e-5 on O(1) losses) into spurious failures.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())


def flatten_params(params) -> np.ndarray:
    return np.concatenate([np.asarray(p.data, dtype=np.float64).ravel() for p in params])


def unflatten_like(flat: np.ndarray, params) -> list[np.ndarray]:
    out = []
    off = 0
    for p in params:
        n = p.data.size
        out.append(flat[off:off + n].reshape(p.data.shape))
        off += n
    return out
