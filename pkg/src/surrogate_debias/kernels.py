"""Nadaraya-Watson regression and unnormalised kernel averages.

Product kernels are used throughout. Order 2 is the gaussian kernel, order 4
is the gaussian-based fourth-order kernel ``(3/2 - t^2/2) phi(t)``.
Evaluation is brute force, chunked over query rows to bound memory.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScaleError

UNDERFLOW = 1e-300
_LOG_2PI = np.log(2.0 * np.pi)
_CHUNK = 4_000_000  # max entries of a query-by-train block


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


def default_bandwidth(inputs, exponent_override: float | None = None, c0: float = 1.0) -> float:
    """Rule-of-thumb bandwidth ``c0 * mean_sd * m^(-1/(d+4))``.

    ``exponent_override`` replaces the rate exponent ``1/(d+4)``.
    """
    u = _as_2d(inputs)
    m, d = u.shape
    if m < 2:
        raise ValueError("need at least two points for a bandwidth")
    sd = u.std(axis=0, ddof=1)
    scale = float(sd.mean())
    if not scale > 0:
        raise DegenerateScaleError("inputs have zero variance")
    rate = 1.0 / (d + 4) if exponent_override is None else float(exponent_override)
    return c0 * scale * m ** (-rate)


def kernel_matrix(train, query, bandwidth: float, kernel_order: int = 2) -> np.ndarray:
    """``K_h(train_i - query_k)`` as a ``(k, m)`` array, with ``K_h = K(./h)/h^d``."""
    train = _as_2d(train)
    query = _as_2d(query)
    d = train.shape[1]
    if query.shape[1] != d:
        raise ValueError(f"query has {query.shape[1]} columns, fit has {d}")
    acc = np.zeros((query.shape[0], train.shape[0]))
    poly = None
    for c in range(d):
        t = (query[:, c, None] - train[None, :, c]) / bandwidth
        t *= t
        acc += t
        if kernel_order == 4:
            fac = 1.5 - 0.5 * t
            poly = fac if poly is None else poly * fac
        elif kernel_order != 2:
            raise ValueError("kernel_order must be 2 or 4")
    acc *= -0.5
    acc -= 0.5 * d * _LOG_2PI + d * np.log(bandwidth)
    np.exp(acc, out=acc)
    if poly is not None:
        acc *= poly
    return acc


def _blocks(k: int, m: int, d: int):
    step = max(1, _CHUNK // max(1, m * d))
    for start in range(0, k, step):
        yield slice(start, min(k, start + step))


@dataclass(frozen=True)
class SmootherFit:
    train_inputs: np.ndarray
    train_responses: np.ndarray
    bandwidth: float
    kernel_order: int = 2

    @property
    def dim(self) -> int:
        return self.train_inputs.shape[1]


def nw_fit(inputs, responses, bandwidth: float, kernel_order: int = 2) -> SmootherFit:
    u = _as_2d(inputs)
    y = np.asarray(responses, dtype=float).ravel()
    if u.shape[0] != y.shape[0]:
        raise ValueError("inputs and responses have different lengths")
    if u.shape[0] < 1:
        raise ValueError("cannot fit a smoother on zero points")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if kernel_order not in (2, 4):
        raise ValueError("kernel_order must be 2 or 4")
    return SmootherFit(u.copy(), y.copy(), float(bandwidth), int(kernel_order))


def nw_predict(fit: SmootherFit, query, diagnostics: Counter | None = None) -> np.ndarray:
    """Nadaraya-Watson predictions at ``query`` rows.

    Where the kernel mass underflows (``|sum K| < 1e-300``) the global response
    mean is returned and ``diagnostics["nw_fallback"]`` is incremented.
    """
    q = _as_2d(query)
    if q.shape[1] != fit.dim:
        raise ValueError(f"query has {q.shape[1]} columns, fit has {fit.dim}")
    out = np.empty(q.shape[0])
    fallback = 0
    ybar = float(fit.train_responses.mean())
    for sl in _blocks(q.shape[0], fit.train_inputs.shape[0], fit.dim):
        k = kernel_matrix(fit.train_inputs, q[sl], fit.bandwidth, fit.kernel_order)
        den = k.sum(axis=1)
        num = k @ fit.train_responses
        bad = ~(np.abs(den) >= UNDERFLOW)
        den = np.where(bad, 1.0, den)
        out[sl] = np.where(bad, ybar, num / den)
        fallback += int(bad.sum())
    if diagnostics is not None:
        diagnostics["nw_fallback"] += fallback
    return out


def kernel_weighted_mean(inputs, weights, bandwidth: float, query, kernel_order: int = 2) -> np.ndarray:
    """Unnormalised kernel average ``(1/m) sum_i w_i K_h(u_i - u)`` per query row."""
    u = _as_2d(inputs)
    w = np.asarray(weights, dtype=float).ravel()
    q = _as_2d(query)
    if u.shape[0] != w.shape[0]:
        raise ValueError("inputs and weights have different lengths")
    if q.shape[1] != u.shape[1]:
        raise ValueError(f"query has {q.shape[1]} columns, inputs have {u.shape[1]}")
    m = u.shape[0]
    if m == 0:
        return np.zeros(q.shape[0])
    out = np.empty(q.shape[0])
    for sl in _blocks(q.shape[0], m, u.shape[1]):
        out[sl] = kernel_matrix(u, q[sl], bandwidth, kernel_order) @ w / m
    return out
