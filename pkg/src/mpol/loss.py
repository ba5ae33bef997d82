"""MPol objective: sorted-entry Wasserstein distance plus a negative-mask penalty.

Each term returns its value and the gradient w.r.t. the predicted mask. The
reference mask is a detached target; no gradient flows into it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class LossReport:
    l_w: float
    l_s: float
    total: float
    lam: float


def _descending_order(a: np.ndarray) -> np.ndarray:
    """Descending order; equal entries keep their linear-index order.

    Without ties every sorting algorithm yields the same permutation, so the
    faster unstable sort is used and the stable one only when ties exist.
    """
    neg = -a
    order = np.argsort(neg)
    ranked = neg[order]
    if np.any(ranked[1:] == ranked[:-1]):
        order = np.argsort(neg, kind="stable")
    return order


def wasserstein_1d(m: np.ndarray, m_p: np.ndarray) -> tuple[float, np.ndarray]:
    m = np.asarray(m, dtype=np.float64)
    m_p = np.asarray(m_p, dtype=np.float64)
    if m.shape != m_p.shape:
        raise ShapeMismatch(f"mask shapes differ: {m.shape} vs {m_p.shape}")
    a, b = m.ravel(), m_p.ravel()
    n = a.size
    order_a = _descending_order(a)
    # only the values of the reference matter, not which entry they came from
    diff = a[order_a] - np.sort(b)[::-1]
    grad = np.zeros(n)
    grad[order_a] = np.sign(diff) / n
    return float(np.abs(diff).sum() / n), grad.reshape(m.shape)


SHELF_REDUCTIONS = ("sum", "mean")


def shelf_penalty(m: np.ndarray, reduction: str = "sum") -> tuple[float, np.ndarray]:
    """Sum (or per-entry mean) of |m| over the negative entries.

    The "mean" form divides by the entry count so the term lives on the same
    per-entry scale as the Wasserstein distance.
    """
    if reduction not in SHELF_REDUCTIONS:
        raise ValueError(f"unknown shelf reduction {reduction!r}")
    m = np.asarray(m, dtype=np.float64)
    neg = m < 0
    value, grad = 0.0 - float(m[neg].sum()), np.where(neg, -1.0, 0.0)
    if reduction == "mean" and m.size:
        value, grad = value / m.size, grad / m.size
    return value, grad


def mpol_loss(
    m: np.ndarray, m_p: np.ndarray, lam: float = 0.1, shelf_reduction: str = "mean"
) -> tuple[LossReport, np.ndarray]:
    l_w, g_w = wasserstein_1d(m, m_p)
    l_s, g_s = shelf_penalty(m, shelf_reduction)
    return LossReport(l_w, l_s, l_w + lam * l_s, lam), g_w + lam * g_s
