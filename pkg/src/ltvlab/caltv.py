"""CALTV heads: truncated-count multinomials per price category.

Each category m gets a softmax over counts ``0..cap_m``. Training minimises
the unweighted sum of per-head cross-entropies; the LTV estimate is the
price-weighted sum of the heads' expected counts.

The zero-count class takes part in both the softmax and the loss, so
non-paying samples still produce a gradient. It adds nothing to the expected
count.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import PriceCatalog, SampleArrays
from .nn import PROB_FLOOR, log_softmax, softmax


@dataclass(frozen=True)
class CaltvPrediction:
    expected_counts: tuple[float, ...]
    ltv: float


def head_loss(probs, label: int, cap: int | None = None) -> float:
    """Cross-entropy of one head's probability row against count ``label``."""
    p = np.asarray(probs, dtype=np.float64)
    cap = p.shape[-1] - 1 if cap is None else cap
    if not 0 <= label <= cap:
        raise ValueError(f"count label {label} outside [0, {cap}]")
    return float(-np.log(max(p[label], PROB_FLOOR)))


def total_loss(head_probs: Sequence[np.ndarray], count_labels) -> float:
    """Sum over heads and samples of ``head_loss``.

    ``head_probs[m]`` has shape (B, cap_m + 1) (or (cap_m + 1,) for a single
    sample) and ``count_labels`` has shape (B, M) (or (M,)).
    """
    labels = np.atleast_2d(np.asarray(count_labels, dtype=np.int64))
    total = 0.0
    for m, probs in enumerate(head_probs):
        p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        y = labels[:, m]
        if y.min(initial=0) < 0 or y.max(initial=0) >= p.shape[1]:
            raise ValueError(f"category {m}: count label outside [0, {p.shape[1] - 1}]")
        picked = p[np.arange(p.shape[0]), y]
        total += float(-np.log(np.maximum(picked, PROB_FLOOR)).sum())
    return total


def expected_count(probs) -> np.ndarray | float:
    """``sum_c c * p_c`` over the last axis (class 0 contributes nothing)."""
    p = np.asarray(probs, dtype=np.float64)
    value = p @ np.arange(p.shape[-1], dtype=np.float64)
    return float(value) if np.ndim(value) == 0 else value


def predict_ltv(head_probs: Sequence[np.ndarray], catalog: PriceCatalog) -> CaltvPrediction:
    """Reconstruct LTV for one sample from its per-category probability rows."""
    if len(head_probs) != catalog.n_categories:
        raise ValueError(f"expected {catalog.n_categories} heads, got {len(head_probs)}")
    counts = []
    for probs, cap in zip(head_probs, catalog.caps):
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (cap + 1,):
            raise ValueError(f"head row has shape {p.shape}, expected ({cap + 1},)")
        counts.append(expected_count(p))
    ltv = sum(price * c for price, c in zip(catalog.prices, counts))
    return CaltvPrediction(tuple(counts), float(ltv))


def ltv_upper_bound(catalog: PriceCatalog) -> float:
    return float(sum(p * c for p, c in zip(catalog.prices, catalog.caps)))


class CaltvObjective:
    """Loss/readout glue between the network's logits and the count labels."""

    name = "caltv"

    def __init__(self, catalog: PriceCatalog):
        self.catalog = catalog
        self.head_widths = tuple(cap + 1 for cap in catalog.caps)
        bounds = np.cumsum((0,) + self.head_widths)
        self._slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        self._prices = np.asarray(catalog.prices)

    def head_probs(self, outputs: np.ndarray) -> list[np.ndarray]:
        return [softmax(outputs[:, sl]) for sl in self._slices]

    def loss_and_grad(self, outputs: np.ndarray, batch: SampleArrays):
        """Summed loss over the batch and its gradient w.r.t. the logits.

        Per head the logit gradient is ``softmax - onehot(label)``.
        """
        counts = batch.counts
        rows = np.arange(outputs.shape[0])
        d_out = np.empty_like(outputs)
        loss = 0.0
        for m, sl in enumerate(self._slices):
            y = counts[:, m]
            if y.size and (y.min() < 0 or y.max() > self.catalog.caps[m]):
                raise ValueError(f"category {m}: count label exceeds cap {self.catalog.caps[m]}")
            logp = log_softmax(outputs[:, sl])
            picked = logp[rows, y]
            loss -= float(np.maximum(picked, np.log(PROB_FLOOR)).sum())
            g = np.exp(logp)
            g[rows, y] -= 1.0
            d_out[:, sl] = g
        return loss, d_out

    def predict(self, outputs: np.ndarray):
        """Returns ``(ltv, expected_counts)`` with shapes (B,) and (B, M)."""
        expected = np.stack([expected_count(p) for p in self.head_probs(outputs)], axis=1)
        return expected @ self._prices, expected
