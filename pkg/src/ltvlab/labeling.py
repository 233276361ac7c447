"""Payment attribution, price categorization and label construction."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

from .dataset import PriceCatalog, Sample, TransactionRecord
from .errors import ConfigError


@dataclass(frozen=True)
class LabelConfig:
    window_hours: float = 24.0
    price_catalog: PriceCatalog = field(default_factory=PriceCatalog.default)

    def __post_init__(self):
        w = self.window_hours
        if not (isinstance(w, (int, float)) and math.isfinite(w) and w > 0):
            raise ConfigError(f"label.window_hours: must be finite and > 0, got {w!r}")


def attribute_payments(sample: Sample, config: LabelConfig) -> list[TransactionRecord]:
    """Transactions inside the half-open window [0, T) after the conversion."""
    return [t for t in sample.transactions if t.offset_hours < config.window_hours]


def categorize_price(amount: float, catalog: PriceCatalog) -> int:
    """Zero-based category m with ``prices[m] <= amount < prices[m + 1]``.

    Amounts above the top price fall in the last category; amounts below the
    first price are clamped into category 0.
    """
    if not amount > 0:
        raise ValueError(f"amount must be > 0, got {amount!r}")
    return max(bisect.bisect_right(catalog.prices, amount) - 1, 0)


def build_labels(sample: Sample, config: LabelConfig) -> tuple[tuple[int, ...], float]:
    """Truncated per-category counts and the untruncated windowed spend."""
    catalog = config.price_catalog
    raw = [0] * catalog.n_categories
    ltv = 0.0
    for t in attribute_payments(sample, config):
        raw[categorize_price(t.amount, catalog)] += 1
        ltv += t.amount
    counts = tuple(min(c, cap) for c, cap in zip(raw, catalog.caps))
    return counts, ltv


def raw_counts(sample: Sample, config: LabelConfig) -> tuple[int, ...]:
    """Per-category counts inside the window, before truncation."""
    raw = [0] * config.price_catalog.n_categories
    for t in attribute_payments(sample, config):
        raw[categorize_price(t.amount, config.price_catalog)] += 1
    return tuple(raw)


def label_samples(samples: Iterable[Sample], config: LabelConfig) -> list[Sample]:
    out = []
    for s in samples:
        counts, ltv = build_labels(s, config)
        out.append(replace(s, count_labels=counts, ltv_label=ltv))
    return out
