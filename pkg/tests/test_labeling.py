import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ltvlab.dataset import PriceCatalog, Sample, TransactionRecord
from ltvlab.errors import ConfigError
from ltvlab.labeling import (
    LabelConfig,
    attribute_payments,
    build_labels,
    categorize_price,
    label_samples,
    raw_counts,
)

CATALOG = PriceCatalog.default()
CFG = LabelConfig(24.0, CATALOG)


def sample_with(orders):
    """orders: list of (amount, offset_hours)."""
    return Sample(0, 0, (0.0,), (0,), tuple(TransactionRecord(0, a, o) for a, o in orders))


def scan_category(amount, prices):
    # Linear scan oracle: largest price <= amount, clamped to the first category.
    best = 0
    for m, p in enumerate(prices):
        if p <= amount:
            best = m
    return best


def test_window_is_half_open():
    s = sample_with([(6, 1.0), (6, 23.9), (6, 24.0), (6, 30.0)])
    kept = attribute_payments(s, CFG)
    assert [t.offset_hours for t in kept] == [1.0, 23.9]


def test_window_preserves_order_and_handles_empty():
    s = sample_with([(30, 5.0), (6, 2.0)])
    assert [t.amount for t in attribute_payments(s, CFG)] == [30, 6]
    assert attribute_payments(sample_with([]), CFG) == []


@pytest.mark.parametrize("window", [math.inf, 0.0, -1.0, math.nan])
def test_window_must_be_finite_positive(window):
    with pytest.raises(ConfigError):
        LabelConfig(window, CATALOG)


def test_categorize_examples():
    assert CATALOG.prices[categorize_price(68, CATALOG)] == 68
    assert CATALOG.prices[categorize_price(70, CATALOG)] == 68
    assert categorize_price(70, CATALOG) == scan_category(70, CATALOG.prices)
    assert CATALOG.prices[categorize_price(10_000, CATALOG)] == 648
    assert CATALOG.prices[categorize_price(0.5, CATALOG)] == 1


@pytest.mark.parametrize("amount", [0, -3.0])
def test_categorize_rejects_non_positive(amount):
    with pytest.raises(ValueError):
        categorize_price(amount, CATALOG)


@given(st.floats(min_value=1e-6, max_value=1e6, allow_nan=False))
def test_categorize_matches_linear_scan(amount):
    assert categorize_price(amount, CATALOG) == scan_category(amount, CATALOG.prices)


def test_labels_truncate_counts_but_not_ltv():
    counts, ltv = build_labels(sample_with([(6, 1.0)] * 7), CFG)
    assert counts[CATALOG.prices.index(6)] == 5
    assert sum(counts) == 5
    assert ltv == 42


def test_labels_empty_sample():
    counts, ltv = build_labels(sample_with([]), CFG)
    assert counts == (0,) * 11 and ltv == 0


def test_labels_two_categories():
    counts, ltv = build_labels(sample_with([(6, 1.0), (648, 2.0)]), CFG)
    assert ltv == 654
    assert [m for m, c in enumerate(counts) if c] == [1, 10]
    assert counts[1] == counts[10] == 1


def test_labels_ignore_orders_outside_window():
    counts, ltv = build_labels(sample_with([(6, 1.0), (648, 30.0)]), CFG)
    assert ltv == 6 and sum(counts) == 1


orders_below_caps = st.lists(st.integers(0, 5), min_size=11, max_size=11)


@given(orders_below_caps, st.lists(st.floats(0, 23.99), min_size=1, max_size=1))
def test_decomposition_reconstructs_ltv_exactly(per_cat, offsets):
    orders = [(CATALOG.prices[m], offsets[0]) for m, c in enumerate(per_cat) for _ in range(c)]
    counts, ltv = build_labels(sample_with(orders), CFG)
    assert sum(c * p for c, p in zip(counts, CATALOG.prices)) == ltv


@given(st.lists(st.integers(0, 12), min_size=3, max_size=3), st.lists(st.integers(1, 12), min_size=3, max_size=3),
       st.integers(0, 2), st.integers(1, 5))
def test_raising_a_cap_never_lowers_a_label(per_cat, caps, which, bump):
    prices = (6.0, 30.0, 68.0)
    orders = [(prices[m], 1.0) for m, c in enumerate(per_cat) for _ in range(c)]
    s = sample_with(orders)
    low = build_labels(s, LabelConfig(24.0, PriceCatalog(prices, tuple(caps))))[0]
    raised = list(caps)
    raised[which] += bump
    high = build_labels(s, LabelConfig(24.0, PriceCatalog(prices, tuple(raised))))[0]
    assert all(h >= l for h, l in zip(high, low))


def test_label_samples_fills_fields():
    s = sample_with([(6, 1.0), (6, 2.0), (12.5, 3.0)])
    (labeled,) = label_samples([s], CFG)
    assert labeled.is_labeled and not s.is_labeled
    assert labeled.ltv_label == 24.5
    assert labeled.count_labels == build_labels(s, CFG)[0]
    assert raw_counts(s, CFG)[1] == 2
