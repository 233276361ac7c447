"""Domain records, the synthetic conversion/payment generator, and dataset files.

The generator draws one latent value score ``z ~ N(0, 1)`` per conversion.
Payer status, whale status, transaction counts, bundle prices and the
observable features are all functions of ``z`` plus noise, so a model that
reads the features can recover part of the spend signal.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, special, stats

from .errors import ConfigError, DataError

DEFAULT_PRICES = (1.0, 6.0, 12.0, 18.0, 30.0, 68.0, 98.0, 128.0, 198.0, 328.0, 648.0)
DEFAULT_CAP = 5

DATASET_FORMAT = "ltvlab-dataset"
DATASET_VERSION = 1

# Hour range of generated transaction offsets; wider than the default
# 24 hour attribution window so that the window actually filters.
OFFSET_HORIZON_HOURS = 48.0


@dataclass(frozen=True)
class PriceCatalog:
    """Ascending significant prices and the per-category count caps."""

    prices: tuple[float, ...] = DEFAULT_PRICES
    caps: tuple[int, ...] = (DEFAULT_CAP,) * len(DEFAULT_PRICES)

    def __post_init__(self):
        prices = tuple(float(p) for p in self.prices)
        caps = tuple(int(c) for c in self.caps)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "caps", caps)
        if not prices:
            raise ConfigError("price_catalog.prices: at least one price is required")
        if len(caps) != len(prices):
            raise ConfigError(
                f"price_catalog.caps: expected {len(prices)} caps, got {len(caps)}"
            )
        if any(not math.isfinite(p) or p <= 0 for p in prices):
            raise ConfigError("price_catalog.prices: prices must be finite and > 0")
        if any(b <= a for a, b in zip(prices, prices[1:])):
            raise ConfigError("price_catalog.prices: must be strictly ascending")
        if any(c < 1 for c in caps):
            raise ConfigError("price_catalog.caps: every cap must be >= 1")

    @property
    def n_categories(self) -> int:
        return len(self.prices)

    @classmethod
    def default(cls, cap: int = DEFAULT_CAP) -> "PriceCatalog":
        return cls(DEFAULT_PRICES, (cap,) * len(DEFAULT_PRICES))


@dataclass(frozen=True)
class TransactionRecord:
    sample_id: int
    amount: float
    offset_hours: float

    def __post_init__(self):
        if not self.amount > 0:
            raise DataError(f"transaction amount must be > 0, got {self.amount!r}")
        if not self.offset_hours >= 0:
            raise DataError(
                f"transaction offset_hours must be >= 0, got {self.offset_hours!r}"
            )


@dataclass(frozen=True)
class Sample:
    """One conversion event with its payments and (once labeled) its labels.

    ``count_labels`` is ``None`` until :func:`ltvlab.labeling.label_samples`
    has been applied; ``ltv_label`` is then the windowed spend.
    """

    sample_id: int
    day_index: int
    dense: tuple[float, ...]
    categorical: tuple[int, ...]
    transactions: tuple[TransactionRecord, ...] = ()
    ltv_label: float = 0.0
    count_labels: tuple[int, ...] | None = None

    @property
    def is_labeled(self) -> bool:
        return self.count_labels is not None


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic generator.

    ``whale_rate`` is the share of payers drawn from the heavy-tailed whale
    component, so the zero-transaction share stays at ``1 - payer_rate``.
    ``cat_cardinalities[0]`` is a game id with its own spend effect; the
    remaining categorical fields are noisy buckets of the latent score.
    """

    n_samples: int = 100_000
    n_days: int = 30
    payer_rate: float = 0.05
    price_catalog: PriceCatalog = field(default_factory=PriceCatalog.default)
    whale_rate: float = 0.05
    feature_dim: int = 16
    noise_scale: float = 2.0
    seed: int = 0
    cat_cardinalities: tuple[int, ...] = (16, 6)

    def __post_init__(self):
        object.__setattr__(self, "cat_cardinalities", tuple(int(c) for c in self.cat_cardinalities))
        if self.n_samples < 1:
            raise ConfigError(f"generator.n_samples: must be positive, got {self.n_samples}")
        if self.n_days < 1:
            raise ConfigError(f"generator.n_days: must be positive, got {self.n_days}")
        if not 0.0 < self.payer_rate < 1.0:
            raise ConfigError(f"generator.payer_rate: must lie in (0, 1), got {self.payer_rate}")
        if not 0.0 <= self.whale_rate < 1.0:
            raise ConfigError(f"generator.whale_rate: must lie in [0, 1), got {self.whale_rate}")
        if self.payer_rate + self.whale_rate >= 1.0:
            raise ConfigError("generator.whale_rate: payer_rate + whale_rate must be < 1")
        if self.feature_dim < 1:
            raise ConfigError(f"generator.feature_dim: must be positive, got {self.feature_dim}")
        if not self.noise_scale >= 0:
            raise ConfigError(f"generator.noise_scale: must be >= 0, got {self.noise_scale}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"generator.seed: must be an unsigned 64-bit integer, got {self.seed}")
        if not self.cat_cardinalities or any(c < 1 for c in self.cat_cardinalities):
            raise ConfigError("generator.cat_cardinalities: need at least one positive cardinality")


# Latent-to-behaviour coefficients of the generator.
PAYER_SLOPE = 2.0
WHALE_SLOPE = 0.0
GAME_EFFECT_SD = 0.5
REPEAT_RATE = 0.45
REPEAT_SLOPE = 0.35
WHALE_COUNT_MEDIAN = 15.0
WHALE_COUNT_LOGSD = 1.0
PRICE_TILT = 0.5
PRICE_DECAY = 0.8
INITIAL_BUNDLE_PROB = 0.5
PROPENSITY_SLOPE = 0.6
WHALE_PRICE_BOOST = 0.5

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(80)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def _solve_intercept(target: float, logit_fn) -> float:
    """Intercept ``a`` with ``E_z[expit(a + ...)] == target`` under z ~ N(0, 1)."""
    return optimize.brentq(lambda a: logit_fn(a) - target, -60.0, 60.0, xtol=1e-14)


def _payer_intercept(payer_rate: float, game_effects: np.ndarray) -> float:
    def mean_rate(a):
        logits = a + PAYER_SLOPE * _GH_NODES[:, None] + game_effects[None, :]
        return float(_GH_WEIGHTS @ special.expit(logits).mean(axis=1))

    return _solve_intercept(payer_rate, mean_rate)


def _whale_intercept(whale_rate: float, payer_a: float, game_effects: np.ndarray) -> float:
    payer = special.expit(
        payer_a + PAYER_SLOPE * _GH_NODES[:, None] + game_effects[None, :]
    ).mean(axis=1)
    payer_mass = float(_GH_WEIGHTS @ payer)

    def mean_rate(a):
        whale = special.expit(a + WHALE_SLOPE * _GH_NODES)
        return float(_GH_WEIGHTS @ (payer * whale)) / payer_mass

    return _solve_intercept(whale_rate, mean_rate)


def _feature_block(z: np.ndarray, feature_dim: int, noise_scale: float, rng) -> np.ndarray:
    # Cycle of latent transforms: linear, linear, saturating, quadratic, pure noise.
    n = z.shape[0]
    signs = rng.choice([-1.0, 1.0], size=feature_dim)
    loadings = signs * rng.uniform(0.5, 1.5, size=feature_dim)
    noise = rng.standard_normal((n, feature_dim))
    out = np.empty((n, feature_dim))
    for j in range(feature_dim):
        kind = j % 5
        if kind in (0, 1):
            base = z
        elif kind == 2:
            base = np.tanh(1.5 * z)
        elif kind == 3:
            base = (z * z - 1.0) / math.sqrt(2.0)
        else:
            base = np.zeros(n)
        out[:, j] = loadings[j] * base + noise_scale * noise[:, j]
    return out


def _price_probs(catalog: PriceCatalog, propensity: float) -> np.ndarray:
    log_p = np.log(np.asarray(catalog.prices))
    logits = -PRICE_DECAY * log_p + PRICE_TILT * propensity * (log_p - log_p.mean())
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def generate_synthetic(config: GeneratorConfig) -> list[Sample]:
    """Draw ``config.n_samples`` unlabeled conversions.

    Deterministic for a fixed ``config.seed``. Every transaction is priced at
    a catalog price, with offsets uniform in [0, 48) hours.
    """
    catalog = config.price_catalog
    m = catalog.n_categories
    n = config.n_samples
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))

    n_games = config.cat_cardinalities[0]
    game_effects = GAME_EFFECT_SD * rng.standard_normal(n_games)
    payer_a = _payer_intercept(config.payer_rate, game_effects)
    whale_a = _whale_intercept(config.whale_rate, payer_a, game_effects) if config.whale_rate > 0 else None

    z = rng.standard_normal(n)
    day = rng.integers(0, config.n_days, size=n)
    game = rng.integers(0, n_games, size=n)

    categorical = [game]
    for card in config.cat_cardinalities[1:]:
        # Noisy latent buckets with equal-mass edges under N(0, 2).
        edges = stats.norm.ppf(np.arange(1, card) / card, scale=math.sqrt(2.0))
        categorical.append(np.searchsorted(edges, z + rng.standard_normal(n)))
    cats = np.stack(categorical, axis=1)

    dense = _feature_block(z, config.feature_dim, config.noise_scale, rng)

    payer_p = special.expit(payer_a + PAYER_SLOPE * z + game_effects[game])
    payer = rng.random(n) < payer_p
    if whale_a is None:
        whale = np.zeros(n, dtype=bool)
    else:
        whale = payer & (rng.random(n) < special.expit(whale_a + WHALE_SLOPE * z))

    initial_bundle = 1 if m > 1 else 0
    transactions: dict[int, tuple[TransactionRecord, ...]] = {}
    for i in np.flatnonzero(payer):
        g_eff = game_effects[game[i]]
        if whale[i]:
            extra = math.floor(
                math.exp(math.log(WHALE_COUNT_MEDIAN) + WHALE_COUNT_LOGSD * rng.standard_normal() + 0.3 * z[i])
            )
        else:
            extra = rng.poisson(REPEAT_RATE * math.exp(REPEAT_SLOPE * z[i] + 0.3 * g_eff))
        n_tx = 1 + int(extra)
        probs = _price_probs(catalog, PROPENSITY_SLOPE * z[i] + g_eff + (WHALE_PRICE_BOOST if whale[i] else 0.0))
        cat_idx = rng.choice(m, size=n_tx, p=probs)
        if rng.random() < INITIAL_BUNDLE_PROB:
            cat_idx[0] = initial_bundle
        offsets = rng.uniform(0.0, OFFSET_HORIZON_HOURS, size=n_tx)
        order = np.argsort(offsets, kind="stable")
        transactions[int(i)] = tuple(
            TransactionRecord(int(i), catalog.prices[cat_idx[k]], float(offsets[k])) for k in order
        )

    dense_rows = dense.tolist()
    cat_rows = cats.tolist()
    return [
        Sample(
            sample_id=i,
            day_index=int(day[i]),
            dense=tuple(dense_rows[i]),
            categorical=tuple(cat_rows[i]),
            transactions=transactions.get(i, ()),
        )
        for i in range(n)
    ]


def split_temporal(
    samples: Sequence[Sample], train_days: int, n_days: int | None = None
) -> tuple[list[Sample], list[list[Sample]]]:
    """Split into the initial training span and per-day rolling buckets.

    ``n_days`` defaults to one past the largest observed day index. Empty
    days inside the range still get an (empty) bucket.
    """
    if n_days is None:
        n_days = max((s.day_index for s in samples), default=-1) + 1
    if not 0 < train_days < n_days:
        raise ConfigError(f"train_days must satisfy 0 < train_days < n_days={n_days}, got {train_days}")
    train: list[Sample] = []
    rolling: list[list[Sample]] = [[] for _ in range(n_days - train_days)]
    for s in samples:
        if s.day_index < train_days:
            train.append(s)
        elif s.day_index < n_days:
            rolling[s.day_index - train_days].append(s)
        else:
            raise DataError(f"sample {s.sample_id}: day_index {s.day_index} >= n_days {n_days}")
    return train, rolling


@dataclass
class SampleArrays:
    """Column view of a sample list, ready for the network."""

    sample_ids: np.ndarray
    days: np.ndarray
    dense: np.ndarray
    cats: np.ndarray
    counts: np.ndarray
    ltv: np.ndarray

    def __len__(self) -> int:
        return self.sample_ids.shape[0]

    def take(self, idx) -> "SampleArrays":
        return SampleArrays(
            self.sample_ids[idx], self.days[idx], self.dense[idx],
            self.cats[idx], self.counts[idx], self.ltv[idx],
        )


def as_arrays(samples: Sequence[Sample], n_categories: int | None = None) -> SampleArrays:
    """Stack labeled samples into arrays. Raises DataError on unlabeled samples."""
    n = len(samples)
    if n == 0:
        m = n_categories or 0
        return SampleArrays(
            np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros((0, 0)),
            np.zeros((0, 0), dtype=np.int64), np.zeros((0, m), dtype=np.int64), np.zeros(0),
        )
    unlabeled = [s.sample_id for s in samples if s.count_labels is None]
    if unlabeled:
        raise DataError(f"{len(unlabeled)} samples are unlabeled (first id {unlabeled[0]})")
    return SampleArrays(
        sample_ids=np.fromiter((s.sample_id for s in samples), dtype=np.int64, count=n),
        days=np.fromiter((s.day_index for s in samples), dtype=np.int64, count=n),
        dense=np.array([s.dense for s in samples], dtype=np.float64),
        cats=np.array([s.categorical for s in samples], dtype=np.int64).reshape(n, -1),
        counts=np.array([s.count_labels for s in samples], dtype=np.int64).reshape(n, -1),
        ltv=np.fromiter((s.ltv_label for s in samples), dtype=np.float64, count=n),
    )


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------

def _sample_to_json(s: Sample) -> str:
    record = {
        "id": s.sample_id,
        "day": s.day_index,
        "dense": list(s.dense),
        "cat": list(s.categorical),
        "tx": [f"{t.amount!r}@{t.offset_hours!r}" for t in s.transactions],
        "ltv": s.ltv_label,
        "counts": None if s.count_labels is None else list(s.count_labels),
    }
    return json.dumps(record, separators=(",", ":"))


def write_dataset(samples: Iterable[Sample], path, catalog: PriceCatalog, feature_dim: int) -> None:
    """Write a header line followed by one JSON record per sample.

    Python's float repr is the shortest exact round-trip rendering, so
    ``read_dataset(write_dataset(S))`` reproduces every float bit for bit.
    """
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "M": catalog.n_categories,
        "F": feature_dim,
        "prices": list(catalog.prices),
        "caps": list(catalog.caps),
    }
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for s in samples:
            fh.write(_sample_to_json(s) + "\n")


def _parse_sample(rec, lineno: int, m: int, f: int, caps: Sequence[int]) -> Sample:
    def fail(field_name, msg):
        raise DataError(f"line {lineno}: field '{field_name}': {msg}")

    if not isinstance(rec, dict):
        fail("<record>", "expected an object")
    for key in ("id", "day", "dense", "cat", "tx", "ltv", "counts"):
        if key not in rec:
            fail(key, "missing")
    sid, day = rec["id"], rec["day"]
    if not isinstance(sid, int) or isinstance(sid, bool):
        fail("id", f"expected integer, got {sid!r}")
    if not isinstance(day, int) or isinstance(day, bool) or day < 0:
        fail("day", f"expected non-negative integer, got {day!r}")
    dense = rec["dense"]
    if not isinstance(dense, list) or len(dense) != f:
        fail("dense", f"expected list of {f} numbers")
    try:
        dense_t = tuple(float(v) for v in dense)
    except (TypeError, ValueError):
        fail("dense", "non-numeric entry")
    cat = rec["cat"]
    if not isinstance(cat, list) or any(not isinstance(c, int) or c < 0 for c in cat):
        fail("cat", "expected list of non-negative integers")
    txs = []
    if not isinstance(rec["tx"], list):
        fail("tx", "expected list of 'amount@offset' strings")
    for k, item in enumerate(rec["tx"]):
        try:
            amount_s, offset_s = str(item).split("@")
            amount, offset = float(amount_s), float(offset_s)
        except ValueError:
            fail("tx", f"entry {k} is not 'amount@offset': {item!r}")
        if not (math.isfinite(amount) and amount > 0):
            fail("tx", f"entry {k} has non-positive amount {amount!r}")
        if not (math.isfinite(offset) and offset >= 0):
            fail("tx", f"entry {k} has negative offset {offset!r}")
        txs.append(TransactionRecord(sid, amount, offset))
    ltv = rec["ltv"]
    if not isinstance(ltv, (int, float)) or isinstance(ltv, bool) or not ltv >= 0:
        fail("ltv", f"expected non-negative number, got {ltv!r}")
    counts = rec["counts"]
    if counts is not None:
        if not isinstance(counts, list) or len(counts) != m:
            fail("counts", f"expected list of {m} integers or null")
        for c, cap in zip(counts, caps):
            if not isinstance(c, int) or not 0 <= c <= cap:
                fail("counts", f"count {c!r} outside [0, cap={cap}]")
        counts = tuple(counts)
    return Sample(sid, day, dense_t, tuple(cat), tuple(txs), float(ltv), counts)


def read_dataset(path) -> tuple[list[Sample], PriceCatalog, int]:
    """Read a dataset file; returns (samples, catalog, feature_dim)."""
    with open(Path(path), encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise DataError("line 1: missing header")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise DataError(f"line 1: header is not valid JSON ({exc.msg})") from None
        if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
            raise DataError("line 1: not an ltvlab dataset header")
        if header.get("version") != DATASET_VERSION:
            raise DataError(
                f"line 1: unsupported dataset version {header.get('version')!r}, "
                f"expected {DATASET_VERSION}"
            )
        try:
            catalog = PriceCatalog(tuple(header["prices"]), tuple(header["caps"]))
            m, f = int(header["M"]), int(header["F"])
        except (KeyError, TypeError, ConfigError) as exc:
            raise DataError(f"line 1: bad header ({exc})") from None
        if m != catalog.n_categories:
            raise DataError(f"line 1: M={m} disagrees with {catalog.n_categories} prices")
        samples = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            samples.append(_parse_sample(rec, lineno, m, f, catalog.caps))
    return samples, catalog, f
