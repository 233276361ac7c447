"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The benchmark (criterion 7) trains all three models on the default 100k
configuration and takes a few minutes on one CPU core.
"""
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from ltvlab import cli
from ltvlab.caltv import predict_ltv
from ltvlab.config import load_config
from ltvlab.dataset import (
    GeneratorConfig,
    PriceCatalog,
    Sample,
    TransactionRecord,
    as_arrays,
    generate_synthetic,
    split_temporal,
)
from ltvlab.evaluation import PredictionRecord, aulc, gbias_var, group_memberships, lorenz_curve, read_metrics
from ltvlab.labeling import LabelConfig, label_samples, raw_counts
from ltvlab.models import MODEL_NAMES, build_model, tiny_gradcheck
from ltvlab.nn import TrunkConfig, softmax
from ltvlab.training import FitConfig, finetune_rolling, fit

DEFAULT_TOML = Path(__file__).resolve().parents[1] / "configs" / "default.toml"
BENCH_BUDGET_S = 15 * 60


def test_c1_gradient_fidelity(acceptance):
    t0 = time.perf_counter()
    worst = {m: max(tiny_gradcheck(m, seed) for seed in range(10)) for m in MODEL_NAMES}
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{m} {e:.2e}" for m, e in worst.items()) + f"; {elapsed:.1f}s"
    assert acceptance("1 gradient fidelity (<1e-4, <60s)", ok, detail)


def _enumerated(p1, p2, prices):
    return math.fsum(p1[a] * p2[b] * (prices[0] * a + prices[1] * b)
                     for a, b in itertools.product(range(3), range(3)))


def test_c2_reconstruction_oracle(acceptance):
    catalog = PriceCatalog((6.0, 30.0), (2, 2))
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        p1, p2 = softmax(rng.normal(scale=2.0, size=3)), softmax(rng.normal(scale=2.0, size=3))
        worst = max(worst, abs(predict_ltv([p1, p2], catalog).ltv - _enumerated(p1, p2, catalog.prices)))
    assert acceptance("2 reconstruction vs 9-outcome enumeration (<=1e-9)", worst <= 1e-9, f"max diff {worst:.2e}")


def test_c3_decomposition_consistency(acceptance):
    cfg = GeneratorConfig(n_samples=20_000, n_days=5, seed=31)
    label_cfg = LabelConfig(24.0, cfg.price_catalog)
    samples = label_samples(generate_synthetic(cfg), label_cfg)
    prices = cfg.price_catalog.prices
    checked = mismatched = 0
    for s in samples:
        if any(r > c for r, c in zip(raw_counts(s, label_cfg), cfg.price_catalog.caps)):
            continue
        checked += 1
        if sum(c * p for c, p in zip(s.count_labels, prices)) != s.ltv_label:
            mismatched += 1
    ok = mismatched == 0 and checked > 19_000
    assert acceptance("3 sum(count*price) == ltv exactly", ok, f"{checked} samples checked, {mismatched} mismatches")


def test_c4_truncation_outlier_insensitivity(acceptance):
    catalog = PriceCatalog.default()
    label_cfg = LabelConfig(24.0, catalog)
    model = build_model("caltv", TrunkConfig(4, ((3, 2),), (8, 6), seed=4), catalog)

    def loss_for(m, n):
        tx = [TransactionRecord(0, 6.0, 2.0)] + [TransactionRecord(0, catalog.prices[m], 3.0)] * n
        batch = as_arrays(label_samples([Sample(0, 0, (0.1, -0.4, 1.2, 0.0), (2,), tuple(tx))], label_cfg))
        return model.loss_and_grad(batch)

    results = []
    for m in (10, 1, 4):
        cap = catalog.caps[m]
        for raw in (cap, cap + 2):
            (la, ga), (lb, gb) = loss_for(m, raw), loss_for(m, 100 * raw)
            results.append(la == lb and np.array_equal(ga.flat, gb.flat))
    ok = all(results)
    assert acceptance("4 loss(C) == loss(100*C) bitwise", ok, f"{sum(results)}/{len(results)} pairs identical")


def test_c5_metric_oracles(acceptance):
    rng = np.random.default_rng(5)
    perm_ok = True
    for n in range(1, 8):
        actual = rng.integers(0, 10, size=n).astype(float)
        actual[0] += 1.0
        for k in range(1, n + 1):
            best = max(
                aulc([PredictionRecord(i, float(n - perm.index(i)), actual[i]) for i in range(n)], k)
                for perm in itertools.permutations(range(n))
            )
            ranked = aulc([PredictionRecord(i, actual[i], actual[i]) for i in range(n)], k)
            perm_ok &= abs(ranked - best) <= 1e-12
    uniform_ok = True
    for n, k in ((100, 10), (1000, 100), (300, 100)):
        r = [PredictionRecord(i, float(p), 2.5) for i, p in enumerate(rng.random(n))]
        uniform_ok &= aulc(r, k) == (k + 1) / (2 * k)
    gb = abs(gbias_var([0.0, 1.0]) - 0.25)
    ok = perm_ok and uniform_ok and gb <= 1e-12
    detail = f"permutation max {'ok' if perm_ok else 'BAD'}, uniform (K+1)/2K {'ok' if uniform_ok else 'BAD'}, " \
             f"gbias_var([0,1]) err {gb:.1e}"
    assert acceptance("5 metric oracles", ok, detail)


def test_c6_ranking_invariance(acceptance):
    rng = np.random.default_rng(6)
    n = 2000
    pred = rng.choice(np.arange(100_000), size=n, replace=False) / 1000.0
    actual = rng.exponential(50.0, size=n) * (rng.random(n) < 0.1)
    actual[0] = 10.0
    a = [PredictionRecord(i, float(p), float(v)) for i, (p, v) in enumerate(zip(pred, actual))]
    b = [PredictionRecord(i, float(p) ** 3 + 1.0, float(v)) for i, (p, v) in enumerate(zip(pred, actual))]
    assert len({r.predicted for r in b}) == n  # transform stays injective in floating point
    d_aulc = aulc(a) - aulc(b)
    same_curve = lorenz_curve(a) == lorenz_curve(b)
    same_groups = group_memberships(a, 10) == group_memberships(b, 10)
    ok = d_aulc == 0 and same_curve and same_groups
    assert acceptance("6 x -> x^3+1 invariance", ok,
                      f"dAULC={d_aulc}, Lorenz equal={same_curve}, deciles equal={same_groups}")


# ---------------------------------------------------------------------------
# 7. desk-scale benchmark
# ---------------------------------------------------------------------------

def _benchmark(tmp_root: Path, seed: int) -> tuple[dict, float]:
    out = tmp_root / f"seed{seed}"
    t0 = time.perf_counter()
    code = cli.main(["run", "--config", str(DEFAULT_TOML), "--out", str(out), "--seed", str(seed)])
    elapsed = time.perf_counter() - t0
    assert code == 0, f"pipeline failed with exit code {code}"
    metrics = {m: read_metrics(out / "reports" / m / "metrics.txt") for m in MODEL_NAMES}
    return {m: (float(v["pooled.aulc"]), float(v["pooled.gbias_var_top80"])) for m, v in metrics.items()}, elapsed


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    cache = {}

    def get(seed):
        if seed not in cache:
            cache[seed] = _benchmark(root, seed)
        return cache[seed]

    return get


def _b_holds(res):
    return res["caltv"][0] >= res["ziln"][0] - 0.005


def _c_holds(res):
    return res["caltv"][1] <= res["ziln"][1]


def _with_rerun(bench, holds):
    """Seed 0 first; on failure a majority of seeds 1-3 decides."""
    res, _ = bench(0)
    if holds(res):
        return True, "seed 0 holds"
    votes = [holds(bench(s)[0]) for s in (1, 2, 3)]
    return sum(votes) >= 2, f"seed 0 fails; re-run seeds 1-3 -> {votes}"


def _table(res):
    return "; ".join(f"{m} AULC {a:.4f} top80 {g:.4g}" for m, (a, g) in res.items())


@pytest.mark.slow
def test_c7_runtime(bench, acceptance):
    res, elapsed = bench(0)
    print(_table(res))
    assert acceptance("7 benchmark runtime (<15 min)", elapsed < BENCH_BUDGET_S, f"{elapsed:.0f}s for seed 0")


@pytest.mark.slow
def test_c7a_caltv_beats_mse(bench, acceptance):
    res, _ = bench(0)
    diff = res["caltv"][0] - res["mse"][0]
    assert acceptance("7a CALTV AULC >= MSE AULC + 0.01", diff >= 0.01,
                      f"CALTV {res['caltv'][0]:.4f} vs MSE {res['mse'][0]:.4f} (diff {diff:+.4f})")


@pytest.mark.slow
def test_c7b_caltv_close_to_ziln(bench, acceptance):
    ok, how = _with_rerun(bench, _b_holds)
    res, _ = bench(0)
    assert acceptance("7b CALTV AULC >= ZILN AULC - 0.005", ok,
                      f"seed 0: CALTV {res['caltv'][0]:.4f} vs ZILN {res['ziln'][0]:.4f}; {how}")


@pytest.mark.slow
def test_c7c_caltv_top80_gbiasvar(bench, acceptance):
    ok, how = _with_rerun(bench, _c_holds)
    res, _ = bench(0)
    assert acceptance("7c CALTV top-80% GBiasVar <= ZILN", ok,
                      f"seed 0: CALTV {res['caltv'][1]:.4g} vs ZILN {res['ziln'][1]:.4g}; {how}")


# ---------------------------------------------------------------------------

def test_c8_protocol_causality(acceptance):
    cfg = GeneratorConfig(n_samples=6000, n_days=8, seed=8, payer_rate=0.1, feature_dim=6)
    samples = label_samples(generate_synthetic(cfg), LabelConfig(24.0, cfg.price_catalog))
    train, rolling = split_temporal(samples, 3)
    trunk = TrunkConfig(6, ((16, 3), (6, 2)), (16, 8), seed=8)
    fc = FitConfig(epochs=1, batch_size=128, seed=8)
    checks = []
    for name in MODEL_NAMES:
        model = build_model(name, trunk, cfg.price_catalog)
        params, _ = fit(model, train, fc)
        full = dict(finetune_rolling(model, params, rolling, fc, first_day=3))
        for d in range(1, len(rolling) - 1):
            short = dict(finetune_rolling(model, params, rolling[:d + 1], fc, first_day=3))
            day = 3 + d
            checks.append(short[day] == full[day])
    ok = all(checks)
    assert acceptance("8 day D+1 predictions independent of later days", ok,
                      f"{sum(checks)}/{len(checks)} truncations bit-identical")


def test_c9_reproducibility(tmp_path, acceptance):
    text = DEFAULT_TOML.read_text()
    cfg = load_config(DEFAULT_TOML)
    assert cfg.generator.n_samples == 100_000
    small = text.replace("n_samples = 100000", "n_samples = 12000").replace("epochs = 10", "epochs = 2")
    conf = tmp_path / "repro.toml"
    conf.write_text(small)
    for run in ("a", "b"):
        assert cli.main(["run", "--config", str(conf), "--out", str(tmp_path / run), "--seed", "9"]) == 0
    a_files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    b_files = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    differing = [str(p) for p in a_files if (tmp_path / "a" / p).read_bytes() != (tmp_path / "b" / p).read_bytes()]
    ok = a_files == b_files and not differing and any(p.name == "metrics.txt" for p in a_files)
    assert acceptance("9 same seed -> byte-identical outputs", ok,
                      f"{len(a_files)} files compared, differing: {differing or 'none'}")
