import itertools
import math

import numpy as np
import pytest

from ltvlab.caltv import (
    CaltvObjective,
    expected_count,
    head_loss,
    ltv_upper_bound,
    predict_ltv,
    total_loss,
)
from ltvlab.dataset import PriceCatalog, Sample, SampleArrays, TransactionRecord, as_arrays, split_temporal
from ltvlab.errors import ConfigError
from ltvlab.labeling import LabelConfig, build_labels
from ltvlab.nn import TrunkConfig, softmax
from ltvlab.training import FitConfig, LTVModel, finetune_rolling, fit

TWO = PriceCatalog((6.0, 30.0), (2, 2))


def test_head_loss_examples():
    assert head_loss([1 / 6] * 6, 0) == pytest.approx(math.log(6), abs=1e-14)
    assert head_loss([0.0, 0.0, 1.0], 2) == 0.0
    with pytest.raises(ValueError):
        head_loss([0.5, 0.5], 2)


def test_total_loss_sums_heads():
    p1, p2 = np.array([0.2, 0.5, 0.3]), np.array([0.6, 0.3, 0.1])
    assert total_loss([p1, p2], [1, 0]) == pytest.approx(-math.log(0.5) - math.log(0.6), abs=1e-15)
    assert total_loss([np.full(6, 1 / 6)] * 11, [0] * 11) == pytest.approx(11 * math.log(6), abs=1e-12)


def test_expected_count_examples():
    assert expected_count([0, 0, 1.0, 0, 0, 0]) == 2.0
    assert expected_count([0.5, 0, 0, 0, 0, 0.5]) == 2.5
    assert expected_count([1.0, 0, 0]) == 0.0


def test_predict_ltv_examples():
    catalog = PriceCatalog.default()
    zero_class = [np.eye(6)[0]] * 11
    assert predict_ltv(zero_class, catalog).ltv == 0.0
    full = [np.eye(6)[5]] * 11
    assert predict_ltv(full, catalog).ltv == 7675.0 == ltv_upper_bound(catalog)
    one_648 = [np.eye(6)[0]] * 10 + [np.eye(6)[1]]
    assert predict_ltv(one_648, catalog).ltv == 648.0


def enumerate_ltv(p1, p2, prices=(6.0, 30.0)):
    # Joint enumeration over every count pair under independent heads.
    return math.fsum(p1[a] * p2[b] * (prices[0] * a + prices[1] * b)
                     for a, b in itertools.product(range(len(p1)), range(len(p2))))


def test_reconstruction_matches_enumeration_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p1, p2 = softmax(rng.normal(size=3) * 3), softmax(rng.normal(size=3) * 3)
        assert abs(predict_ltv([p1, p2], TWO).ltv - enumerate_ltv(p1, p2)) <= 1e-9


def test_objective_predict_matches_per_sample_readout():
    rng = np.random.default_rng(1)
    obj = CaltvObjective(TWO)
    out = rng.normal(size=(20, 6))
    ltv, counts = obj.predict(out)
    for i in range(20):
        ref = predict_ltv([softmax(out[i, :3]), softmax(out[i, 3:])], TWO)
        assert ltv[i] == pytest.approx(ref.ltv, abs=1e-12)
        assert counts[i] == pytest.approx(ref.expected_counts, abs=1e-14)
    assert np.all((ltv >= 0) & (ltv <= ltv_upper_bound(TWO)))


def _batch(counts, ltv=None):
    counts = np.asarray(counts, dtype=np.int64)
    n = len(counts)
    return SampleArrays(np.arange(n), np.zeros(n, dtype=np.int64), np.zeros((n, 1)),
                        np.zeros((n, 0), dtype=np.int64), counts,
                        np.zeros(n) if ltv is None else np.asarray(ltv, float))


@pytest.mark.parametrize("raw", [7, 12, 40])
def test_truncated_outlier_loss_is_bitwise_equal(raw):
    catalog = PriceCatalog.default()
    cfg = LabelConfig(24.0, catalog)

    def loss_for(n):
        s = Sample(0, 0, (0.0,), (0,), tuple(TransactionRecord(0, 648.0, 1.0) for _ in range(n)))
        counts, _ = build_labels(s, cfg)
        out = np.random.default_rng(3).normal(size=(1, 66))
        return CaltvObjective(catalog).loss_and_grad(out, _batch([counts]))

    small, big = loss_for(raw), loss_for(100 * raw)
    assert small[0] == big[0]
    assert np.array_equal(small[1], big[1])


def test_logit_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    obj = CaltvObjective(TWO)
    out = rng.normal(size=(5, 6))
    batch = _batch(rng.integers(0, 3, size=(5, 2)))
    _, g = obj.loss_and_grad(out, batch)
    h = 1e-6
    num = np.zeros_like(out)
    for idx in np.ndindex(out.shape):
        up, dn = out.copy(), out.copy()
        up[idx] += h
        dn[idx] -= h
        num[idx] = (obj.loss_and_grad(up, batch)[0] - obj.loss_and_grad(dn, batch)[0]) / (2 * h)
    assert np.allclose(g, num, rtol=1e-6, atol=1e-8)
    # each head's logit gradient sums to zero
    assert np.allclose(g[:, :3].sum(axis=1), 0, atol=1e-15)


def test_label_above_cap_rejected():
    with pytest.raises(ValueError):
        CaltvObjective(TWO).loss_and_grad(np.zeros((1, 6)), _batch([[3, 0]]))


def test_fit_reduces_loss_and_leaves_model_untouched(small_samples):
    train, _ = split_temporal(small_samples, 4)
    data = as_arrays(train)
    catalog = PriceCatalog.default()
    trunk = TrunkConfig(data.dense.shape[1], ((16, 4), (6, 3)), (16, 8), seed=0)
    model = LTVModel(CaltvObjective(catalog), trunk)
    before = model.params.copy()
    params, trainlog = fit(model, data, FitConfig(epochs=3, batch_size=128, lr=3e-3))
    assert model.params == before
    assert trainlog.final_loss < trainlog.initial_loss
    params2, _ = fit(model, data, FitConfig(epochs=3, batch_size=128, lr=3e-3))
    assert params == params2


def test_finetune_rolling_contract(small_samples):
    _, rolling = split_temporal(small_samples, 3)
    catalog = PriceCatalog.default()
    trunk = TrunkConfig(6, ((16, 4), (6, 3)), (8,), seed=0)
    model = LTVModel(CaltvObjective(catalog), trunk)
    cfg = FitConfig(batch_size=64, finetune_epochs=1)
    out = finetune_rolling(model, model.params, rolling, cfg, first_day=3)
    assert [d for d, _ in out] == [4, 5]
    assert [len(r) for _, r in out] == [len(b) for b in rolling[1:]]
    assert all(r.day == d for d, recs in out for r in recs)
    # truncating later days does not change earlier predictions
    short = finetune_rolling(model, model.params, rolling[:2], cfg, first_day=3)
    assert short[0] == out[0]
    with pytest.raises(ConfigError):
        finetune_rolling(model, model.params, rolling[:1], cfg)


def test_finetune_rolling_skips_empty_day(small_samples):
    _, rolling = split_temporal(small_samples, 3)
    model = LTVModel(CaltvObjective(PriceCatalog.default()), TrunkConfig(6, ((16, 4), (6, 3)), (8,)))
    out = finetune_rolling(model, model.params, [rolling[0], [], rolling[2]], FitConfig(batch_size=64), 3)
    assert [d for d, _ in out] == [5]
