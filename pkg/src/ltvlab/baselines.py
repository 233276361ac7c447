"""ZILN and squared-error regression baselines on the shared trunk."""
from __future__ import annotations

import math

import numpy as np
from scipy import special

from .dataset import SampleArrays

SIGMA_MIN, SIGMA_MAX = 1e-3, 10.0
MU_LIMIT = 20.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_P_FLOOR = 1e-12


def ziln_loss(p, mu, sigma, v):
    """Zero-inflated log-normal negative log-likelihood.

    Bernoulli cross-entropy on ``v > 0`` plus, for positive ``v``, the
    log-normal NLL ``log v + log sigma + log(2 pi)/2 + (log v - mu)^2 / (2 sigma^2)``.
    Broadcasts over arrays.
    """
    p, mu, sigma, v = (np.asarray(a, dtype=np.float64) for a in (p, mu, sigma, v))
    for name, a in (("p", p), ("mu", mu), ("sigma", sigma), ("v", v)):
        if not np.all(np.isfinite(a)):
            raise ValueError(f"ziln_loss: non-finite {name}")
    if np.any(v < 0):
        raise ValueError("ziln_loss: label must be >= 0")
    pos = v > 0
    p = np.clip(p, _P_FLOOR, 1.0)
    q = np.clip(1.0 - p, _P_FLOOR, 1.0)
    classify = -np.where(pos, np.log(p), np.log(q))
    log_v = np.log(np.where(pos, v, 1.0))
    regress = log_v + np.log(sigma) + HALF_LOG_2PI + (log_v - mu) ** 2 / (2.0 * sigma**2)
    out = classify + np.where(pos, regress, 0.0)
    return float(out) if out.ndim == 0 else out


def ziln_predict(p, mu, sigma):
    """Mean of the zero-inflated log-normal, ``p * exp(mu + sigma^2 / 2)``.

    ``mu`` and ``sigma`` are clamped to the head's ranges before use.
    """
    mu = np.clip(np.asarray(mu, dtype=np.float64), -MU_LIMIT, MU_LIMIT)
    sigma = np.clip(np.asarray(sigma, dtype=np.float64), SIGMA_MIN, SIGMA_MAX)
    out = np.asarray(p, dtype=np.float64) * np.exp(mu + 0.5 * sigma**2)
    return float(out) if out.ndim == 0 else out


def ziln_head(outputs: np.ndarray):
    """Map raw (logit, mu, sigma) outputs to ``(p, mu, sigma)`` with clamps."""
    p = special.expit(outputs[:, 0])
    mu = np.clip(outputs[:, 1], -MU_LIMIT, MU_LIMIT)
    sigma = np.clip(np.logaddexp(0.0, outputs[:, 2]), SIGMA_MIN, SIGMA_MAX)
    return p, mu, sigma


class ZilnObjective:
    name = "ziln"
    head_widths = (3,)

    def loss_and_grad(self, outputs: np.ndarray, batch: SampleArrays):
        v = batch.ltv
        pos = v > 0
        logit, mu_raw, s_raw = outputs[:, 0], outputs[:, 1], outputs[:, 2]
        _, mu, sigma = ziln_head(outputs)

        # classification part from logits for stability
        y = pos.astype(np.float64)
        classify = np.logaddexp(0.0, logit) - y * logit
        d_logit = special.expit(logit) - y

        log_v = np.log(np.where(pos, v, 1.0))
        r = log_v - mu
        regress = log_v + np.log(sigma) + HALF_LOG_2PI + r**2 / (2.0 * sigma**2)
        d_mu = np.where(pos, -r / sigma**2, 0.0)
        d_sigma = np.where(pos, 1.0 / sigma - r**2 / sigma**3, 0.0)

        softplus = np.logaddexp(0.0, s_raw)
        d_s_raw = d_sigma * special.expit(s_raw) * ((softplus > SIGMA_MIN) & (softplus < SIGMA_MAX))
        d_mu_raw = d_mu * (np.abs(mu_raw) < MU_LIMIT)

        loss = float(classify.sum() + np.where(pos, regress, 0.0).sum())
        d_out = np.stack([d_logit, d_mu_raw, d_s_raw], axis=1)
        return loss, d_out

    def predict(self, outputs: np.ndarray):
        p, mu, sigma = ziln_head(outputs)
        return ziln_predict(p, mu, sigma), None


class MseObjective:
    """Squared error on the raw LTV label; predictions clamped at zero."""

    name = "mse"
    head_widths = (1,)

    def loss_and_grad(self, outputs: np.ndarray, batch: SampleArrays):
        resid = outputs[:, 0] - batch.ltv
        d_out = (2.0 * resid)[:, None]
        return float(resid @ resid), d_out

    def predict(self, outputs: np.ndarray):
        return np.maximum(outputs[:, 0], 0.0), None


def mse_fit(data, trunk, config, params=None):
    """Train the squared-error baseline; returns ``(model, train_log)``."""
    from .training import LTVModel, fit

    model = LTVModel(MseObjective(), trunk, params)
    model.params, trainlog = fit(model, data, config)
    return model, trainlog


def mse_predict(model, data) -> np.ndarray:
    ltv, _ = model.predict(data)
    return ltv
