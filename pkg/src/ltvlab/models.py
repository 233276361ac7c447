"""Factory for the three model families."""
from __future__ import annotations

import numpy as np

from .baselines import MseObjective, ZilnObjective
from .caltv import CaltvObjective
from .dataset import PriceCatalog, SampleArrays
from .errors import ConfigError
from .nn import ModelParams, TrunkConfig, gradient_check
from .training import LTVModel

MODEL_NAMES = ("caltv", "ziln", "mse")


def build_model(name: str, trunk: TrunkConfig, catalog: PriceCatalog,
                params: ModelParams | None = None) -> LTVModel:
    if name == "caltv":
        objective = CaltvObjective(catalog)
    elif name == "ziln":
        objective = ZilnObjective()
    elif name == "mse":
        objective = MseObjective()
    else:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    return LTVModel(objective, trunk, params)


def tiny_gradcheck(name: str, seed: int, n_rows: int = 6) -> float:
    """Gradient check of ``name`` on a random tiny network and batch.

    Layer widths, embedding sizes, price catalog and labels are all drawn
    from ``seed``, so a handful of seeds covers a spread of shapes.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6C4]))
    m = int(rng.integers(1, 4))
    # Unit-scale prices: central differences lose ~eps_mach * |loss| / h to
    # cancellation, which swamps small coordinates once the squared-error loss
    # reaches 1e5.
    prices = tuple(float(p) for p in np.sort(rng.choice(np.arange(1, 40), size=m, replace=False)) / 8.0)
    catalog = PriceCatalog(prices, tuple(int(c) for c in rng.integers(1, 4, size=m)))
    cards = tuple(int(c) for c in rng.integers(2, 6, size=rng.integers(0, 3)))
    trunk = TrunkConfig(
        dense_dim=int(rng.integers(1, 5)),
        embeddings=tuple((c, int(rng.integers(1, 4))) for c in cards),
        hidden_dims=tuple(int(h) for h in rng.integers(2, 7, size=rng.integers(1, 3))),
        seed=seed,
    )
    model = build_model(name, trunk, catalog)
    counts = np.stack([rng.integers(0, c + 1, size=n_rows) for c in catalog.caps], axis=1)
    batch = SampleArrays(
        sample_ids=np.arange(n_rows),
        days=np.zeros(n_rows, dtype=np.int64),
        dense=rng.standard_normal((n_rows, trunk.dense_dim)),
        cats=np.stack([rng.integers(0, c, size=n_rows) for c in cards], axis=1)
        if cards else np.zeros((n_rows, 0), dtype=np.int64),
        counts=counts,
        ltv=counts @ np.asarray(prices),
    )
    # A wider step than the default: cancellation at h = 1e-5 reaches 1e-4
    # relative error on small coordinates, while the 1e-2 kink margin keeps
    # h = 1e-4 clear of ReLU switches.
    return gradient_check(model, batch, epsilon=1e-4, seed=seed)
