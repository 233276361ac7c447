"""Run configuration loaded from a TOML file.

One global ``seed`` feeds the generator, the trunk initialisation and every
training stream. Relative paths resolve against ``paths.root``, which itself
resolves against the directory holding the config file.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import DEFAULT_CAP, DEFAULT_PRICES, GeneratorConfig, PriceCatalog
from .errors import ConfigError
from .labeling import LabelConfig
from .nn import TrunkConfig
from .training import FitConfig

MODEL_SECTIONS = ("caltv", "ziln", "mse")


@dataclass(frozen=True)
class EvalConfig:
    train_days: int = 20
    k_lorenz: int = 100
    k_bias: int = 10
    top_fraction: float = 0.8

    def __post_init__(self):
        if self.train_days < 1:
            raise ConfigError(f"eval.train_days: must be positive, got {self.train_days}")
        if self.k_lorenz < 1 or self.k_bias < 1:
            raise ConfigError("eval.k_lorenz / eval.k_bias: must be positive")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ConfigError(f"eval.top_fraction: must lie in (0, 1], got {self.top_fraction}")


@dataclass(frozen=True)
class PathsConfig:
    root: Path = Path("run")
    dataset: Path = Path("dataset.jsonl")
    checkpoints: Path = Path("checkpoints")
    reports: Path = Path("reports")

    def resolve(self, rel) -> Path:
        rel = Path(rel)
        return rel if rel.is_absolute() else self.root / rel

    @property
    def dataset_file(self) -> Path:
        return self.resolve(self.dataset)

    @property
    def checkpoint_dir(self) -> Path:
        return self.resolve(self.checkpoints)

    @property
    def report_dir(self) -> Path:
        return self.resolve(self.reports)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    label: LabelConfig = field(default_factory=LabelConfig)
    hidden_dims: tuple[int, ...] = (128, 64)
    embedding_dims: tuple[int, ...] = (4, 3)
    fits: Mapping[str, FitConfig] = field(default_factory=lambda: {m: FitConfig() for m in MODEL_SECTIONS})
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if len(self.embedding_dims) != len(self.generator.cat_cardinalities):
            raise ConfigError(
                f"trunk.embedding_dims: need one width per categorical field "
                f"({len(self.generator.cat_cardinalities)}), got {len(self.embedding_dims)}"
            )
        if self.eval.train_days >= self.generator.n_days:
            raise ConfigError(
                f"eval.train_days: must be below generator.n_days ({self.generator.n_days}), "
                f"got {self.eval.train_days}"
            )

    @property
    def catalog(self) -> PriceCatalog:
        return self.generator.price_catalog

    def trunk(self) -> TrunkConfig:
        return TrunkConfig(
            dense_dim=self.generator.feature_dim,
            embeddings=tuple(zip(self.generator.cat_cardinalities, self.embedding_dims)),
            hidden_dims=self.hidden_dims,
            seed=self.seed,
        )

    def fit_config(self, model: str) -> FitConfig:
        try:
            return self.fits[model]
        except KeyError:
            raise ConfigError(f"unknown model {model!r}; choose from {', '.join(MODEL_SECTIONS)}") from None

    def with_overrides(self, seed: int | None = None, root: Path | None = None) -> "RunConfig":
        """Apply command-line overrides; a new seed reaches every component."""
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(
                cfg,
                seed=seed,
                generator=dataclasses.replace(cfg.generator, seed=seed),
                fits={m: dataclasses.replace(f, seed=seed) for m, f in cfg.fits.items()},
            )
        if root is not None:
            cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, root=Path(root)))
        return cfg


_SECTION_KEYS = {
    "generator": {"n_samples", "n_days", "payer_rate", "whale_rate", "feature_dim", "noise_scale",
                  "cat_cardinalities", "prices", "caps"},
    "label": {"window_hours"},
    "trunk": {"hidden_dims", "embedding_dims"},
    "train": {f.name for f in dataclasses.fields(FitConfig)} - {"seed"},
    "eval": {f.name for f in dataclasses.fields(EvalConfig)},
    "paths": {f.name for f in dataclasses.fields(PathsConfig)},
}
for _m in MODEL_SECTIONS:
    _SECTION_KEYS[_m] = _SECTION_KEYS["train"]


def _check_keys(doc: Mapping[str, Any]) -> None:
    for key, value in doc.items():
        if key == "seed":
            continue
        if key not in _SECTION_KEYS:
            raise ConfigError(f"unknown top-level key {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a table")
        for sub in value:
            if sub not in _SECTION_KEYS[key]:
                raise ConfigError(f"{key}.{sub}: unknown key")


def _typed(section: str, key: str, value, kind):
    ok = {
        int: lambda v: isinstance(v, int) and not isinstance(v, bool),
        float: lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        str: lambda v: isinstance(v, str),
    }[kind](value)
    if not ok:
        raise ConfigError(f"{section}.{key}: expected {kind.__name__}, got {value!r}")
    return kind(value)


def _int_list(section: str, key: str, value) -> tuple[int, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{section}.{key}: expected a list of integers")
    return tuple(_typed(section, key, v, int) for v in value)


def _float_list(section: str, key: str, value) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{section}.{key}: expected a list of numbers")
    return tuple(_typed(section, key, v, float) for v in value)


def _section(doc, name, types: Mapping[str, Any]) -> dict:
    out = {}
    for key, value in doc.get(name, {}).items():
        kind = types[key]
        if kind == "ints":
            out[key] = _int_list(name, key, value)
        elif kind == "floats":
            out[key] = _float_list(name, key, value)
        elif kind is Path:
            out[key] = Path(_typed(name, key, value, str))
        else:
            out[key] = _typed(name, key, value, kind)
    return out


_FIT_TYPES = {"epochs": int, "batch_size": int, "lr": float, "optimizer": str,
              "finetune_epochs": int, "finetune_lr_scale": float}


def config_from_dict(doc: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    _check_keys(doc)
    seed = _typed("", "seed", doc.get("seed", 0), int)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {seed}")

    gen = _section(doc, "generator", {
        "n_samples": int, "n_days": int, "payer_rate": float, "whale_rate": float, "feature_dim": int,
        "noise_scale": float, "cat_cardinalities": "ints", "prices": "floats", "caps": "ints",
    })
    prices = gen.pop("prices", DEFAULT_PRICES)
    caps = gen.pop("caps", (DEFAULT_CAP,) * len(prices))
    try:
        catalog = PriceCatalog(tuple(prices), tuple(caps))
    except ConfigError as exc:
        raise ConfigError(f"generator.prices/caps: {exc}") from None
    generator = GeneratorConfig(seed=seed, price_catalog=catalog, **gen)

    lab = _section(doc, "label", {"window_hours": float})
    try:
        label = LabelConfig(price_catalog=catalog, **lab)
    except ConfigError as exc:
        raise ConfigError(f"label.window_hours: {exc}") from None

    trunk = _section(doc, "trunk", {"hidden_dims": "ints", "embedding_dims": "ints"})
    shared = _section(doc, "train", _FIT_TYPES)
    fits = {}
    for m in MODEL_SECTIONS:
        merged = {**shared, **_section(doc, m, _FIT_TYPES)}
        try:
            fits[m] = FitConfig(seed=seed, **merged)
        except ConfigError as exc:
            raise ConfigError(f"{m}: {exc}") from None

    ev = EvalConfig(**_section(doc, "eval", {"train_days": int, "k_lorenz": int, "k_bias": int,
                                             "top_fraction": float}))
    paths = PathsConfig(**_section(doc, "paths", {k: Path for k in _SECTION_KEYS["paths"]}))
    if base_dir is not None and not paths.root.is_absolute():
        paths = dataclasses.replace(paths, root=base_dir / paths.root)

    kwargs = {}
    if "hidden_dims" in trunk:
        kwargs["hidden_dims"] = trunk["hidden_dims"]
    if "embedding_dims" in trunk:
        kwargs["embedding_dims"] = trunk["embedding_dims"]
    cfg = RunConfig(seed=seed, generator=generator, label=label, fits=fits, eval=ev, paths=paths, **kwargs)
    cfg.trunk()  # validate layer widths now rather than at train time
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return config_from_dict(doc, base_dir=path.resolve().parent)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
