"""Model wrapper, mini-batch training and the rolling fine-tune protocol."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .dataset import Sample, SampleArrays, as_arrays
from .errors import ConfigError, DataError, NumericError
from .evaluation import PredictionRecord
from .nn import ModelParams, Network, OptimizerState, TrunkConfig, optimizer_step

log = logging.getLogger(__name__)

PREDICTIONS_FORMAT = "ltvlab-predictions"
PREDICTIONS_VERSION = 1


class Objective(Protocol):
    name: str
    head_widths: tuple[int, ...]

    def loss_and_grad(self, outputs: np.ndarray, batch: SampleArrays) -> tuple[float, np.ndarray]: ...

    def predict(self, outputs: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]: ...


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 10
    batch_size: int = 256
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    finetune_epochs: int = 1
    finetune_lr_scale: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.lr > 0 and self.finetune_lr_scale > 0):
            raise ConfigError("learning rates must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")


@dataclass
class TrainLog:
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


class LTVModel:
    """A trunk network paired with an objective (CALTV, ZILN or MSE)."""

    def __init__(self, objective: Objective, trunk: TrunkConfig, params: ModelParams | None = None):
        self.objective = objective
        self.trunk = trunk
        self.network = Network(trunk, objective.head_widths)
        self.params = self.network.init_params() if params is None else params
        if self.params.shapes != self.network.param_shapes():
            raise ConfigError("parameter tensors do not match the network layout")

    @property
    def name(self) -> str:
        return self.objective.name

    def loss_and_grad(self, batch: SampleArrays, params: ModelParams | None = None):
        """Summed batch loss and its gradient as a ModelParams."""
        params = self.params if params is None else params
        outputs, cache = self.network.forward(params, batch.dense, batch.cats)
        loss, d_out = self.objective.loss_and_grad(outputs, batch)
        return loss, self.network.backward(params, cache, d_out)

    def mean_loss(self, data: SampleArrays, params: ModelParams | None = None, chunk: int = 8192) -> float:
        params = self.params if params is None else params
        n = len(data)
        if n == 0:
            return 0.0
        total = 0.0
        for start in range(0, n, chunk):
            batch = data.take(slice(start, start + chunk))
            outputs, _ = self.network.forward(params, batch.dense, batch.cats)
            loss, _ = self.objective.loss_and_grad(outputs, batch)
            total += loss
        return total / n

    def predict(self, data: SampleArrays, params: ModelParams | None = None, chunk: int = 8192):
        """Returns ``(ltv, expected_counts or None)`` for every row of ``data``."""
        params = self.params if params is None else params
        ltv, extra = [], []
        for start in range(0, len(data), chunk):
            batch = data.take(slice(start, start + chunk))
            outputs, _ = self.network.forward(params, batch.dense, batch.cats)
            v, e = self.objective.predict(outputs)
            ltv.append(v)
            extra.append(e)
        if not ltv:
            return np.zeros(0), None
        counts = None if extra[0] is None else np.concatenate(extra)
        return np.concatenate(ltv), counts


def _ensure_arrays(data) -> SampleArrays:
    return data if isinstance(data, SampleArrays) else as_arrays(list(data))


def _run_epochs(model: LTVModel, params: ModelParams, data: SampleArrays, epochs: int,
                batch_size: int, state: OptimizerState, seed_words: Sequence[int], tag: str) -> list[float]:
    losses = []
    n = len(data)
    flat = params.flat
    for epoch in range(epochs):
        rng = np.random.default_rng(np.random.SeedSequence([*seed_words, epoch]))
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, batch_size)):
            batch = data.take(order[start:start + batch_size])
            loss, grad = model.loss_and_grad(batch, params.with_flat(flat))
            if not math.isfinite(loss):
                raise NumericError(f"{tag}: non-finite loss at epoch {epoch}, batch {b}")
            try:
                flat, state = optimizer_step(flat, grad.flat / len(batch), state)
            except NumericError as exc:
                raise NumericError(f"{tag}: epoch {epoch}, batch {b}: {exc}") from None
        epoch_loss = model.mean_loss(data, params.with_flat(flat))
        if not math.isfinite(epoch_loss):
            raise NumericError(f"{tag}: non-finite loss after epoch {epoch}")
        log.info("%s epoch %d loss %.6f", tag, epoch, epoch_loss)
        losses.append(epoch_loss)
    params.flat[...] = flat
    return losses


def fit(model: LTVModel, data, config: FitConfig, params: ModelParams | None = None) -> tuple[ModelParams, TrainLog]:
    """Mini-batch training of ``model`` from ``params`` (default: its own).

    The model is not modified; the trained parameters are returned with a
    log of the full-pass mean loss before training and after each epoch.
    """
    arrays = _ensure_arrays(data)
    params = (model.params if params is None else params).copy()
    initial = model.mean_loss(arrays, params)
    if not math.isfinite(initial):
        raise NumericError(f"{model.name}: non-finite initial loss")
    trainlog = TrainLog(initial)
    if config.epochs == 0 or len(arrays) == 0:
        return params, trainlog
    state = OptimizerState(method=config.optimizer, lr=config.lr)
    trainlog.epoch_losses = _run_epochs(
        model, params, arrays, config.epochs, config.batch_size, state,
        (config.seed, 0), f"{model.name}/fit",
    )
    return params, trainlog


def make_records(model: LTVModel, params: ModelParams, data: SampleArrays) -> list[PredictionRecord]:
    ltv, counts = model.predict(data, params)
    return [
        PredictionRecord(
            sample_id=int(data.sample_ids[i]),
            predicted=float(ltv[i]),
            actual=float(data.ltv[i]),
            day=int(data.days[i]),
            expected_counts=() if counts is None else tuple(float(c) for c in counts[i]),
        )
        for i in range(len(data))
    ]


def finetune_rolling(model: LTVModel, params: ModelParams, buckets: Sequence[Sequence[Sample]],
                     config: FitConfig, first_day: int = 0) -> list[tuple[int, list[PredictionRecord]]]:
    """Day-by-day fine-tune then predict.

    ``buckets[d]`` holds the samples of day ``first_day + d``. For each
    consecutive pair the current checkpoint is fine-tuned on day D and the
    result predicts day D + 1, so a day is always scored by a checkpoint that
    has never seen it. The shuffling stream of each day depends only on the
    seed and the day index.
    """
    if len(buckets) < 2:
        raise ConfigError("finetune_rolling needs at least 2 day buckets")
    current = params.copy()
    out = []
    for d in range(len(buckets) - 1):
        day = first_day + d
        train_day = list(buckets[d])
        if not train_day:
            log.warning("day %d has no samples; skipping fine-tune", day)
        elif config.finetune_epochs > 0:
            state = OptimizerState(method=config.optimizer, lr=config.lr * config.finetune_lr_scale)
            _run_epochs(
                model, current, as_arrays(train_day), config.finetune_epochs, config.batch_size,
                state, (config.seed, 1, day), f"{model.name}/finetune[{day}]",
            )
        eval_day = list(buckets[d + 1])
        if not eval_day:
            log.warning("day %d has no samples; nothing to evaluate", day + 1)
            continue
        out.append((day + 1, make_records(model, current, as_arrays(eval_day))))
    return out


# ---------------------------------------------------------------------------
# Prediction files
# ---------------------------------------------------------------------------

def write_predictions(path, model_name: str, per_day: Sequence[tuple[int, Sequence[PredictionRecord]]]) -> None:
    header = {"format": PREDICTIONS_FORMAT, "version": PREDICTIONS_VERSION, "model": model_name}
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for day, records in per_day:
            for r in records:
                fh.write(json.dumps({
                    "model": model_name,
                    "id": r.sample_id,
                    "day": day,
                    "predicted": r.predicted,
                    "actual": r.actual,
                    "counts": list(r.expected_counts),
                }, separators=(",", ":")) + "\n")


def read_predictions(path) -> tuple[str, list[tuple[int, list[PredictionRecord]]]]:
    with open(Path(path), encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError:
            raise DataError(f"{path}: line 1: invalid header") from None
        if header.get("format") != PREDICTIONS_FORMAT or header.get("version") != PREDICTIONS_VERSION:
            raise DataError(f"{path}: line 1: not a version {PREDICTIONS_VERSION} prediction file")
        by_day: dict[int, list[PredictionRecord]] = {}
        for lineno, line in enumerate(fh, start=2):
            try:
                rec = json.loads(line)
                r = PredictionRecord(int(rec["id"]), float(rec["predicted"]), float(rec["actual"]),
                                     int(rec["day"]), tuple(float(c) for c in rec["counts"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: line {lineno}: bad prediction record ({exc})") from None
            by_day.setdefault(r.day, []).append(r)
    return header["model"], sorted(by_day.items())
