"""Command-line driver: generate, train, evaluate, report, gradcheck.

Logs go to stderr; stdout carries ``key=value`` summary lines only.
Exit codes: 0 success, 2 configuration or usage error, 3 data error
(missing or malformed files), 4 numeric failure during training.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .dataset import as_arrays, generate_synthetic, read_dataset, split_temporal, write_dataset
from .errors import ConfigError, DataError, NumericError
from .evaluation import comparison_table, lorenz_svg, read_metrics, rolling_report, write_reports
from .labeling import label_samples
from .models import MODEL_NAMES, build_model, tiny_gradcheck
from .nn import load_checkpoint, save_checkpoint
from .training import fit, finetune_rolling, write_predictions

log = logging.getLogger("ltvlab")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
GRADCHECK_TOL = 1e-4


def _emit(**pairs) -> None:
    print(" ".join(f"{k}={v}" for k, v in pairs.items()), flush=True)


def _fmt(x) -> str:
    return "nan" if x is None else repr(float(x))


def _models(choice: str) -> tuple[str, ...]:
    return MODEL_NAMES if choice == "all" else (choice,)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: RunConfig, dry_run: bool = False) -> Path:
    path = cfg.paths.dataset_file
    if dry_run:
        _emit(command="generate", dry_run=1, n=cfg.generator.n_samples, dataset=path)
        return path
    t0 = time.perf_counter()
    samples = label_samples(generate_synthetic(cfg.generator), cfg.label)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, path, cfg.catalog, cfg.generator.feature_dim)
    ltv = np.array([s.ltv_label for s in samples])
    n_tx = np.array([len(s.transactions) for s in samples])
    spend = ltv[ltv > 0]
    q = np.quantile(spend, [0.5, 0.9, 0.99]) if spend.size else (0.0, 0.0, 0.0)
    log.info("generated %d samples in %.1fs -> %s", len(samples), time.perf_counter() - t0, path)
    _emit(command="generate", n=len(samples), payer_rate=f"{(n_tx > 0).mean():.4f}",
          spend_p50=f"{q[0]:g}", spend_p90=f"{q[1]:g}", spend_p99=f"{q[2]:g}", dataset=path)
    return path


def _load_samples(cfg: RunConfig):
    path = cfg.paths.dataset_file
    if not path.exists():
        raise DataError(f"dataset not found: {path} (run 'ltvlab generate' first)")
    samples, catalog, feature_dim = read_dataset(path)
    if catalog != cfg.catalog:
        raise DataError(f"{path}: price catalog differs from the configuration")
    if feature_dim != cfg.generator.feature_dim:
        raise DataError(f"{path}: feature dimension {feature_dim} != generator.feature_dim "
                        f"{cfg.generator.feature_dim}")
    if any(not s.is_labeled for s in samples):
        samples = label_samples(samples, cfg.label)
    return split_temporal(samples, cfg.eval.train_days, cfg.generator.n_days)


def _checkpoint_path(cfg: RunConfig, model: str) -> Path:
    return cfg.paths.checkpoint_dir / f"{model}.ckpt"


def _meta(cfg: RunConfig, model: str) -> dict:
    trunk = cfg.trunk()
    fc = cfg.fit_config(model)
    return {
        "model": model,
        "seed": cfg.seed,
        "dense_dim": trunk.dense_dim,
        "embeddings": [list(e) for e in trunk.embeddings],
        "hidden_dims": list(trunk.hidden_dims),
        "prices": list(cfg.catalog.prices),
        "caps": list(cfg.catalog.caps),
        "train_days": cfg.eval.train_days,
        "fit": {"epochs": fc.epochs, "batch_size": fc.batch_size, "lr": fc.lr, "optimizer": fc.optimizer},
    }


def cmd_train(cfg: RunConfig, models, dry_run: bool = False) -> list[Path]:
    if dry_run:
        for m in models:
            cfg.fit_config(m)
            _emit(command="train", dry_run=1, model=m, checkpoint=_checkpoint_path(cfg, m))
        return []
    train, _ = _load_samples(cfg)
    data = as_arrays(train, cfg.catalog.n_categories)
    out = []
    for m in models:
        t0 = time.perf_counter()
        model = build_model(m, cfg.trunk(), cfg.catalog)
        params, trainlog = fit(model, data, cfg.fit_config(m))
        path = _checkpoint_path(cfg, m)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, params, _meta(cfg, m))
        losses = [trainlog.initial_loss] + trainlog.epoch_losses
        path.with_suffix(".trainlog").write_text(
            "epoch,mean_loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(losses)), encoding="utf-8")
        log.info("%s trained on %d samples in %.1fs", m, len(data), time.perf_counter() - t0)
        _emit(command="train", model=m, n_train=len(data), initial_loss=_fmt(trainlog.initial_loss),
              final_loss=_fmt(trainlog.final_loss), checkpoint=path)
        out.append(path)
    return out


def cmd_evaluate(cfg: RunConfig, models, dry_run: bool = False) -> list[Path]:
    if dry_run:
        for m in models:
            _emit(command="evaluate", dry_run=1, model=m, reports=cfg.paths.report_dir / m)
        return []
    _, rolling = _load_samples(cfg)
    out = []
    for m in models:
        params, meta = load_checkpoint(_checkpoint_path(cfg, m))
        if meta.get("model") != m:
            raise DataError(f"{_checkpoint_path(cfg, m)}: holds model {meta.get('model')!r}, expected {m!r}")
        try:
            model = build_model(m, cfg.trunk(), cfg.catalog, params)
        except ConfigError as exc:
            raise DataError(f"{_checkpoint_path(cfg, m)}: {exc}; retrain with this configuration") from None
        t0 = time.perf_counter()
        per_day = finetune_rolling(model, params, rolling, cfg.fit_config(m), first_day=cfg.eval.train_days)
        report = rolling_report(per_day, k_lorenz=cfg.eval.k_lorenz, k_bias=cfg.eval.k_bias,
                                top_fraction=cfg.eval.top_fraction)
        out_dir = cfg.paths.report_dir / m
        out_dir.mkdir(parents=True, exist_ok=True)
        write_predictions(out_dir / "predictions.jsonl", m, per_day)
        write_reports(out_dir, m, report)
        for note in report.pooled.notes:
            log.warning("%s: %s", m, note)
        log.info("%s evaluated %d rolling days in %.1fs", m, len(per_day), time.perf_counter() - t0)
        _emit(command="evaluate", model=m, n=report.pooled.n, aulc=_fmt(report.pooled.aulc),
              gbias_var=_fmt(report.pooled.gbias_var), gbias_var_top=_fmt(report.pooled.gbias_var_top),
              reports=out_dir)
        out.append(out_dir)
    if len(models) > 1:
        cmd_report(cfg)
    return out


def cmd_report(cfg: RunConfig) -> Path:
    root = cfg.paths.report_dir
    metrics, curves = {}, {}
    for m in MODEL_NAMES:
        path = root / m / "metrics.txt"
        if not path.exists():
            continue
        metrics[m] = read_metrics(path)
        lorenz = (root / m / "lorenz.csv").read_text(encoding="utf-8").splitlines()[1:]
        curves[m] = [(float(x), float(y)) for _, x, y in (row.split(",") for row in lorenz) if y != "nan"]
    if not metrics:
        raise DataError(f"no model reports under {root} (run 'ltvlab evaluate' first)")
    table = comparison_table(metrics, cfg.eval.top_fraction)
    path = root / "comparison.csv"
    path.write_text("\n".join(table) + "\n", encoding="utf-8")
    (root / "lorenz.svg").write_text(lorenz_svg(curves), encoding="utf-8")
    for line in table:
        print(line)
    return path


def cmd_gradcheck(models, n_configs: int = 10, seed: int = 0) -> float:
    worst = 0.0
    for m in models:
        errs = [tiny_gradcheck(m, seed + i) for i in range(n_configs)]
        worst = max(worst, max(errs))
        _emit(command="gradcheck", model=m, configs=n_configs, max_rel_error=f"{max(errs):.3e}",
              ok=int(max(errs) < GRADCHECK_TOL))
    return worst


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--out", type=Path, help="override paths.root")
    common.add_argument("--dry-run", action="store_true", help="validate and report, write nothing")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="ltvlab", description="Category-aware LTV modelling pipeline.")
    parser.add_argument("--version", action="version", version=f"ltvlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a labeled synthetic dataset")
    for name, text in (("train", "fit on the training days, save a checkpoint"),
                       ("evaluate", "rolling fine-tune and evaluation from a checkpoint"),
                       ("run", "generate, train and evaluate in one go")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--model", choices=MODEL_NAMES + ("all",), default="all")
    sub.add_parser("report", parents=[common], help="comparison table across evaluated models")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--model", choices=MODEL_NAMES + ("all",), default="all")
    p.add_argument("--n-configs", type=int, default=10)
    return parser


def _configure(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    return load_config(args.config).with_overrides(seed=args.seed, root=args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        if args.command == "gradcheck":
            worst = cmd_gradcheck(_models(args.model), args.n_configs, args.seed or 0)
            return EXIT_OK if worst < GRADCHECK_TOL else EXIT_NUMERIC
        cfg = _configure(args)
        if args.command == "generate":
            cmd_generate(cfg, args.dry_run)
        elif args.command == "train":
            cmd_train(cfg, _models(args.model), args.dry_run)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, _models(args.model), args.dry_run)
        elif args.command == "report":
            cmd_report(cfg)
        elif args.command == "run":
            cmd_generate(cfg, args.dry_run)
            cmd_train(cfg, _models(args.model), args.dry_run)
            cmd_evaluate(cfg, _models(args.model), args.dry_run)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
