"""Command-line entry point: ``depthfuse train|eval|predict|gradcheck|bench``.

Every flag mirrors a config key (``--base_lr`` sets ``base_lr``); ``--config``
reads a ``key = value`` file first. Log verbosity comes from ``DEPTHFUSE_LOG``.
"""
from __future__ import annotations

import os

# Single-threaded BLAS keeps every command bit-reproducible.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from dataclasses import fields  # noqa: E402
from pathlib import Path  # noqa: E402

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VERIFY = 4

COMMANDS = ("train", "eval", "predict", "gradcheck", "bench")


def build_parser() -> argparse.ArgumentParser:
    from .config import RunConfig

    parser = argparse.ArgumentParser(prog="depthfuse", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value run configuration file")
    for f in fields(RunConfig):
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        if f.type in ("bool", bool):
            parser.add_argument(*names, dest=f.name, nargs="?", const="true", default=None, metavar="BOOL")
        else:
            parser.add_argument(*names, dest=f.name, default=None, metavar=f.name.upper())
    return parser


def _setup_logging() -> None:
    level = os.environ.get("DEPTHFUSE_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(message)s",
                        stream=sys.stderr)


def resolve_args(args: argparse.Namespace):
    from .config import load_file, resolve

    file_values = load_file(args.config) if args.config else {}
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    return resolve(file_values, overrides)


def _echo_config(cfg, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.txt").write_text(cfg.to_text())


def cmd_train(cfg) -> int:
    from .train import train

    out = Path(cfg.out)
    _echo_config(cfg, out)
    state = train(cfg, out)
    print(f"trained {state.epoch} epochs; checkpoint at {Path(cfg.checkpoint) if cfg.checkpoint else out / 'checkpoint.bin'}")
    return EXIT_OK


def _frames_for(cfg):
    from .train import dataset_frames, validation_frames

    if cfg.synthetic:
        return validation_frames(cfg) or []
    return dataset_frames(cfg.dataset, split="val")


def _checkpoint_path(cfg) -> Path:
    from .train import DataError

    path = Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out) / "checkpoint.bin"
    if not path.is_file():
        raise DataError(f"checkpoint {path} not found; train first or pass --checkpoint PATH")
    return path


def cmd_eval(cfg) -> int:
    from .objective import format_table
    from .train import evaluate, load_network

    net, _, _ = load_network(_checkpoint_path(cfg))
    frames = _frames_for(cfg)
    rows, pooled = evaluate(net, frames)
    out = Path(cfg.out)
    _echo_config(cfg, out)
    (out / "metrics.txt").write_text(pooled.to_text())
    (out / "metrics_per_frame.json").write_text(json.dumps({n: r.as_dict() for n, r in rows}, indent=2))
    print(format_table(rows + [("ALL (pooled)", pooled)]))
    return EXIT_OK


def cmd_predict(cfg) -> int:
    from .dataio import save_depth_png
    from .train import DataError, load_network, predict_frames
    from .visualize import save_colorized

    net, _, _ = load_network(_checkpoint_path(cfg))
    frames = _frames_for(cfg)
    out = Path(cfg.out)
    try:
        (out / "pred").mkdir(parents=True, exist_ok=True)
        if cfg.viz:
            (out / "viz").mkdir(parents=True, exist_ok=True)
        _echo_config(cfg, out)
    except OSError as exc:
        raise DataError(f"cannot write to output directory {out}: {exc}") from None
    for f, pred in zip(frames, predict_frames(net, frames)):
        save_depth_png(pred, out / "pred" / f"{f.id}.png")
        if cfg.viz:
            save_colorized(pred, out / "viz" / f"{f.id}.png", cfg.viz_max_depth)
    print(f"wrote {len(frames)} predictions to {out / 'pred'}")
    return EXIT_OK


def cmd_gradcheck(cfg) -> int:
    from .gradcheck import format_results, run_suite

    results = run_suite(cfg.gradcheck_seeds, base_seed=cfg.seed)
    print(format_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def cmd_bench(cfg) -> int:
    from . import bench

    report = bench.run(cfg.bench_points, cfg.K, cfg.C, cfg.bench_queries, cfg.bench_repeats, cfg.seed)
    out = Path(cfg.out)
    _echo_config(cfg, out)
    (out / "bench.json").write_text(json.dumps(report, indent=2))
    print(bench.format_report(report))
    return EXIT_OK


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def main(argv=None) -> int:
    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .train import DataError, IncompatibleCheckpoint

    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return HANDLERS[args.command](cfg)
    except IncompatibleCheckpoint as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
