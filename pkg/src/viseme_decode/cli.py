"""``viseme-decode`` command line front end.

Usage: ``viseme-decode <subcommand> [--config pipeline.json] [--set key=value ...]``

Exit codes: 0 success, 1 validation error (bad config, malformed input,
missing prior stage), 2 I/O error (unreadable paths, work directory locked).
Logs go to stderr as JSON lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from filelock import FileLock, Timeout

from .config import PipelineConfig
from .errors import ConfigError, VisemeDecodeError
from .synth import SynthConfig

log = logging.getLogger("viseme_decode.cli")

THREADS_ENV = "VISEME_DECODE_THREADS"
LOCK_NAME = ".viseme-decode.lock"
SUBCOMMANDS = ("synth", "ingest", "preprocess", "epoch", "train", "predict", "eval", "reconstruct", "report", "all")

_RESERVED = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {"ts": round(record.created, 3), "level": record.levelname.lower(),
                 "logger": record.name, "msg": record.getMessage()}
        for key, value in record.__dict__.items():
            if key not in _RESERVED and not key.startswith("_"):
                entry[key] = value
        if record.exc_info and record.levelno >= logging.ERROR:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


def setup_logging(level=logging.INFO, stream=None) -> None:
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("viseme_decode")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False
    logging.captureWarnings(True)
    logging.getLogger("py.warnings").handlers[:] = [handler]


def configure_threads() -> int:
    """Cap torch intra-op threads from the environment (default 1)."""
    import torch

    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    torch.set_num_threads(n)
    return n


class _Parser(argparse.ArgumentParser):
    # usage errors count as validation errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="viseme-decode", description="Viseme decoding pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="pipeline JSON config (defaults apply when omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.epochs=3 (JSON values)")
        p.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
        if name == "synth":
            p.add_argument("--out", type=Path, help="output directory (default: paths.raw_dir)")
        if name == "preprocess":
            p.add_argument("--lo", type=float)
            p.add_argument("--hi", type=float)
            p.add_argument("--order", type=int)
            p.add_argument("--notch-q", type=float)
        if name == "train":
            p.add_argument("--dataset", type=Path, help="train on one epoch directory")
            p.add_argument("--out", type=Path, help="checkpoint path (with --dataset)")
        if name == "predict":
            p.add_argument("--checkpoint", type=Path)
            p.add_argument("--dataset", type=Path)
            p.add_argument("--out", type=Path, help="predictions JSON path")
        if name == "report":
            p.add_argument("--f1-mode", choices=("pct", "unit"), default="pct",
                           help="print F1 x100 (pct) or in [0, 1] (unit)")
    return parser


def _load_config(args) -> PipelineConfig:
    overrides = list(args.overrides)
    if args.command == "preprocess":
        for flag, key in (("lo", "lo"), ("hi", "hi"), ("order", "order"), ("notch_q", "notch_q")):
            value = getattr(args, flag)
            if value is not None:
                overrides.append(f"filter.{key}={json.dumps(value)}")
    if args.config is None:
        return PipelineConfig.from_dict({}, overrides)
    return PipelineConfig.load(args.config, overrides)


def _synth_only_config(path: Path, overrides) -> SynthConfig | None:
    """A bare synth config (only SynthConfig keys) is accepted by ``synth --out``."""
    d = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(d, dict) and d and set(d) <= set(SynthConfig.__dataclass_fields__):
        from .config import apply_overrides
        return SynthConfig.from_dict(apply_overrides(d, overrides))
    return None


def dispatch(args) -> None:
    from . import pipeline

    if args.command == "synth" and args.out is not None and args.config is not None:
        try:
            scfg = _synth_only_config(args.config, args.overrides)
        except ValueError:
            scfg = None  # let the pipeline loader report the JSON error
        if scfg is not None:
            pipeline.run_synth(None, args.out, scfg)
            return
    cfg = _load_config(args)
    if args.command == "synth":
        pipeline.run_synth(cfg, args.out)
        return
    if args.command == "train" and args.dataset is not None:
        if args.out is None:
            raise ConfigError("train --dataset needs --out")
        pipeline.train_one(cfg, args.dataset, args.out, label=str(args.dataset))
        return
    if args.command == "predict" and any(x is not None for x in (args.checkpoint, args.dataset, args.out)):
        if None in (args.checkpoint, args.dataset, args.out):
            raise ConfigError("predict needs --checkpoint, --dataset and --out together")
        pipeline.predict_one(args.checkpoint, args.dataset, args.out)
        return
    work = cfg.work_dir
    work.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(work / LOCK_NAME))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise BlockingIOError(f"work directory {work} is in use by another pipeline ({LOCK_NAME})") from None
    try:
        if args.command == "report":
            pipeline.run_report(cfg, "pct" if args.f1_mode == "pct" else "unit")
        else:
            pipeline.RUNNERS[args.command](cfg)
    finally:
        lock.release()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(logging.WARNING if args.quiet else logging.INFO)
    t0 = time.perf_counter()
    log.info("stage_start", extra={"event": "stage_start", "stage": args.command})
    try:
        threads = configure_threads()
        log.info("threads", extra={"event": "threads", "threads": threads})
        dispatch(args)
    except VisemeDecodeError as exc:
        log.error(str(exc), extra={"event": "stage_failed", "stage": args.command, "kind": type(exc).__name__})
        print(f"viseme-decode {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        log.error(str(exc), extra={"event": "stage_failed", "stage": args.command, "kind": type(exc).__name__})
        print(f"viseme-decode {args.command}: {exc}", file=sys.stderr)
        return 2
    log.info("stage_end", extra={"event": "stage_end", "stage": args.command,
                                 "seconds": round(time.perf_counter() - t0, 3)})
    return 0


if __name__ == "__main__":
    sys.exit(main())
