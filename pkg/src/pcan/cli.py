"""Command-line entry point.

Commands: ``synth``, ``train``, ``embed``, ``eval``, ``attend``, ``gradcheck``.
Failures print one line to stderr, ``pcan: error=<kind> code=<n> msg=<text>``,
and exit with the code for that kind (see ``EXIT_CODES``).

Environment: ``PCAN_THREADS`` (BLAS threads when ``--threads`` is absent) and
``PCAN_OUT_DIR`` (default output location when ``--out`` is absent).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointFormatError, load_checkpoint
from .config import ConfigError, RunConfig, load_config, parse_config
from .dataset import (
    SubmapFormatError,
    SubmapValidationError,
    generate_synthetic_dataset,
    load_manifest,
    load_submap,
    write_dataset,
)
from .gradcheck import corrupt_gradient, format_report, run_gradcheck
from .network import describe
from .ply import write_ply
from .retrieval import (
    DescriptorDB,
    DescriptorFormatError,
    build_database,
    read_descriptors,
    recall_curve,
    write_descriptors,
    write_recall,
)
from .training import TrainingError, train

log = logging.getLogger("pcan")

EXIT_CODES = {
    "usage": 2,
    "missing_file": 3,
    "format": 4,
    "config": 5,
    "gradcheck_failed": 6,
    "training": 7,
    "internal": 1,
}


class CommandError(Exception):
    def __init__(self, kind: str, msg: str):
        super().__init__(msg)
        self.kind = kind


def _out(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("PCAN_OUT_DIR")
    if not env:
        raise CommandError("usage", "--out not given and PCAN_OUT_DIR not set")
    return Path(env) / default_name


def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CommandError("missing_file", f"{p}: no such file")
    return p


def _run_config(args) -> RunConfig:
    path = _need(args.config) if args.config else None
    cfg = load_config(path, args.set or ())
    log.info("resolved config:\n%s", cfg.dump())
    return cfg


def _model_from_ckpt(path):
    ckpt = load_checkpoint(_need(path))
    try:
        cfg = parse_config(ckpt.config_text)
    except ConfigError as exc:
        raise CommandError("format", f"{path}: embedded config unreadable: {exc}") from None
    return ckpt.params, cfg.model


def _submaps(path, split):
    subs = load_manifest(_need(path), split=split, n_points=None)
    if not subs:
        raise CommandError("format", f"{path}: no submaps" + (f" in split {split!r}" if split else ""))
    return subs


def _descriptors(path, split, params, model) -> DescriptorDB:
    """A descriptor file (has a ``.meta.tsv`` sidecar) or a manifest to embed."""
    p = _need(path)
    if Path(str(p) + ".meta.tsv").exists():
        return read_descriptors(p)
    return build_database(params, model, _submaps(p, split))


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args):
    cfg = _run_config(args)
    out = _out(args, "data")
    manifest = write_dataset(generate_synthetic_dataset(cfg.synth), out)
    (out / "config.ini").write_text(cfg.dump())
    print(manifest)


def cmd_train(args):
    cfg = _run_config(args)
    out = _out(args, "run")
    subs = _submaps(args.data, args.split)
    out.mkdir(parents=True, exist_ok=True)
    text = cfg.dump()
    (out / "config.ini").write_text(text)
    res = train(
        subs, cfg.model, cfg.loss, cfg.train, out, config_text=text, resume=args.resume,
        progress=lambda e, v: log.info("epoch %d loss %r", e, v),
    )
    print(f"{out / 'checkpoint.bin'}\t{res.epoch_losses[-1]!r}")


def cmd_embed(args):
    params, model = _model_from_ckpt(args.ckpt)
    db = build_database(params, model, _submaps(args.data, args.split))
    out = _out(args, "descriptors.bin")
    write_descriptors(out, db)
    print(f"{out}\t{db.matrix.shape[0]}x{db.matrix.shape[1]}")


def cmd_eval(args):
    params, model = _model_from_ckpt(args.ckpt)
    db = _descriptors(args.db, args.db_split, params, model)
    queries = _descriptors(args.queries, args.query_split, params, model)
    curve = recall_curve(queries, db)
    out = _out(args, "recall.tsv")
    write_recall(out, curve)
    print(f"recall@1\t{curve.at1!r}\trecall@top1%\t{curve.top1pct!r}")


def cmd_attend(args):
    params, model = _model_from_ckpt(args.ckpt)
    if model.attention_mode != "learned":
        raise CommandError("config", "checkpoint model has no attention head (attention_mode=ones)")
    sm = load_submap(_need(args.submap), (0.0, 0.0), n_points=None)
    _, attn = describe(params, sm.coords, model)
    out = _out(args, Path(args.submap).stem + ".ply")
    write_ply(out, sm.coords, attn)
    print(f"{out}\t{len(attn)}")


def cmd_gradcheck(args):
    cfg = _run_config(args)
    s = cfg.gradcheck
    hook = corrupt_gradient(args.corrupt) if args.corrupt else None
    report = run_gradcheck(s, grad_hook=hook)
    sys.stdout.write(format_report(report, s.tolerance))
    if not report.passed(s.tolerance):
        raise CommandError("gradcheck_failed", f"max relative error {report.max_rel_err:.3e} >= {s.tolerance:g}")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcan", description=__doc__.split("\n")[0])
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (1 = reproducible mode)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")

    sp = sub.add_parser("synth", help="write the synthetic dataset and manifest")
    with_config(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train on a manifest's training split")
    with_config(sp)
    sp.add_argument("--data", required=True, help="manifest.tsv")
    sp.add_argument("--split", default="train")
    sp.add_argument("--out")
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("embed", help="descriptor matrix for every submap of a manifest")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("eval", help="recall curve of queries against a database")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--db", required=True, help="descriptor file or manifest")
    sp.add_argument("--queries", required=True, help="descriptor file or manifest")
    sp.add_argument("--db-split")
    sp.add_argument("--query-split")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("attend", help="export per-point attention as ASCII PLY")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--submap", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_attend)

    sp = sub.add_parser("gradcheck", help="finite-difference audit at tiny sizes")
    with_config(sp)
    sp.add_argument("--corrupt", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def _fail(kind: str, msg: str) -> int:
    code = EXIT_CODES[kind]
    msg = " ".join(str(msg).split())
    print(f"pcan: error={kind} code={code} msg={msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    threads = args.threads
    if threads is None and os.environ.get("PCAN_THREADS"):
        try:
            threads = int(os.environ["PCAN_THREADS"])
        except ValueError:
            return _fail("usage", f"PCAN_THREADS={os.environ['PCAN_THREADS']!r} is not an integer")
    try:
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                args.func(args)
        else:
            args.func(args)
    except CommandError as exc:
        return _fail(exc.kind, str(exc))
    except ConfigError as exc:
        return _fail("config", str(exc))
    except FileNotFoundError as exc:
        return _fail("missing_file", f"{exc.filename}: no such file")
    except (SubmapFormatError, SubmapValidationError, CheckpointFormatError, DescriptorFormatError) as exc:
        return _fail("format", str(exc))
    except TrainingError as exc:
        return _fail("training", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
