"""Training loop: mining, batched forward passes, lazy quadruplet loss, updates.

Output directory layout::

    checkpoint.bin    latest end-of-epoch checkpoint
    loss_log.tsv      one ``epoch<TAB>mean_loss`` line per finished epoch
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import prepare_geometry, stack_geometry
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .loss import LossConfig, TrainingTuple, lazy_quadruplet_loss, mine_tuples
from .network import ModelConfig, forward, init_params

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
LOSS_LOG_NAME = "loss_log.tsv"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    optimizer: str = "adam"
    tuples_per_step: int = 8
    n_pos: int = 1
    n_neg: int = 2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.tuples_per_step < 1 or self.n_pos < 1 or self.n_neg < 1:
            raise ValueError("tuples_per_step, n_pos and n_neg must be >= 1")


class Optimizer:
    """Plain SGD or Adam. Only entries with a nonzero gradient are touched in
    a step, so parameters a step does not reach stay bit-identical."""

    def __init__(self, cfg: TrainConfig, params: dict[str, np.ndarray], state: dict | None = None):
        self.cfg = cfg
        self.state = {k: v.copy() for k, v in (state or {}).items()}
        if cfg.optimizer == "adam" and not self.state:
            for k, v in params.items():
                self.state[f"m/{k}"] = np.zeros_like(v)
                self.state[f"v/{k}"] = np.zeros_like(v)
                self.state[f"t/{k}"] = np.zeros(v.shape, dtype=np.int64)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        for k, g in grads.items():
            mask = g != 0
            if not mask.any():
                continue
            p = params[k]
            if c.optimizer == "sgd":
                p[mask] -= (c.lr * g[mask]).astype(p.dtype)
                continue
            m, v, t = self.state[f"m/{k}"], self.state[f"v/{k}"], self.state[f"t/{k}"]
            gm = g[mask]
            t[mask] += 1
            m[mask] = c.beta1 * m[mask] + (1 - c.beta1) * gm
            v[mask] = c.beta2 * v[mask] + (1 - c.beta2) * gm * gm
            tm = t[mask]
            mhat = m[mask] / (1 - c.beta1**tm)
            vhat = v[mask] / (1 - c.beta2**tm)
            p[mask] -= (c.lr * mhat / (np.sqrt(vhat) + c.adam_eps)).astype(p.dtype)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    epoch_losses: list[float] = field(default_factory=list)
    out_dir: Path | None = None


def epoch_seed(seed: int, epoch: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, stream]).generate_state(1)[0])


def _pad_positives(t: TrainingTuple, n_pos: int) -> list[str]:
    reps = -(-n_pos // len(t.positives))
    return (list(t.positives) * reps)[:n_pos]


def tuple_step_loss(p, cfg: ModelConfig, loss_cfg: LossConfig, tuples, coords_of, geom_of, n_pos):
    """Mean lazy quadruplet loss over ``tuples`` (one batched forward pass)."""
    ids = sorted({i for t in tuples for i in (t.anchor, *t.positives, *t.negatives, t.other_negative)})
    row = {i: r for r, i in enumerate(ids)}
    coords = np.stack([coords_of(i) for i in ids])
    geom = stack_geometry([geom_of(i) for i in ids]) if cfg.attention_mode == "learned" else None
    desc, _ = forward(p, coords, cfg, geom=geom)
    a = ad.take(desc, np.array([row[t.anchor] for t in tuples]))
    pos = ad.take(desc, np.array([[row[i] for i in _pad_positives(t, n_pos)] for t in tuples]))
    neg = ad.take(desc, np.array([[row[i] for i in t.negatives] for t in tuples]))
    other = ad.take(desc, np.array([row[t.other_negative] for t in tuples]))
    per_tuple = lazy_quadruplet_loss(a, pos, neg, other, loss_cfg)
    return ad.mean(per_tuple), per_tuple


def read_loss_log(path) -> list[tuple[int, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        e, v = line.split("\t")
        rows.append((int(e), float(v)))
    return rows


def train(
    submaps,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    out_dir,
    config_text: str = "",
    resume: bool = False,
    stop_after_epoch: int | None = None,
    init: dict[str, np.ndarray] | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train on ``submaps`` (all with the same point count and UTM tags).

    Deterministic for a given seed. With ``resume`` the run continues from
    ``out_dir/checkpoint.bin``; ``stop_after_epoch`` ends the run early (as if
    interrupted) after that epoch's checkpoint is written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path, log_path = out / CHECKPOINT_NAME, out / LOSS_LOG_NAME
    dtype = model_cfg.dtype
    ids = [s.id for s in submaps]
    if len(set(ids)) != len(ids):
        raise TrainingError("duplicate submap ids")
    coords = {s.id: s.coords for s in submaps}
    utm = np.array([s.utm for s in submaps])

    start_epoch = 1
    if resume and ckpt_path.exists():
        ckpt = load_checkpoint(ckpt_path, precision=model_cfg.precision)
        if config_text and ckpt.config_text != config_text:
            raise TrainingError("checkpoint was written with a different configuration")
        params = {k: v.copy() for k, v in ckpt.params.items()}
        opt = Optimizer(train_cfg, params, ckpt.opt_state)
        start_epoch = ckpt.epoch + 1
        losses = [v for e, v in read_loss_log(log_path) if e <= ckpt.epoch] if log_path.exists() else []
    else:
        params = {k: v.astype(dtype).copy() for k, v in (init or init_params(model_cfg, train_cfg.seed)).items()}
        opt = Optimizer(train_cfg, params)
        losses = []
    log_path.write_text("".join(f"{e}\t{v!r}\n" for e, v in enumerate(losses, 1)))

    geom_cache = {}

    def geom_of(i):
        if i not in geom_cache:
            geom_cache[i] = prepare_geometry(coords[i], model_cfg.attention)
        return geom_cache[i]

    last = train_cfg.epochs if stop_after_epoch is None else min(stop_after_epoch, train_cfg.epochs)
    for epoch in range(start_epoch, last + 1):
        mined = mine_tuples(ids, utm, train_cfg.n_pos, train_cfg.n_neg, seed=epoch_seed(train_cfg.seed, epoch, 0))
        if not mined.tuples:
            raise TrainingError("no training tuples could be mined")
        rng = np.random.default_rng(epoch_seed(train_cfg.seed, epoch, 1))
        order = rng.permutation(len(mined.tuples))
        tuple_losses = []
        for step, start in enumerate(range(0, len(order), train_cfg.tuples_per_step)):
            batch = [mined.tuples[j] for j in order[start : start + train_cfg.tuples_per_step]]
            tape = ad.Tape(dtype)
            try:
                p = tape.params_from(params)
                loss, per_tuple = tuple_step_loss(
                    p, model_cfg, loss_cfg, batch, coords.__getitem__, geom_of, train_cfg.n_pos
                )
                grads = ad.grad(tape, loss)
            except ad.NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch} step {step}: {exc}") from exc
            finally:
                tape.release()
            for k, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise TrainingError(f"epoch {epoch} step {step}: non-finite gradient for {k}")
            opt.step(params, grads)
            tuple_losses.extend(per_tuple.data.tolist())
        mean_loss = float(np.mean(tuple_losses))
        losses.append(mean_loss)
        with log_path.open("a") as fh:
            fh.write(f"{epoch}\t{mean_loss!r}\n")
        save_checkpoint(
            ckpt_path,
            Checkpoint(params, opt.state, config_text, {"seed": train_cfg.seed, "epoch": epoch}, epoch),
        )
        log.info("epoch %d mean loss %.6f (%d tuples, %d skipped)", epoch, mean_loss,
                 len(mined.tuples), len(mined.skipped))
        if progress is not None:
            progress(epoch, mean_loss)
    return TrainResult(params, losses, out)
