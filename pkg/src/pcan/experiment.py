"""Desk-scale learning experiment on the synthetic dataset.

Trains one model, embeds the held-out scans, writes ``recall.tsv`` and a
per-scene attention summary next to the checkpoint, and returns the numbers
the acceptance checks look at.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataset import FLOATER, STRUCTURE, SyntheticDataset, generate_synthetic_dataset
from .network import describe
from .retrieval import RecallCurve, build_database, recall_curve, write_recall
from .training import train

RECALL_NAME = "recall.tsv"
ATTENTION_NAME = "attention.tsv"


@dataclass
class DeskResult:
    mode: str
    epoch_losses: list[float]
    recall: RecallCurve
    seconds: float
    floater_mean: np.ndarray | None = None  # one entry per test scan
    structure_mean: np.ndarray | None = None
    out_dir: Path | None = None

    @property
    def loss_ratio(self) -> float:
        return self.epoch_losses[-1] / self.epoch_losses[0]

    @property
    def floater_below_fraction(self) -> float:
        if self.floater_mean is None:
            return float("nan")
        return float(np.mean(self.floater_mean < self.structure_mean))


def attention_by_label(params, model, submaps):
    """Mean attention over floater points and over structure points, per scan."""
    _, attn = describe(params, np.stack([s.coords for s in submaps]), model)
    fl = np.array([a[s.labels == FLOATER].mean() for a, s in zip(attn, submaps)])
    st = np.array([a[s.labels == STRUCTURE].mean() for a, s in zip(attn, submaps)])
    return fl, st


def run_desk(cfg: RunConfig, out_dir, mode: str | None = None, data: SyntheticDataset | None = None,
             progress=None) -> DeskResult:
    """Train with ``attention_mode=mode`` (default: as configured) and evaluate."""
    model = cfg.model if mode is None else replace(cfg.model, attention_mode=mode)
    data = data or generate_synthetic_dataset(cfg.synth)
    out = Path(out_dir)
    t0 = time.perf_counter()
    res = train(data.train, model, cfg.loss, cfg.train, out,
                config_text=replace(cfg, model=model).dump(), progress=progress)
    db = build_database(res.params, model, data.test_db)
    queries = build_database(res.params, model, data.test_query)
    curve = recall_curve(queries, db)
    write_recall(out / RECALL_NAME, curve)
    result = DeskResult(model.attention_mode, res.epoch_losses, curve, 0.0, out_dir=out)
    if model.attention_mode == "learned":
        scans = data.test_db + data.test_query
        fl, st = attention_by_label(res.params, model, scans)
        rows = [f"{s.id}\t{f!r}\t{g!r}" for s, f, g in zip(scans, fl.tolist(), st.tolist())]
        (out / ATTENTION_NAME).write_text("id\tfloater\tstructure\n" + "\n".join(rows) + "\n")
        result.floater_mean, result.structure_mean = fl, st
    result.seconds = time.perf_counter() - t0
    return result
