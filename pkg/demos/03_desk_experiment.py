"""
Learning to ignore floaters
===========================

Synthetic scenes are building facades, foliage blobs and isolated
"floater" points that are re-drawn on every scan. A place descriptor should
lean on the facades. We train the attention model and the same network with
attention fixed to 1, compare retrieval, and look at where the attention goes.

    python demos/03_desk_experiment.py [epochs] [out_dir]

Thirty epochs take about six minutes on one core.
"""
import sys
from dataclasses import replace
from pathlib import Path


from pcan.config import RunConfig
from pcan.dataset import FLOATER, FOLIAGE, STRUCTURE, generate_synthetic_dataset
from pcan.experiment import run_desk
from pcan.checkpoint import load_checkpoint
from pcan.network import describe
from pcan.ply import write_ply

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
out = Path(sys.argv[2] if len(sys.argv) > 2 else "desk_run")

cfg = RunConfig()
cfg = replace(cfg, train=replace(cfg.train, epochs=epochs))
data = generate_synthetic_dataset(cfg.synth)
print(f"{len(data.train)} training scans, {len(data.test_query)} query scans")

runs = {}
for mode in ("learned", "ones"):
    runs[mode] = run_desk(cfg, out / mode, mode, data,
                          progress=lambda e, v, m=mode: print(f"  [{m}] epoch {e:2d} loss {v:.4f}"))

for mode, r in runs.items():
    print(f"{mode:8s} recall@1 {r.recall.at1:.3f}  recall@top1% {r.recall.top1pct:.3f}  "
          f"loss {r.epoch_losses[0]:.3f} -> {r.epoch_losses[-1]:.3f}  ({r.seconds / 60:.1f} min)")

pcan = runs["learned"]
print(f"floater attention below structure attention in {pcan.floater_below_fraction:.0%} of test scans")

# per-label attention on one query scan, and a PLY to look at
scan = data.test_query[0]
params = load_checkpoint(out / "learned" / "checkpoint.bin").params
_, attn = describe(params, scan.coords, cfg.model)
for lab, name in ((STRUCTURE, "structure"), (FOLIAGE, "foliage"), (FLOATER, "floater")):
    print(f"  {name:9s} mean attention {attn[scan.labels == lab].mean():.4f}")
write_ply(out / f"{scan.id}.ply", scan.coords, attn)
print("wrote", out / f"{scan.id}.ply")
