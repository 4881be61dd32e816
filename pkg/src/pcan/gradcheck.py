"""Finite-difference audit of the whole network at tiny sizes (64-bit).

The checked scalar is the lazy quadruplet loss over four tiny clouds plus a
fixed random projection of their descriptors. The projection term keeps
every parameter's gradient alive even when all loss hinges are inactive.
Both T-nets are switched on, with non-zero residual weights, so their
parameters are exercised too.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .attention import AttentionConfig, batch_geometry
from .backbone import BackboneConfig
from .config import GradcheckSettings
from .loss import LossConfig, lazy_quadruplet_loss
from .network import ModelConfig, forward, init_params
from .vlad import VladConfig


def tiny_model(s: GradcheckSettings) -> ModelConfig:
    d = s.feature_dim
    att = replace(AttentionConfig().scaled(s.n_centroids, s.width_divisor), fc_widths=s.fc)
    bb = BackboneConfig((d, d, d, 2 * d, d), True, True, (d, 2 * d), (d,))
    return ModelConfig(bb, att, VladConfig(s.clusters, s.output_dim), precision="float64")


def tiny_problem(s: GradcheckSettings):
    """Model config, parameters, clouds ``[4, N, 3]`` and projection weights."""
    cfg = tiny_model(s)
    rng = np.random.default_rng(s.seed)
    params = init_params(cfg, s.seed)
    # the residual T-net layers start at zero; give them something to do
    for k in params:
        if ".tnet_" in k and k.endswith(".residual.W"):
            params[k] = rng.normal(0, 0.1, params[k].shape)
    coords = rng.uniform(-1, 1, size=(4, s.n_points, 3))
    proj = rng.normal(size=(4, s.output_dim))
    return cfg, params, coords, proj


def make_objective(cfg: ModelConfig, coords, proj, loss_cfg: LossConfig | None = None):
    loss_cfg = loss_cfg or LossConfig()
    geom = batch_geometry(coords, cfg.attention)

    def fn(tape, p):
        desc, _ = forward(p, coords, cfg, geom=geom)
        a = ad.take(desc, np.array([0]))
        pos = ad.take(desc, np.array([[1]]))
        neg = ad.take(desc, np.array([[2]]))
        other = ad.take(desc, np.array([3]))
        loss = ad.sum_(lazy_quadruplet_loss(a, pos, neg, other, loss_cfg))
        return loss + ad.sum_(desc * proj)

    return fn


def run_gradcheck(s: GradcheckSettings, grad_hook=None) -> ad.GradCheckReport:
    cfg, params, coords, proj = tiny_problem(s)
    return ad.finite_diff_check(
        make_objective(cfg, coords, proj),
        params,
        tolerance=s.tolerance,
        step=s.step,
        max_entries=s.max_entries or None,
        seed=s.seed,
        dtype=np.float64,
        grad_hook=grad_hook,
    )


def format_report(report: ad.GradCheckReport, tolerance: float) -> str:
    """One line per parameter group, then an overall verdict."""
    lines = ["group\tmax_rel_err\tchecked\texcluded\tstatus"]
    for name, g in sorted(report.by_group().items()):
        ok = "ok" if g.max_rel_err < tolerance else "FAIL"
        lines.append(f"{name}\t{g.max_rel_err:.3e}\t{g.n_checked}\t{g.n_excluded}\t{ok}")
    verdict = "PASS" if report.passed(tolerance) else "FAIL"
    lines.append(f"# overall\t{report.max_rel_err:.3e}\t{verdict}")
    return "\n".join(lines) + "\n"


def corrupt_gradient(name_prefix: str, scale: float = 1.01):
    """Test hook: scale the analytic gradient of matching parameters."""

    def hook(grads):
        return {k: g * scale if k.startswith(name_prefix) else g for k, g in grads.items()}

    return hook
