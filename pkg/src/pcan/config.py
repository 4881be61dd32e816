"""Run configuration: INI-style text files with one section per module.

Format::

    # comment
    [train]
    epochs = 30
    lr = 0.001

Lists are comma-separated (``sag1 = 4, 4, 8``); booleans are true/false.
Unknown sections and keys are errors. Every key has a default, so an empty
file is a valid config; ``--set section.key=value`` overrides come last.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .attention import AttentionConfig
from .backbone import BackboneConfig
from .dataset import SynthConfig
from .loss import LossConfig
from .network import PRECISIONS, ModelConfig
from .pointops import SagConfig
from .training import TrainConfig
from .vlad import VladConfig


class ConfigError(ValueError):
    pass


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# key -> parser; the order here is the order of ``dump``
SCHEMA: dict[str, dict[str, callable]] = {
    "synth": {
        "n_train_scenes": int,
        "n_test_scenes": int,
        "points_per_scene": int,
        "structure_fraction": float,
        "foliage_fraction": float,
        "floater_fraction": float,
        "scans_per_train_scene": int,
        "jitter": float,
        "floater_clearance": float,
        "grid_spacing_m": float,
        "scan_offset_m": float,
        "seed": int,
    },
    "model": {"attention_mode": str, "precision": str},
    "backbone": {
        "widths": _ints,
        "input_tnet": _bool,
        "feature_tnet": _bool,
        "tnet_point_widths": _ints,
        "tnet_fc_widths": _ints,
    },
    "attention": {
        "msg_scales": int,
        "n_centroids": int,
        "radii": _floats,
        "group_sizes": _ints,
        "sag1": _ints,
        "sag2": _ints,
        "sag3": _ints,
        "sag4": _ints,
        "fp1": _ints,
        "fp2": _ints,
        "fc": _ints,
        "interp_k": int,
        "interp_power": float,
    },
    "vlad": {"clusters": int, "output_dim": int},
    "loss": {"alpha": float, "beta": float},
    "train": {
        "epochs": int,
        "lr": float,
        "optimizer": str,
        "tuples_per_step": int,
        "n_pos": int,
        "n_neg": int,
        "seed": int,
        "beta1": float,
        "beta2": float,
        "adam_eps": float,
    },
    "gradcheck": {
        "n_points": int,
        "feature_dim": int,
        "clusters": int,
        "n_centroids": int,
        "width_divisor": int,
        "fc": _ints,
        "output_dim": int,
        "tolerance": float,
        "step": float,
        "max_entries": int,
        "seed": int,
    },
}


@dataclass(frozen=True)
class GradcheckSettings:
    n_points: int = 32
    feature_dim: int = 8
    clusters: int = 4
    n_centroids: int = 8
    width_divisor: int = 8
    fc: tuple[int, ...] = (4, 1)
    output_dim: int = 256
    tolerance: float = 1e-5
    step: float = 1e-5
    # entries sampled per parameter tensor (0 = all)
    max_entries: int = 64
    seed: int = 0


def desk_attention() -> AttentionConfig:
    """Default head layout with 64 centroids, quarter widths and a hidden FC unit
    wide enough to train (a single hidden unit starts dead under ReLU)."""
    return replace(AttentionConfig().scaled(64, 4), fc_widths=(8, 1))


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(
        default_factory=lambda: ModelConfig(
            BackboneConfig((32, 32, 32, 64, 32)), desk_attention(), VladConfig(8)
        )
    )
    # wider margins than LossConfig's: at 0.5/0.2 the desk tuples stop
    # producing hinge gradient within a few epochs and attention goes flat
    loss: LossConfig = field(default_factory=lambda: LossConfig(alpha=1.0, beta=0.5))
    train: TrainConfig = field(default_factory=TrainConfig)
    gradcheck: GradcheckSettings = field(default_factory=GradcheckSettings)

    # -- flat view -----------------------------------------------------------

    def values(self) -> dict[str, dict[str, object]]:
        m, s, t, g = self.model, self.synth, self.train, self.gradcheck
        a, b, v = m.attention, m.backbone, m.vlad
        sc = a.scales
        return {
            "synth": {k: getattr(s, k) for k in SCHEMA["synth"]},
            "model": {"attention_mode": m.attention_mode, "precision": m.precision},
            "backbone": {
                "widths": b.mlp_widths,
                "input_tnet": b.use_input_tnet,
                "feature_tnet": b.use_feature_tnet,
                "tnet_point_widths": b.tnet_point_widths,
                "tnet_fc_widths": b.tnet_fc_widths,
            },
            "attention": {
                "msg_scales": a.msg_scales,
                "n_centroids": a.n_centroids,
                "radii": tuple(x.radius for x in sc),
                "group_sizes": tuple(x.k for x in sc),
                "sag1": sc[0].mlp_widths,
                "sag2": sc[1].mlp_widths,
                "sag3": sc[2].mlp_widths,
                "sag4": a.accumulate.mlp_widths,
                "fp1": a.fp1_widths,
                "fp2": a.fp2_widths,
                "fc": a.fc_widths,
                "interp_k": a.interp_k,
                "interp_power": a.interp_power,
            },
            "vlad": {"clusters": v.n_clusters, "output_dim": v.output_dim},
            "loss": {"alpha": self.loss.alpha, "beta": self.loss.beta},
            "train": {k: getattr(t, k) for k in SCHEMA["train"]},
            "gradcheck": {k: getattr(g, k) for k in SCHEMA["gradcheck"]},
        }

    @classmethod
    def from_values(cls, vals: dict[str, dict[str, object]]) -> "RunConfig":
        a, b = vals["attention"], vals["backbone"]
        n_scales = 3
        if len(a["radii"]) != n_scales or len(a["group_sizes"]) != n_scales:
            raise ConfigError("attention.radii and attention.group_sizes need 3 entries each")
        n = a["n_centroids"]
        scales = tuple(
            SagConfig(n, r, k, a[f"sag{i + 1}"])
            for i, (r, k) in enumerate(zip(a["radii"], a["group_sizes"]))
        )
        att = AttentionConfig(
            msg_scales=a["msg_scales"],
            scales=scales,
            accumulate=SagConfig(1, math.inf, n, a["sag4"]),
            fp1_widths=a["fp1"],
            fp2_widths=a["fp2"],
            fc_widths=a["fc"],
            interp_k=a["interp_k"],
            interp_power=a["interp_power"],
        )
        bb = BackboneConfig(
            b["widths"], b["input_tnet"], b["feature_tnet"], b["tnet_point_widths"], b["tnet_fc_widths"]
        )
        vl = VladConfig(vals["vlad"]["clusters"], vals["vlad"]["output_dim"])
        model = ModelConfig(bb, att, vl, **vals["model"])
        return cls(
            synth=SynthConfig(**vals["synth"]),
            model=model,
            loss=LossConfig(**vals["loss"]),
            train=TrainConfig(**vals["train"]),
            gradcheck=GradcheckSettings(**vals["gradcheck"]),
        )

    def dump(self) -> str:
        """Fully resolved config in the file format (round-trips through ``parse``)."""
        out = []
        for sec, kv in self.values().items():
            out.append(f"[{sec}]")
            out += [f"{k} = {_fmt(v)}" for k, v in kv.items()]
            out.append("")
        return "\n".join(out)


def parse_config(text: str = "", overrides=(), base: RunConfig | None = None) -> RunConfig:
    """Apply a config file's text and then ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",), delimiters=("=",)
    )
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {' '.join(str(exc).split())}") from None
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
    raw = [(sec, k, v) for sec in cp.sections() for k, v in cp.items(sec)]
    for item in overrides:
        key, sep, val = item.partition("=")
        sec, dot, k = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        raw.append((sec, k, val.strip()))

    vals = (base or RunConfig()).values()
    for sec, k, v in raw:
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        if k not in SCHEMA[sec]:
            raise ConfigError(f"unknown key {sec}.{k}")
        try:
            vals[sec][k] = SCHEMA[sec][k](v)
        except ValueError as exc:
            raise ConfigError(f"{sec}.{k}: {exc}") from None
    if vals["model"]["precision"] not in PRECISIONS:
        raise ConfigError(f"model.precision must be one of {sorted(PRECISIONS)}")
    try:
        return RunConfig.from_values(vals)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides=()) -> RunConfig:
    text = Path(path).read_text() if path is not None else ""
    return parse_config(text, overrides)
