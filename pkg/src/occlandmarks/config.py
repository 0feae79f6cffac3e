"""Run configuration: desk-scale defaults, ablation presets and dotted-path overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .evaluate import MetricConfig
from .model import DecodeConfig, ModelConfig
from .synth import SceneRanges
from .train import TrainConfig, train_config_from_dict
from .visibility import VisibilityHeadConfig

# Desk-scale settings; they differ from the library defaults where a CPU budget
# of a few minutes per run demands it (see README).
DESK = {
    "layout": None,
    "dataset": None,
    "out": None,
    "seed": 0,
    "counts": [1000, 0, 200],
    "backbone": {"stacks": 2, "channels": 32, "crop_size": [64, 64], "stride": 4, "blocks": 1, "scales": 4,
                 "head_prior_bias": -4.0},
    "visibility": {"psi_channels": 8, "local_depth": 1, "context_width": 8, "alpha_init": 0.01, "fusion": "gated"},
    "decode": {"temperature": 0.02, "gating": "point_edge"},
    "train": {"epochs": 12, "warm_start_epochs": 3, "batch_size": 16, "lr": 3e-3, "lr_decay": "cosine",
              "masked_heatmap_loss": False},
    "metrics": {},
    "scene": {},
}

PRESETS = {
    # auxiliary geometric maps
    "heatmap_only": {"train.weights.point": 0.0, "train.weights.edge": 0.0, "decode.gating": "none"},
    "+point": {"train.weights.edge": 0.0, "decode.gating": "point"},
    "+point+edge": {},
    # visibility head design
    "local_only": {"visibility.fusion": "local_only"},
    "ctx_only": {"visibility.fusion": "ctx_only"},
    "fixed_sum": {"visibility.fusion": "fixed_sum"},
    "gated": {},
    # landmark-aware masking
    "no_occaug": {"train.mask_prob": 0.0, "train.weights.syn": 0.0},
    "occaug": {},
}

ABLATION_TABLES = {
    "aux_maps": ("heatmap_only", "+point", "+point+edge"),
    "visibility_head": ("local_only", "ctx_only", "fixed_sum", "gated"),
    "occaug": ("no_occaug", "occaug"),
}


def parse_value(text: str):
    """JSON literal when it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(file_cfg: dict | None = None, preset: str | None = None, overrides: dict | None = None,
            seed: int | None = None) -> dict:
    """DESK <- config file <- preset <- dotted overrides <- explicit seed."""
    cfg = deep_merge(DESK, file_cfg or {})
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset '{preset}'; choose from {sorted(PRESETS)}")
        for k, v in PRESETS[preset].items():
            set_dotted(cfg, k, v)
        cfg["preset"] = preset
    for k, v in (overrides or {}).items():
        set_dotted(cfg, k, v)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    metrics: MetricConfig
    scene: SceneRanges
    counts: list[int] = field(default_factory=lambda: [1000, 0, 200])
    seed: int = 0
    layout: str | None = None
    dataset: str | None = None
    out: str | None = None

    def resolved(self) -> dict:
        return {
            "layout": self.layout,
            "dataset": self.dataset,
            "out": self.out,
            "seed": self.seed,
            "counts": list(self.counts),
            "backbone": asdict(self.model.backbone),
            "visibility": asdict(self.model.visibility),
            "decode": asdict(self.model.decode),
            "train": asdict(self.train),
            "metrics": asdict(self.metrics),
            "scene": asdict(self.scene),
        }


def _tuples(d: dict, keys) -> dict:
    return {k: tuple(v) if k in keys and isinstance(v, list) else v for k, v in d.items()}


def build_run_config(cfg: dict) -> tuple[RunConfig | None, list[str]]:
    """Instantiate every section, collecting all problems instead of stopping at the first."""
    problems: list[str] = []
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append(f"seed must be a non-negative integer, got {seed!r}")
        seed = 0
    sections = {}
    builders = {
        "backbone": lambda d: BackboneConfig(**_tuples(d, ("crop_size",))),
        "visibility": lambda d: VisibilityHeadConfig(**d),
        "decode": lambda d: DecodeConfig(**d),
        "train": train_config_from_dict,
        "metrics": lambda d: MetricConfig(**d),
        "scene": lambda d: SceneRanges(**_tuples(d, ("yaw", "pitch", "styles", "backgrounds",
                                                     "occluder_count", "occluder_area"))),
    }
    for name, build in builders.items():
        raw = dict(cfg.get(name) or {})
        if name == "backbone":
            raw.setdefault("seed", seed)
        if name == "visibility":
            raw.setdefault("seed", seed + 1)
        if name == "train":
            raw.setdefault("seed", seed)
        try:
            sections[name] = build(raw)
        except TypeError as exc:
            problems.append(f"{name}: {exc}")
    checks = {
        "backbone": lambda s: s.validate(),
        "visibility": lambda s: s.validate(),
        "decode": lambda s: s.validate(),
        "metrics": lambda s: s.validate(),
    }
    for name, check in checks.items():
        if name in sections:
            try:
                check(sections[name])
            except ValueError as exc:
                problems.append(f"{name}: {exc}")
    if "train" in sections:
        stacks = sections["backbone"].stacks if "backbone" in sections else None
        problems += sections["train"].problems(stacks)
    counts = cfg.get("counts", [1000, 0, 200])
    if not (isinstance(counts, list) and len(counts) == 3 and all(isinstance(c, int) and c >= 0 for c in counts)):
        problems.append(f"counts must be three non-negative integers, got {counts!r}")
    if problems:
        return None, problems
    run = RunConfig(
        model=ModelConfig(sections["backbone"], sections["visibility"], sections["decode"]),
        train=sections["train"],
        metrics=sections["metrics"],
        scene=sections["scene"],
        counts=list(counts),
        seed=seed,
        layout=cfg.get("layout"),
        dataset=cfg.get("dataset"),
        out=cfg.get("out"),
    )
    return run, []


def load_config_file(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())
