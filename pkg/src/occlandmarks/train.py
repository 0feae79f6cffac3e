"""Training data preparation, warm-start schedule and the optimization loop."""

from __future__ import annotations

import json
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import AnnotatedSample, atomic_write_text, normalize_crop
from .layout import LandmarkLayout, default_layout
from .losses import (
    LossWeights,
    NonFiniteLossError,
    aux_map_losses,
    heatmap_loss,
    total_loss,
    visibility_loss,
)
from .masking import MaskParams, masked_view, pseudo_visibility, sample_mask
from .model import LandmarkModel, load_checkpoint, save_checkpoint
from .targets import build_targets

LOG_KEYS = ("L_hm", "L_pt", "L_edge", "L_vis", "L_syn")


@dataclass
class TrainConfig:
    epochs: int = 20
    warm_start_epochs: int | None = None  # None -> 25% of epochs
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: str = "cosine"
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    mask_prob: float = 0.5  # chance that a sample also contributes a masked view
    mask: MaskParams = field(default_factory=MaskParams)
    masked_heatmap_loss: bool = True
    occluded_heatmap_weight: float = 1.0  # L_hm weight of points annotated occluded
    checkpoint_every: int = 0  # 0 keeps only the latest checkpoint
    sigma: float = 1.5
    sigma_pt: float = 1.0
    sigma_edge: float = 1.0

    @property
    def warm_epochs(self) -> int:
        if self.warm_start_epochs is None:
            return round(0.25 * self.epochs)
        return int(self.warm_start_epochs)

    def problems(self, stacks: int | None = None) -> list[str]:
        out = []
        if self.epochs < 1:
            out.append(f"train.epochs must be >= 1, got {self.epochs}")
        if self.warm_epochs < 0 or self.warm_epochs > self.epochs:
            out.append(f"train.warm_start_epochs must lie in [0, epochs], got {self.warm_epochs}")
        if self.batch_size < 1:
            out.append(f"train.batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            out.append(f"train.lr must be positive, got {self.lr}")
        if self.lr_decay not in ("cosine", "none"):
            out.append(f"train.lr_decay must be 'cosine' or 'none', got '{self.lr_decay}'")
        if not 0.0 <= self.mask_prob <= 1.0:
            out.append(f"train.mask_prob must lie in [0, 1], got {self.mask_prob}")
        if not self.occluded_heatmap_weight >= 0:
            out.append("train.occluded_heatmap_weight must be >= 0")
        if self.checkpoint_every < 0:
            out.append("train.checkpoint_every must be >= 0")
        for name, value in (("sigma", self.sigma), ("sigma_pt", self.sigma_pt), ("sigma_edge", self.sigma_edge)):
            if not value > 0:
                out.append(f"train.{name} must be positive")
        for fn, arg in ((self.weights.validate, stacks), (self.mask.validate, None)):
            try:
                fn(arg) if arg is not None else fn()
            except ValueError as exc:
                out.append(str(exc))
        return out

    def validate(self, stacks: int | None = None) -> None:
        errs = self.problems(stacks)
        if errs:
            raise ValueError("; ".join(errs))


def train_config_from_dict(raw: dict) -> TrainConfig:
    raw = dict(raw)
    weights = LossWeights(**raw.pop("weights", {}))
    mask = dict(raw.pop("mask", {}))
    for key in ("count", "area", "aspect", "shapes", "fill_modes"):
        if key in mask:
            mask[key] = tuple(mask[key])
    return TrainConfig(weights=weights, mask=MaskParams(**mask), **raw)


@dataclass
class PreparedData:
    """Normalized crops and every training target, stacked as float32 arrays."""

    crops: np.ndarray  # (N, 3, h, w)
    heatmaps: np.ndarray  # (N, P, h', w')
    point_maps: np.ndarray  # (N, P, h', w')
    edge_maps: np.ndarray  # (N, N_E, h', w')
    visibility: np.ndarray  # (N, P)
    points_crop: np.ndarray  # (N, P, 2)
    transforms: np.ndarray  # (N, 2, 3)

    def __len__(self) -> int:
        return len(self.crops)


def prepare_samples(samples: list[AnnotatedSample], crop_size=(64, 64), stride: int = 4,
                    layout: LandmarkLayout | None = None, sigma: float = 1.5, sigma_pt: float = 1.0,
                    sigma_edge: float = 1.0) -> PreparedData:
    layout = layout or default_layout()
    h, w = crop_size
    cols: dict[str, list] = {k: [] for k in ("crops", "heatmaps", "point_maps", "edge_maps",
                                             "visibility", "points_crop", "transforms")}
    for s in samples:
        nc = normalize_crop(s, h, w)
        t = build_targets(layout, nc.points_crop, stride, h, w, sigma, sigma_pt, sigma_edge)
        cols["crops"].append(nc.crop)
        cols["heatmaps"].append(t.heatmaps)
        cols["point_maps"].append(t.point_map)
        cols["edge_maps"].append(t.edge_map)
        cols["visibility"].append(s.visibility)
        cols["points_crop"].append(nc.points_crop)
        cols["transforms"].append(nc.transform)
    if not samples:
        hh, ww = h // stride, w // stride
        p, e = layout.num_points, layout.num_edges
        shapes = {"crops": (3, h, w), "heatmaps": (p, hh, ww), "point_maps": (p, hh, ww),
                  "edge_maps": (e, hh, ww), "visibility": (p,), "points_crop": (p, 2), "transforms": (2, 3)}
        return PreparedData(**{k: np.zeros((0, *v), np.float32) for k, v in shapes.items()})
    out = {k: np.stack(v).astype(np.float32) for k, v in cols.items() if k not in ("points_crop", "transforms")}
    return PreparedData(points_crop=np.stack(cols["points_crop"]), transforms=np.stack(cols["transforms"]), **out)


@dataclass
class TrainResult:
    log: list[dict]
    checkpoint: Path | None
    step: int


def _lr_at(cfg: TrainConfig, step: int, total: int) -> float:
    if cfg.lr_decay == "none" or total <= 0:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total))


def _batch(data: PreparedData, idx: np.ndarray, masked: np.ndarray, seed: int, epoch: int,
           cfg: TrainConfig, stride: int):
    """Clean views of ``idx`` followed by one masked view per flagged sample.

    Clean rows carry the manual labels v; masked rows carry min(v, v~), so a
    point occluded in the original image stays occluded in its masked view.
    """
    src = np.concatenate([idx, idx[masked]])
    crops = data.crops[src].copy()
    vis = data.visibility[src].astype(np.float32)
    labels = vis.copy()
    for j, i in enumerate(idx[masked], start=len(idx)):
        spec = sample_mask([seed, epoch, int(i)], crops.shape[-2:], cfg.mask, stride)
        crops[j] = masked_view(crops[j], spec)
        labels[j] = np.minimum(labels[j], pseudo_visibility(spec.mask, data.heatmaps[i], spec.delta))
    flag = np.zeros(len(src), dtype=np.float32)
    flag[len(idx):] = 1.0
    as_t = torch.from_numpy
    return {
        "crops": as_t(crops),
        "heatmaps": as_t(data.heatmaps[src]),
        "point_maps": as_t(data.point_maps[src]),
        "edge_maps": as_t(data.edge_maps[src]),
        "visibility": as_t(vis),
        "labels": as_t(labels),
        "masked": as_t(flag),
    }


def _check_finite(comps: dict) -> None:
    for name, value in comps.items():
        v = float(value.detach())
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)


def compute_losses(model: LandmarkModel, batch: dict, cfg: TrainConfig, warm: bool) -> dict:
    """Raw (unweighted except for stage weights) loss components for one batch.

    Localization terms are checked before decoding so a diverged backbone is
    reported by loss term rather than as a decode error.
    """
    bb = model.backbone(batch["crops"])
    hm_w = None
    if cfg.occluded_heatmap_weight != 1.0:
        v = batch["visibility"]
        hm_w = v + (1.0 - v) * cfg.occluded_heatmap_weight
    if not cfg.masked_heatmap_loss:
        keep = (1.0 - batch["masked"])[:, None].expand(-1, bb.stage_heatmaps[0].shape[1])
        hm_w = keep if hm_w is None else hm_w * keep
    comps = {"L_hm": heatmap_loss(bb.stage_heatmaps, batch["heatmaps"], cfg.weights.stages, hm_w)}
    comps["L_pt"], comps["L_edge"] = aux_map_losses(bb.point_pred, bb.edge_pred,
                                                    batch["point_maps"], batch["edge_maps"])
    _check_finite(comps)
    if warm:
        zero = torch.zeros(())
        comps["L_vis"], comps["L_syn"] = zero, zero
    else:
        dec = model.decode(bb)
        probs = model.visibility(bb.features, bb.point_pred, bb.edge_pred, dec.attention).probabilities
        comps["L_vis"] = visibility_loss(probs, batch["labels"], 1.0 - batch["masked"])
        comps["L_syn"] = visibility_loss(probs, batch["labels"], batch["masked"])
    return comps


def _write_log(path: Path, log: list[dict]) -> None:
    atomic_write_text(path, "".join(json.dumps(line) + "\n" for line in log))


def train(model: LandmarkModel, data: PreparedData, cfg: TrainConfig, out_dir=None,
          resume: bool = False, log_fn: Callable[[dict], None] | None = None) -> TrainResult:
    """Optimize ``model`` in place; epochs 1..warm train localization only.

    Writes ``train_log.jsonl`` and ``checkpoint.pt`` under ``out_dir`` when given.
    Logged terms are the weighted contributions, so warm-start lines carry exact
    zeros for L_vis and L_syn.
    """
    cfg.validate(model.config.backbone.stacks)
    if len(data) == 0:
        raise ValueError("empty train split")
    out_dir = Path(out_dir) if out_dir is not None else None
    stride = model.config.backbone.stride
    n = len(data)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    log: list[dict] = []
    start_epoch, step = 1, 0

    if resume:
        if out_dir is None or not (out_dir / "checkpoint.pt").exists():
            raise FileNotFoundError("resume requested but no checkpoint.pt in the output directory")
        restored, blob = load_checkpoint(out_dir / "checkpoint.pt", model.layout)
        model.load_state_dict(restored.state_dict())
        if blob["optimizer"] is not None:
            optimizer.load_state_dict(blob["optimizer"])
        step, start_epoch = blob["step"], blob["epoch"] + 1
        log = list(blob["extra"].get("log", []))

    ckpt_path = None
    for epoch in range(start_epoch, cfg.epochs + 1):
        warm = epoch <= cfg.warm_epochs
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n)
        masked_all = rng.random(n) < cfg.mask_prob
        sums = dict.fromkeys((*LOG_KEYS, "total"), 0.0)
        lr = _lr_at(cfg, step, total_steps)
        for b in range(steps_per_epoch):
            sel = slice(b * cfg.batch_size, (b + 1) * cfg.batch_size)
            idx = order[sel]
            batch = _batch(data, idx, masked_all[sel], cfg.seed, epoch, cfg, stride)
            lr = _lr_at(cfg, step, total_steps)
            for group in optimizer.param_groups:
                group["lr"] = lr
            comps = compute_losses(model, batch, cfg, warm)
            loss, terms = total_loss(comps, cfg.weights, warm_start=warm)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            step += 1
            for k in LOG_KEYS:
                sums[k] += float(torch.as_tensor(terms[k]).detach()) * len(idx)
            sums["total"] += float(loss.detach()) * len(idx)
        line = {"epoch": epoch, **{k: sums[k] / n for k in (*LOG_KEYS, "total")}, "lr": lr}
        log.append(line)
        if out_dir is not None:
            extra = {"train_config": asdict(cfg), "log": log}
            last = epoch == cfg.epochs
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint_epoch{epoch:03d}.pt", model, step, epoch,
                                optimizer.state_dict(), extra)
            if last or cfg.checkpoint_every == 0 or epoch % cfg.checkpoint_every == 0:
                ckpt_path = save_checkpoint(out_dir / "checkpoint.pt", model, step, epoch,
                                            optimizer.state_dict(), extra)
            _write_log(out_dir / "train_log.jsonl", log)
        if log_fn is not None:
            log_fn(line)
    if out_dir is not None and ckpt_path is None and (out_dir / "checkpoint.pt").exists():
        ckpt_path = out_dir / "checkpoint.pt"
    return TrainResult(log=log, checkpoint=ckpt_path, step=step)
