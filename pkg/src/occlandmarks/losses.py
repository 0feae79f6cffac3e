"""Loss terms and the weighted total objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

PROB_EPS = 1e-7


@dataclass
class LossWeights:
    stages: list[float] = field(default_factory=lambda: [1.0, 1.0])
    point: float = 0.5
    edge: float = 0.5
    vis: float = 1.0
    syn: float = 1.0

    def validate(self, stacks: int | None = None) -> None:
        values = [*self.stages, self.point, self.edge, self.vis, self.syn]
        if any(not (v >= 0) for v in values):
            raise ValueError(f"loss weights must be non-negative, got {values}")
        if stacks is not None and len(self.stages) != stacks:
            raise ValueError(f"need {stacks} stage weights, got {len(self.stages)}")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value):
        super().__init__(f"non-finite loss term {term} = {value}")
        self.term = term


def _map_mse(pred: torch.Tensor, target: torch.Tensor, weights: torch.Tensor | None = None) -> torch.Tensor:
    """(1/C) sum_c ||pred_c - target_c||^2 per sample, averaged over the batch."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    per_channel = (pred - target).pow(2).sum(dim=(-2, -1))
    if weights is not None:
        per_channel = per_channel * weights
    return per_channel.mean(dim=-1).mean() if per_channel.dim() > 1 else per_channel.mean()


def heatmap_loss(stage_heatmaps, target_heatmaps: torch.Tensor, stage_weights,
                 point_weights: torch.Tensor | None = None) -> torch.Tensor:
    """sum_k w_k (1/P) sum_p ||H^k_p - H_p||^2, batch-averaged.

    ``point_weights`` (B, P) optionally scales each landmark's term.
    """
    if len(stage_heatmaps) != len(stage_weights):
        raise ValueError(f"{len(stage_heatmaps)} stages but {len(stage_weights)} stage weights")
    total = target_heatmaps.new_zeros(())
    for w, pred in zip(stage_weights, stage_heatmaps):
        total = total + float(w) * _map_mse(pred, target_heatmaps, point_weights)
    return total


def aux_map_losses(point_pred, edge_pred, point_target, edge_target) -> tuple[torch.Tensor, torch.Tensor]:
    return _map_mse(point_pred, point_target), _map_mse(edge_pred, edge_target)


def visibility_loss(probs: torch.Tensor, labels: torch.Tensor, sample_weights: torch.Tensor | None = None) -> torch.Tensor:
    """Mean binary cross-entropy over landmarks (and samples), probabilities clamped to [1e-7, 1-1e-7].

    ``sample_weights`` (B,) selects/weights samples; the result is their weighted mean.
    """
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {tuple(probs.shape)} vs {tuple(labels.shape)}")
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    y = labels.to(p.dtype)
    bce = -(y * torch.log(p) + (1 - y) * torch.log1p(-p))
    per_sample = bce.mean(dim=-1)
    if sample_weights is None:
        return per_sample.mean()
    denom = sample_weights.sum()
    if denom == 0:
        return per_sample.new_zeros(())
    return (per_sample * sample_weights).sum() / denom


def total_loss(components: dict, weights: LossWeights, warm_start: bool = False):
    """hm + w_pt pt + w_edge edge + w_vis vis + w_syn syn; visibility terms dropped in warm-start.

    Returns the total and the dict of weighted terms actually used.
    """
    for name, value in components.items():
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)
    w_vis = 0.0 if warm_start else weights.vis
    w_syn = 0.0 if warm_start else weights.syn
    terms = {
        "L_hm": components["L_hm"],
        "L_pt": weights.point * components.get("L_pt", 0.0),
        "L_edge": weights.edge * components.get("L_edge", 0.0),
        "L_vis": w_vis * components.get("L_vis", 0.0),
        "L_syn": w_syn * components.get("L_syn", 0.0),
    }
    total = terms["L_hm"] + terms["L_pt"] + terms["L_edge"] + terms["L_vis"] + terms["L_syn"]
    return total, terms
