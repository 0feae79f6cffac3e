"""Edge-evidence gating and soft-argmax coordinate decoding."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .layout import LandmarkLayout


@dataclass
class DecodeResult:
    attention: torch.Tensor  # (..., P, h', w'), each channel sums to 1
    coords: torch.Tensor  # (..., P, 2) crop pixels
    heatmap_coords: torch.Tensor  # (..., P, 2) heatmap cells
    evidence: torch.Tensor  # (..., P, h', w')
    mask: torch.Tensor  # (..., P, h', w')


def membership_matrix(layout: LandmarkLayout, dtype=torch.float32) -> torch.Tensor:
    """(P, N_E) 0/1 matrix; row p marks the edges containing landmark p."""
    m = torch.zeros(layout.num_points, layout.num_edges, dtype=dtype)
    for p, es in layout.edge_membership.items():
        for e in es:
            m[p, e] = 1.0
    return m


def aggregate_edge_evidence(edge_pred: torch.Tensor, layout: LandmarkLayout,
                            membership: torch.Tensor | None = None) -> torch.Tensor:
    """Sum each landmark's edge channels; edge-less landmarks get an all-ones map."""
    if edge_pred.shape[-3] != layout.num_edges:
        raise ValueError(f"expected {layout.num_edges} edge channels, got {edge_pred.shape[-3]}")
    if membership is None:
        membership = membership_matrix(layout, edge_pred.dtype)
    membership = membership.to(edge_pred.dtype)
    summed = torch.einsum("pe,...ehw->...phw", membership, edge_pred)
    empty = (membership.sum(dim=1) == 0).view(-1, 1, 1)
    return torch.where(empty, torch.ones_like(summed), summed)


def soft_argmax(logits: torch.Tensor, temperature: float = 1.0) -> tuple[torch.Tensor, torch.Tensor]:
    """Spatial softmax over the last two dims and the expected (u, v) cell."""
    h, w = logits.shape[-2:]
    flat = torch.softmax(logits.flatten(-2) / temperature, dim=-1)
    att = flat.unflatten(-1, (h, w))
    u = _centred_mean(att.sum(dim=-2))
    v = _centred_mean(att.sum(dim=-1))
    return att, torch.stack([u, v], dim=-1)


def _centred_mean(m: torch.Tensor) -> torch.Tensor:
    """Mean index of the distribution m over the last axis.

    Written as centre + paired offsets so that mirror-symmetric marginals
    give the centre exactly, free of summation round-off.
    """
    n = m.shape[-1]
    c = (n - 1) / 2.0
    k = n // 2
    offset = c - torch.arange(k, dtype=m.dtype, device=m.device)
    pairs = (m[..., n - k:].flip(-1) - m[..., :k]) * offset
    return c + pairs.sum(dim=-1) / m.sum(dim=-1)


def reweight_and_decode(heatmaps: torch.Tensor, point_pred: torch.Tensor, evidence: torch.Tensor,
                        temperature: float = 1.0, stride: int = 4) -> DecodeResult:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    for name, t in (("heatmaps", heatmaps), ("point_pred", point_pred), ("evidence", evidence)):
        if not torch.isfinite(t).all():
            raise ValueError(f"non-finite values in {name}")
    mask = point_pred * evidence
    att, uv = soft_argmax(heatmaps * mask, temperature)
    return DecodeResult(
        attention=att,
        coords=(uv + 0.5) * stride,
        heatmap_coords=uv,
        evidence=evidence,
        mask=mask,
    )
