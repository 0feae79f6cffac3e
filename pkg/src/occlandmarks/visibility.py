"""Per-landmark visibility head: aligned features, local and context branches, gated fusion."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

FUSION_MODES = ("gated", "local_only", "ctx_only", "fixed_sum")


@dataclass
class VisibilityHeadConfig:
    psi_channels: int = 16
    local_depth: int = 2
    context_width: int = 16
    alpha_init: float = 0.01
    fusion: str = "gated"
    seed: int = 1

    def validate(self) -> None:
        if self.psi_channels < 4:
            raise ValueError(f"psi_channels must be >= 4, got {self.psi_channels}")
        if self.local_depth < 1 or self.context_width < 1:
            raise ValueError("local_depth and context_width must be positive")
        if not torch.isfinite(torch.tensor(float(self.alpha_init))):
            raise ValueError("alpha_init must be finite")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}, got '{self.fusion}'")


@dataclass
class VisibilityOutput:
    aligned_features: torch.Tensor  # (B, P, C_psi, h', w')
    local_logits: torch.Tensor  # (B, P)
    context_logits: torch.Tensor  # (B, P)
    gate: torch.Tensor  # (P,)
    fused_logits: torch.Tensor  # (B, P)
    probabilities: torch.Tensor  # (B, P)


def fuse_and_activate(z_loc: torch.Tensor, z_ctx: torch.Tensor, alpha: torch.Tensor):
    if z_loc.shape[-1] != z_ctx.shape[-1] or z_loc.shape[-1] != alpha.shape[-1]:
        raise ValueError(
            f"length mismatch: z_loc {tuple(z_loc.shape)}, z_ctx {tuple(z_ctx.shape)}, alpha {tuple(alpha.shape)}"
        )
    z = z_loc + alpha * z_ctx
    return z, torch.sigmoid(z)


def depthwise3x3(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Zero-padded 3x3 depth-wise conv over (B, P, C, h, w) with weight (P, C, 3, 3)."""
    b, p, c, h, w = x.shape
    y = F.conv2d(x.reshape(b, p * c, h, w), weight.reshape(p * c, 1, 3, 3), bias.reshape(p * c),
                 padding=1, groups=p * c)
    return y.view(b, p, c, h, w)


def grouped_pointwise(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Per-landmark 1x1 conv: (B, P, C_in, ...) with weight (P, C_out, C_in)."""
    y = torch.einsum("poc,bpc...->bpo...", weight, x)
    return y + bias.view(*bias.shape, *([1] * (x.dim() - 3)))


class LocalBranch(nn.Module):
    """Depth-wise 3x3 then per-landmark 1x1 layers; no mixing across landmarks."""

    def __init__(self, num_points: int, c: int, depth: int):
        super().__init__()
        self.num_points = num_points
        self.dw_weight = nn.ParameterList(nn.Parameter(torch.empty(num_points, c, 3, 3)) for _ in range(depth))
        self.dw_bias = nn.ParameterList(nn.Parameter(torch.zeros(num_points, c)) for _ in range(depth))
        self.pw_weight = nn.ParameterList(nn.Parameter(torch.empty(num_points, c, c)) for _ in range(depth))
        self.pw_bias = nn.ParameterList(nn.Parameter(torch.zeros(num_points, c)) for _ in range(depth))
        self.out_weight = nn.Parameter(torch.empty(num_points, 1, c))
        self.out_bias = nn.Parameter(torch.zeros(num_points, 1))

    def reset_parameters(self, gen: torch.Generator) -> None:
        for wd, wp in zip(self.dw_weight, self.pw_weight):
            nn.init.normal_(wd, 0.0, (2.0 / 9) ** 0.5, generator=gen)
            nn.init.normal_(wp, 0.0, (2.0 / wp.shape[-1]) ** 0.5, generator=gen)
        nn.init.normal_(self.out_weight, 0.0, (1.0 / self.out_weight.shape[-1]) ** 0.5, generator=gen)
        for b in [*self.dw_bias, *self.pw_bias, self.out_bias]:
            nn.init.zeros_(b)

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        if g.shape[1] != self.num_points:
            raise ValueError(f"expected {self.num_points} landmark groups, got {g.shape[1]}")
        x = g
        for wd, bd, wp, bp in zip(self.dw_weight, self.dw_bias, self.pw_weight, self.pw_bias):
            x = F.relu(grouped_pointwise(depthwise3x3(x, wd, bd), wp, bp))
        pooled = x.mean(dim=(-2, -1))  # (B, P, C)
        return grouped_pointwise(pooled, self.out_weight, self.out_bias).squeeze(-1)


class ContextBranch(nn.Module):
    """1x1 mixing across the landmark dimension, then per-landmark pointwise, pooling, logit."""

    def __init__(self, num_points: int, c: int, width: int):
        super().__init__()
        self.num_points = num_points
        self.mix = nn.Parameter(torch.empty(num_points, num_points))
        self.mix_bias = nn.Parameter(torch.zeros(num_points))
        self.pw_weight = nn.Parameter(torch.empty(num_points, width, c))
        self.pw_bias = nn.Parameter(torch.zeros(num_points, width))
        self.out_weight = nn.Parameter(torch.empty(num_points, 1, width))
        self.out_bias = nn.Parameter(torch.zeros(num_points, 1))

    def reset_parameters(self, gen: torch.Generator) -> None:
        p = self.num_points
        nn.init.normal_(self.mix, 0.0, (1.0 / p) ** 0.5, generator=gen)
        with torch.no_grad():
            self.mix.add_(torch.eye(p))
        nn.init.normal_(self.pw_weight, 0.0, (2.0 / self.pw_weight.shape[-1]) ** 0.5, generator=gen)
        nn.init.normal_(self.out_weight, 0.0, (1.0 / self.out_weight.shape[-1]) ** 0.5, generator=gen)
        for b in (self.mix_bias, self.pw_bias, self.out_bias):
            nn.init.zeros_(b)

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        _b, p, _c, _h, _w = g.shape
        if p != self.num_points:
            raise ValueError(f"expected {self.num_points} landmark groups, got {p}")
        mixed = torch.einsum("qp,bpchw->bqchw", self.mix, g) + self.mix_bias.view(1, p, 1, 1, 1)
        return self._head(mixed)

    def forward_factored(self, attention: torch.Tensor, projected: torch.Tensor) -> torch.Tensor:
        """Same as forward(attention[:, :, None] * projected[:, None]).

        Mixing is linear in the landmark axis, so mixing the attention maps
        first avoids a (P x P) product per psi channel.
        """
        p = self.num_points
        mixed_att = torch.einsum("qp,bphw->bqhw", self.mix, attention)
        mixed = mixed_att.unsqueeze(2) * projected.unsqueeze(1) + self.mix_bias.view(1, p, 1, 1, 1)
        return self._head(mixed)

    def _head(self, mixed: torch.Tensor) -> torch.Tensor:
        x = F.relu(grouped_pointwise(mixed, self.pw_weight, self.pw_bias))
        pooled = x.mean(dim=(-2, -1))
        return grouped_pointwise(pooled, self.out_weight, self.out_bias).squeeze(-1)


def landmark_aligned_features(psi: nn.Conv2d, features, point_pred, edge_pred, attention,
                              check: bool = True) -> torch.Tensor:
    """G_p(u, v) = attention_p(u, v) * psi([F, P_hat, E_hat])(u, v) for every landmark at once."""
    return _aligned(psi, features, point_pred, edge_pred, attention, check)[0]


def _aligned(psi, features, point_pred, edge_pred, attention, check):
    if features.dim() == 3:
        features, point_pred, edge_pred, attention = (
            t.unsqueeze(0) for t in (features, point_pred, edge_pred, attention)
        )
    spatial = features.shape[-2:]
    for name, t in (("point_pred", point_pred), ("edge_pred", edge_pred), ("attention", attention)):
        if t.shape[-2:] != spatial or t.shape[0] != features.shape[0]:
            raise ValueError(f"{name} shape {tuple(t.shape)} inconsistent with features {tuple(features.shape)}")
    if attention.shape[1] != point_pred.shape[1]:
        raise ValueError("attention and point_pred must have one channel per landmark")
    if check:
        sums = attention.sum(dim=(-2, -1))
        if (sums - 1).abs().max() > 1e-4:
            raise ValueError("attention channels must each sum to 1")
    cues = torch.cat([features, point_pred, edge_pred], dim=1)
    if cues.shape[1] != psi.in_channels:
        raise ValueError(f"psi expects {psi.in_channels} cue channels, got {cues.shape[1]}")
    projected = psi(cues)  # (B, C_psi, h, w)
    return attention.unsqueeze(2) * projected.unsqueeze(1), projected


class VisibilityHead(nn.Module):
    def __init__(self, config: VisibilityHeadConfig, feature_channels: int, num_points: int, num_edges: int):
        super().__init__()
        config.validate()
        self.config = config
        self.num_points = num_points
        self.psi = nn.Conv2d(feature_channels + num_points + num_edges, config.psi_channels, 1)
        self.local = LocalBranch(num_points, config.psi_channels, config.local_depth)
        self.context = ContextBranch(num_points, config.psi_channels, config.context_width)
        if config.fusion == "gated":
            self.alpha = nn.Parameter(torch.full((num_points,), float(config.alpha_init)))
        else:
            fixed = {"local_only": 0.0, "ctx_only": 0.0, "fixed_sum": 1.0}[config.fusion]
            self.register_buffer("alpha", torch.full((num_points,), fixed))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        gen = torch.Generator().manual_seed(self.config.seed)
        nn.init.normal_(self.psi.weight, 0.0, (2.0 / self.psi.in_channels) ** 0.5, generator=gen)
        nn.init.zeros_(self.psi.bias)
        self.local.reset_parameters(gen)
        self.context.reset_parameters(gen)

    def aligned_features(self, features, point_pred, edge_pred, attention, check: bool = True) -> torch.Tensor:
        return _aligned(self.psi, features, point_pred, edge_pred, attention, check)[0]

    def forward(self, features, point_pred, edge_pred, attention) -> VisibilityOutput:
        g, projected = _aligned(self.psi, features, point_pred, edge_pred, attention, True)
        mode = self.config.fusion
        zeros = torch.zeros(g.shape[:2], dtype=g.dtype)
        z_loc = self.local(g) if mode != "ctx_only" else zeros
        if mode == "local_only":
            z_ctx = zeros
        else:
            att = attention.unsqueeze(0) if attention.dim() == 3 else attention
            z_ctx = self.context.forward_factored(att, projected)
        if mode == "ctx_only":
            z, v = z_ctx, torch.sigmoid(z_ctx)
        else:
            z, v = fuse_and_activate(z_loc, z_ctx, self.alpha)
        return VisibilityOutput(g, z_loc, z_ctx, self.alpha, z, v)
