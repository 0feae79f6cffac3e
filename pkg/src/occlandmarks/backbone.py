"""Stem + K stacked hourglass stages with heatmap, point-map and edge-map heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .layout import NUM_POINTS


@dataclass
class BackboneConfig:
    stacks: int = 2
    channels: int = 32
    crop_size: tuple[int, int] = (64, 64)
    stride: int = 4
    blocks: int = 1
    scales: int = 2
    seed: int = 0
    head_prior_bias: float = 0.0  # initial bias of the sigmoid point/edge heads
    num_points: int = NUM_POINTS
    num_edges: int = 16

    def validate(self) -> None:
        if self.stacks < 1:
            raise ValueError(f"stacks must be >= 1, got {self.stacks}")
        if self.channels < 8:
            raise ValueError(f"channels must be >= 8, got {self.channels}")
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise ValueError(f"stride must be a power of two, got {self.stride}")
        h, w = self.crop_size
        if h % self.stride or w % self.stride:
            raise ValueError(f"crop {self.crop_size} not divisible by stride {self.stride}")
        if self.scales < 2:
            raise ValueError("hourglass needs at least 2 scales")
        if not math.isfinite(self.head_prior_bias):
            raise ValueError("head_prior_bias must be finite")
        div = 2 ** (self.scales - 1)
        if (h // self.stride) % div or (w // self.stride) % div:
            raise ValueError(f"map size not divisible by 2^(scales-1)={div}")
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")

    @property
    def map_size(self) -> tuple[int, int]:
        return self.crop_size[0] // self.stride, self.crop_size[1] // self.stride


@dataclass
class BackboneOutput:
    stage_heatmaps: list[torch.Tensor]  # K x (B, P, h', w')
    features: torch.Tensor  # (B, C, h', w')
    point_pred: torch.Tensor  # (B, P, h', w'), sigmoid
    edge_pred: torch.Tensor  # (B, N_E, h', w'), sigmoid


def _norm(c: int) -> nn.GroupNorm:
    # per-sample normalization keeps inference independent of batch composition
    return nn.GroupNorm(4 if c % 4 == 0 else 1, c)


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.n1 = _norm(c_in)
        self.c1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.n2 = _norm(c_out)
        self.c2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else None

    def forward(self, x):
        y = self.c1(F.relu(self.n1(x)))
        y = self.c2(F.relu(self.n2(y)))
        return y + (x if self.skip is None else self.skip(x))


def _blocks(c: int, n: int) -> nn.Sequential:
    return nn.Sequential(*[ResidualBlock(c, c) for _ in range(n)])


class Hourglass(nn.Module):
    """Symmetric encoder-decoder with a skip branch at every scale."""

    def __init__(self, c: int, scales: int, blocks: int):
        super().__init__()
        self.skip = _blocks(c, blocks)
        self.down = _blocks(c, blocks)
        self.inner = Hourglass(c, scales - 1, blocks) if scales > 2 else _blocks(c, blocks)
        self.up = _blocks(c, blocks)

    def forward(self, x):
        low = self.down(F.max_pool2d(x, 2))
        low = self.up(self.inner(low))
        return self.skip(x) + F.interpolate(low, scale_factor=2, mode="nearest")


class Stem(nn.Module):
    def __init__(self, c: int, stride: int, blocks: int):
        super().__init__()
        layers: list[nn.Module] = []
        c_in = 3
        for _ in range(int(math.log2(stride))):
            layers += [nn.Conv2d(c_in, c, 3, stride=2, padding=1), _blocks(c, blocks)]
            c_in = c
        if not layers:
            layers = [nn.Conv2d(3, c, 3, padding=1), _blocks(c, blocks)]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class Backbone(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        config.validate()
        self.config = config
        c, k = config.channels, config.stacks
        self.stem = Stem(c, config.stride, config.blocks)
        self.stages = nn.ModuleList(Hourglass(c, config.scales, config.blocks) for _ in range(k))
        self.projections = nn.ModuleList(
            nn.Sequential(ResidualBlock(c, c), nn.Conv2d(c, c, 1), _norm(c), nn.ReLU()) for _ in range(k)
        )
        self.heatmap_heads = nn.ModuleList(nn.Conv2d(c, config.num_points, 1) for _ in range(k))
        self.point_head = nn.Conv2d(c, config.num_points, 1)
        self.edge_head = nn.Conv2d(c, config.num_edges, 1)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        gen = torch.Generator().manual_seed(self.config.seed)
        for name, mod in self.named_modules():
            if isinstance(mod, nn.Conv2d):
                nn.init.kaiming_normal_(mod.weight, nonlinearity="relu", generator=gen)
                nn.init.zeros_(mod.bias)
            elif isinstance(mod, nn.GroupNorm):
                nn.init.ones_(mod.weight)
                nn.init.zeros_(mod.bias)
        # heads feed MSE targets in [0, 1]; keep initial responses small
        for head in [*self.heatmap_heads, self.point_head, self.edge_head]:
            head.weight.data.mul_(0.1)
        # a negative prior starts the mostly-background sigmoid maps near 0 rather than 0.5
        for head in (self.point_head, self.edge_head):
            head.bias.data.fill_(self.config.head_prior_bias)

    def forward(self, crop: torch.Tensor) -> BackboneOutput:
        if crop.dim() == 3:
            crop = crop.unsqueeze(0)
        h, w = self.config.crop_size
        if crop.shape[1:] != (3, h, w):
            raise ValueError(f"expected crops of shape (3, {h}, {w}), got {tuple(crop.shape[1:])}")
        feats = self.stem(crop)
        heatmaps = []
        for g, p, head in zip(self.stages, self.projections, self.heatmap_heads):
            feats = p(g(feats))
            heatmaps.append(head(feats))
        return BackboneOutput(
            stage_heatmaps=heatmaps,
            features=feats,
            point_pred=torch.sigmoid(self.point_head(feats)),
            edge_pred=torch.sigmoid(self.edge_head(feats)),
        )


def build_backbone(config: BackboneConfig) -> Backbone:
    return Backbone(config)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
