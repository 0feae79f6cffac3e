"""Full landmark + visibility model and its checkpoint container."""

from __future__ import annotations

import io
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .backbone import Backbone, BackboneConfig, BackboneOutput
from .decode import (
    DecodeResult,
    aggregate_edge_evidence,
    membership_matrix,
    reweight_and_decode,
)
from .layout import LandmarkLayout, default_layout
from .visibility import VisibilityHead, VisibilityHeadConfig, VisibilityOutput

GATING_MODES = ("point_edge", "point", "none")


@dataclass
class DecodeConfig:
    temperature: float = 1.0
    gating: str = "point_edge"

    def validate(self) -> None:
        if not self.temperature > 0:
            raise ValueError("decode temperature must be positive")
        if self.gating not in GATING_MODES:
            raise ValueError(f"gating must be one of {GATING_MODES}")


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    visibility: VisibilityHeadConfig = field(default_factory=VisibilityHeadConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)


@dataclass
class ModelOutput:
    backbone: BackboneOutput
    decoded: DecodeResult
    visibility: VisibilityOutput | None


class LandmarkModel(nn.Module):
    def __init__(self, config: ModelConfig, layout: LandmarkLayout | None = None):
        super().__init__()
        self.layout = layout or default_layout()
        config.backbone.num_points = self.layout.num_points
        config.backbone.num_edges = self.layout.num_edges
        config.decode.validate()
        self.config = config
        self.backbone = Backbone(config.backbone)
        self.visibility = VisibilityHead(
            config.visibility, config.backbone.channels, self.layout.num_points, self.layout.num_edges
        )
        self.register_buffer("membership", membership_matrix(self.layout), persistent=False)

    def decode(self, out: BackboneOutput) -> DecodeResult:
        gating = self.config.decode.gating
        heat = out.stage_heatmaps[-1]
        ones = torch.ones_like(heat)
        point = out.point_pred if gating in ("point", "point_edge") else ones
        if gating == "point_edge":
            evidence = aggregate_edge_evidence(out.edge_pred, self.layout, self.membership)
        else:
            evidence = ones
        return reweight_and_decode(heat, point, evidence, self.config.decode.temperature,
                                   self.config.backbone.stride)

    def forward(self, crops: torch.Tensor, with_visibility: bool = True) -> ModelOutput:
        out = self.backbone(crops)
        dec = self.decode(out)
        vis = None
        if with_visibility:
            vis = self.visibility(out.features, out.point_pred, out.edge_pred, dec.attention)
        return ModelOutput(out, dec, vis)


def config_to_dict(config: ModelConfig) -> dict:
    return asdict(config)


def config_from_dict(raw: dict) -> ModelConfig:
    bb = dict(raw["backbone"])
    bb["crop_size"] = tuple(bb["crop_size"])
    return ModelConfig(
        backbone=BackboneConfig(**bb),
        visibility=VisibilityHeadConfig(**raw["visibility"]),
        decode=DecodeConfig(**raw["decode"]),
    )


def save_checkpoint(path, model: LandmarkModel, step: int, epoch: int, optimizer_state=None,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": "occlandmarks-checkpoint/1",
        "config": config_to_dict(model.config),
        "layout_digest": model.layout.digest(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "step": int(step),
        "epoch": int(epoch),
        "optimizer": optimizer_state,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    torch.save(blob, buf)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path, layout: LandmarkLayout | None = None) -> tuple[LandmarkModel, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    layout = layout or default_layout()
    if blob.get("layout_digest") != layout.digest():
        raise ValueError(
            f"checkpoint layout {blob.get('layout_digest')} does not match layout {layout.digest()}"
        )
    model = LandmarkModel(config_from_dict(blob["config"]), layout)
    model.load_state_dict(blob["state_dict"])
    return model, blob
