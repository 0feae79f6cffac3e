"""Inference over a split and assembly of the occlusion-aware metric report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .data import AnnotatedSample, apply_affine, atomic_write_text, invert_affine
from .layout import LEFT_EYE_OUTER, RIGHT_EYE_OUTER
from .model import LandmarkModel
from .train import PreparedData, prepare_samples

NORMALIZATIONS = ("inter-ocular", "box-diagonal", "fixed")
METRIC_KEYS = ("nme", "nme_vis", "nme_occ", "occ_ap", "f1", "roc_auc", "fr", "ced_auc")


@dataclass
class MetricConfig:
    normalization: str = "inter-ocular"
    fixed_d: float | None = None
    tau: float = 0.5
    cutoff: float = 0.1
    averaging: str = "micro"
    ap_interpolation: str = "finite"

    def validate(self) -> None:
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.normalization == "fixed" and not (self.fixed_d is not None and self.fixed_d > 0):
            raise ValueError("fixed normalization needs fixed_d > 0")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.cutoff > 0:
            raise ValueError(f"cutoff must be positive, got {self.cutoff}")
        if self.averaging not in ("micro", "macro"):
            raise ValueError("averaging must be 'micro' or 'macro'")
        if self.ap_interpolation not in ("finite", "101"):
            raise ValueError("ap_interpolation must be 'finite' or '101'")


@dataclass
class Predictions:
    points: np.ndarray  # (N, P, 2) source pixels
    visibility: np.ndarray  # (N, P) probabilities


@dataclass
class MetricReport:
    config: dict
    metrics: dict
    per_landmark_nme: list
    counts: dict
    per_sample_nme: list = field(default_factory=list)
    pr_curve: list = field(default_factory=list)  # [recall level, interpolated precision] x 101
    flags: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        atomic_write_text(path, self.to_json())
        return path

    @classmethod
    def read(cls, path) -> MetricReport:
        return cls(**json.loads(Path(path).read_text()))


def normalization_factors(samples: list[AnnotatedSample], config: MetricConfig) -> np.ndarray:
    """Inter-ocular distance from the outer eye corners; box diagonal when either corner is occluded."""
    out = []
    for s in samples:
        diag = float(np.hypot(s.box[2], s.box[3]))
        if config.normalization == "fixed":
            out.append(float(config.fixed_d))
        elif config.normalization == "box-diagonal":
            out.append(diag)
        elif s.visibility[RIGHT_EYE_OUTER] and s.visibility[LEFT_EYE_OUTER]:
            d = float(np.linalg.norm(s.points[RIGHT_EYE_OUTER] - s.points[LEFT_EYE_OUTER]))
            out.append(d if d > 0 else diag)
        else:
            out.append(diag)
    return np.array(out)


@torch.no_grad()
def predict(model: LandmarkModel, data: PreparedData, batch_size: int = 32) -> Predictions:
    """Decoded points mapped back to source pixels plus visibility probabilities."""
    model.eval()
    pts, vis = [], []
    for start in range(0, len(data), batch_size):
        crops = torch.from_numpy(data.crops[start:start + batch_size])
        out = model(crops)
        coords = out.decoded.coords.double().numpy()
        for c, t in zip(coords, data.transforms[start:start + batch_size]):
            pts.append(apply_affine(invert_affine(t), c))
        vis.append(out.visibility.probabilities.double().numpy())
    return Predictions(np.stack(pts), np.concatenate(vis))


def oracle_predictions(samples: list[AnnotatedSample]) -> Predictions:
    return Predictions(
        np.stack([s.points for s in samples]),
        np.stack([s.visibility for s in samples]).astype(np.float64),
    )


def _round(x):
    return None if x is None else float(x)


def score_predictions(samples: list[AnnotatedSample], preds: Predictions,
                      config: MetricConfig | None = None) -> MetricReport:
    config = config or MetricConfig()
    config.validate()
    if not samples:
        raise ValueError("empty split")
    gt = np.stack([s.points for s in samples])
    vis = np.stack([s.visibility for s in samples]).astype(np.int64)
    if preds.points.shape != gt.shape or preds.visibility.shape != vis.shape:
        raise ValueError("prediction shapes do not match the split")
    d = normalization_factors(samples, config)
    err = np.linalg.norm(preds.points - gt, axis=-1) / d[:, None]
    per_sample = err.mean(axis=1)
    nme_vis, nme_occ = M.nme_split(preds.points, gt, vis, d)
    scores = 1.0 - preds.visibility
    labels = 1 - vis
    if config.averaging == "micro":
        ap = M.occ_ap(scores, labels, config.ap_interpolation)
        f1 = M.f1_at_threshold(scores, labels, config.tau)
        auc = M.roc_auc(scores, labels)
    else:
        ap = M.macro_average(M.occ_ap, scores, labels, interpolation=config.ap_interpolation)
        f1 = M.macro_average(M.f1_at_threshold, scores, labels, tau=config.tau)
        auc = M.macro_average(M.roc_auc, scores, labels)
    fr, ced_auc = M.error_curve_stats(per_sample, config.cutoff)
    values = {
        "nme": float(per_sample.mean()),
        "nme_vis": nme_vis,
        "nme_occ": nme_occ,
        "occ_ap": ap,
        "f1": f1,
        "roc_auc": auc,
        "fr": fr,
        "ced_auc": ced_auc,
    }
    return MetricReport(
        config=asdict(config),
        metrics={k: _round(values[k]) for k in METRIC_KEYS},
        per_landmark_nme=[float(x) for x in err.mean(axis=0)],
        counts={"vis": int(vis.sum()), "occ": int(vis.size - vis.sum()), "samples": len(samples)},
        per_sample_nme=[float(x) for x in per_sample],
        pr_curve=interpolated_pr(scores, labels),
        flags={"score_ties": M.has_ties(scores)},
    )


def evaluate(model: LandmarkModel, samples: list[AnnotatedSample], config: MetricConfig | None = None,
             out_path=None, data: PreparedData | None = None, batch_size: int = 32) -> MetricReport:
    """Run inference on ``samples`` and score it; writes the report when ``out_path`` is given."""
    if not samples:
        raise ValueError("empty split")
    if data is None:
        bb = model.config.backbone
        data = prepare_samples(samples, bb.crop_size, bb.stride, model.layout)
    report = score_predictions(samples, predict(model, data, batch_size), config)
    if out_path is not None:
        report.write(out_path)
    return report


def interpolated_pr(scores, labels, levels: int = 101) -> list:
    """Best precision at recall >= r for r on an even grid; empty without positives."""
    labels = np.asarray(labels).ravel()
    if labels.sum() == 0:
        return []
    precision, recall = M.precision_recall_points(scores, labels)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    out = []
    for r in np.linspace(0.0, 1.0, levels):
        i = int(np.searchsorted(recall, r - 1e-12, side="left"))
        out.append([float(r), float(envelope[i]) if i < len(envelope) else 0.0])
    return out
