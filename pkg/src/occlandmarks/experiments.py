"""Ablation runs over presets and seeds, with a content-addressed result cache."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import build_run_config, resolve
from .data import AnnotatedSample, load_split, read_manifest
from .evaluate import MetricReport, evaluate
from .model import LandmarkModel
from .train import PreparedData, prepare_samples, train


def source_digest() -> str:
    """Hash of the package sources, so cached results expire when the code changes."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for path in sorted([*root.rglob("*.py"), *root.rglob("*.json")]):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def dataset_digest(root) -> str:
    root = Path(root)
    h = hashlib.sha256()
    h.update((root / "manifest.json").read_bytes())
    for name, _ in read_manifest(root):
        h.update((root / name).read_bytes())
    return h.hexdigest()[:16]


@dataclass
class SplitData:
    """A loaded split; prepared crops and targets are built once per target geometry."""

    samples: list[AnnotatedSample]
    _prepared: dict = field(default_factory=dict, repr=False)

    def prepared(self, crop_size=(64, 64), stride: int = 4, sigma: float = 1.5, sigma_pt: float = 1.0,
                 sigma_edge: float = 1.0) -> PreparedData:
        key = (tuple(crop_size), stride, sigma, sigma_pt, sigma_edge)
        if key not in self._prepared:
            self._prepared[key] = prepare_samples(self.samples, crop_size, stride, None, sigma, sigma_pt, sigma_edge)
        return self._prepared[key]


def load_prepared(root, split: str) -> SplitData:
    return SplitData(load_split(root, split))


def run_key(cfg: dict, data_digest: str) -> str:
    blob = json.dumps({"cfg": cfg, "data": data_digest, "src": source_digest()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def run_preset(preset: str, seed: int, train_data: SplitData, test_data: SplitData, data_digest: str,
               cache_dir=None, base: dict | None = None, log_fn=None) -> MetricReport:
    """Train one preset/seed and evaluate it on the test split; reuse a cached report when present.

    Cache entries are keyed by the resolved configuration alone, so presets that
    resolve identically share a single run.
    """
    cfg = resolve(base, preset=preset, seed=seed)
    cfg.pop("preset", None)
    run, problems = build_run_config(cfg)
    if problems:
        raise ValueError("; ".join(problems))
    resolved = run.resolved()
    key = run_key(resolved, data_digest)
    path = Path(cache_dir) / f"run_{key}.json" if cache_dir is not None else None
    if path is not None and path.exists():
        return MetricReport.read(path)
    bb, tc = run.model.backbone, run.train
    geometry = (bb.crop_size, bb.stride, tc.sigma, tc.sigma_pt, tc.sigma_edge)
    model = LandmarkModel(run.model)
    train(model, train_data.prepared(*geometry), run.train, log_fn=log_fn)
    report = evaluate(model, test_data.samples, run.metrics, data=test_data.prepared(*geometry))
    if path is not None:
        report.write(path)
    return report


def median_metric(reports: list[MetricReport], name: str) -> float:
    vals = [r.metrics[name] for r in reports]
    if any(v is None for v in vals):
        raise ValueError(f"metric {name} undefined in some run")
    return float(np.median(vals))
