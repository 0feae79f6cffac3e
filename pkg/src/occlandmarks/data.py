"""Annotated samples, crop normalization and on-disk dataset format."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .layout import NUM_POINTS

SPLITS = ("train", "val", "test")


class SchemaError(ValueError):
    pass


@dataclass
class AnnotatedSample:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    box: tuple[float, float, float, float]  # x, y, width, height
    points: np.ndarray  # (100, 2) source pixels
    visibility: np.ndarray  # (100,) 0/1
    domain_tag: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=np.int64)
        self.box = tuple(float(b) for b in self.box)
        if self.points.shape != (NUM_POINTS, 2) or not np.all(np.isfinite(self.points)):
            raise SchemaError(f"points must be finite with shape ({NUM_POINTS}, 2)")
        if self.visibility.shape != (NUM_POINTS,) or not np.isin(self.visibility, (0, 1)).all():
            raise SchemaError("visibility must be 100 values in {0, 1}")


@dataclass
class NormalizedCrop:
    crop: np.ndarray  # (3, h, w)
    transform: np.ndarray  # (2, 3) source -> crop
    points_crop: np.ndarray  # (100, 2)


def box_transform(box, h: int, w: int) -> np.ndarray:
    """Affine map sending the box corners onto the crop corners."""
    x, y, bw, bh = box
    if bw <= 0 or bh <= 0:
        raise ValueError(f"box must have positive size, got {box}")
    sx, sy = w / bw, h / bh
    return np.array([[sx, 0.0, -x * sx], [0.0, sy, -y * sy]])


def apply_affine(transform: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ transform[:, :2].T + transform[:, 2]


def invert_affine(transform: np.ndarray) -> np.ndarray:
    a = transform[:, :2]
    a_inv = np.linalg.inv(a)
    return np.hstack([a_inv, (-a_inv @ transform[:, 2])[:, None]])


def normalize_crop(sample: AnnotatedSample, h: int, w: int) -> NormalizedCrop:
    """Bilinear crop-and-resize of the box to h x w; outside pixels are zero.

    Pixel k covers [k, k+1), so crop pixel centers are pulled back through the
    inverse affine and sampled at continuous source coordinates.
    """
    if h <= 0 or w <= 0:
        raise ValueError("crop size must be positive")
    t = box_transform(sample.box, h, w)
    inv = invert_affine(t)
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    src = apply_affine(inv, np.stack([xx.ravel(), yy.ravel()], axis=1))
    coords = np.stack([src[:, 1] - 0.5, src[:, 0] - 0.5])
    img = np.asarray(sample.image, dtype=np.float64)
    crop = np.stack(
        [
            ndimage.map_coordinates(img[..., c], coords, order=1, mode="constant", cval=0.0).reshape(h, w)
            for c in range(img.shape[2])
        ]
    )
    return NormalizedCrop(crop=crop, transform=t, points_crop=apply_affine(t, sample.points))


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    _atomic_write(Path(path), text.encode())


def save_png(image: np.ndarray, path) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    Image.fromarray(arr).save(tmp, format="PNG")
    os.replace(tmp, path)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def annotation_to_dict(sample: AnnotatedSample, image_ref: str) -> dict:
    return {
        "image": image_ref,
        "box": [round(float(b), 6) for b in sample.box],
        "points": [[round(float(x), 6), round(float(y), 6)] for x, y in sample.points],
        "visibility": [int(v) for v in sample.visibility],
        "domain": sample.domain_tag,
    }


def write_annotation(sample: AnnotatedSample, path, image_name: str | None = None) -> Path:
    """Write ``<path>`` JSON plus the referenced PNG next to it."""
    path = Path(path)
    image_name = image_name or path.with_suffix(".png").name
    save_png(sample.image, path.parent / image_name)
    body = json.dumps(annotation_to_dict(sample, image_name), indent=None)
    atomic_write_text(path, body + "\n")
    return path


def _check_annotation(raw) -> None:
    if not isinstance(raw, dict):
        raise SchemaError("annotation must be a JSON object")
    for key in ("image", "box", "points", "visibility", "domain"):
        if key not in raw:
            raise SchemaError(f"missing key '{key}'")
    if not isinstance(raw["box"], list) or len(raw["box"]) != 4:
        raise SchemaError("box must be [x, y, w, h]")
    pts = raw["points"]
    if not isinstance(pts, list) or len(pts) != NUM_POINTS:
        raise SchemaError(f"points must list {NUM_POINTS} entries, got {len(pts) if isinstance(pts, list) else pts!r}")
    if any(not isinstance(p, list) or len(p) != 2 for p in pts):
        raise SchemaError("each point must be [x, y]")
    vis = raw["visibility"]
    if not isinstance(vis, list) or len(vis) != NUM_POINTS:
        raise SchemaError(f"visibility must list {NUM_POINTS} entries")
    if any(type(v) is not int or v not in (0, 1) for v in vis):
        raise SchemaError("visibility values must be integers 0 or 1")
    if raw["box"][2] <= 0 or raw["box"][3] <= 0:
        raise SchemaError("box must have positive width and height")


def read_annotation(path, load_image: bool = True) -> AnnotatedSample:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    _check_annotation(raw)
    img_path = path.parent / raw["image"]
    if not img_path.exists():
        raise FileNotFoundError(f"image referenced by {path} not found: {img_path}")
    image = load_png(img_path) if load_image else np.zeros((1, 1, 3))
    return AnnotatedSample(
        image=image,
        box=tuple(raw["box"]),
        points=np.array(raw["points"], dtype=np.float64),
        visibility=np.array(raw["visibility"], dtype=np.int64),
        domain_tag=raw["domain"],
    )


def write_manifest(root, entries: list[tuple[str, str]], meta: dict | None = None) -> Path:
    """``entries`` are (annotation file name, split) pairs."""
    for _, split in entries:
        if split not in SPLITS:
            raise SchemaError(f"unknown split '{split}'")
    body = {"files": [{"file": f, "split": s} for f, s in entries]}
    if meta:
        body["meta"] = meta
    path = Path(root) / "manifest.json"
    atomic_write_text(path, json.dumps(body, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(root) -> list[tuple[str, str]]:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest in {root}")
    raw = json.loads(path.read_text())
    return [(d["file"], d["split"]) for d in raw["files"]]


def load_split(root, split: str) -> list[AnnotatedSample]:
    root = Path(root)
    return [read_annotation(root / f) for f, s in read_manifest(root) if s == split]
