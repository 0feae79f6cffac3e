"""Landmark-aware masking: random occluder masks and the pseudo-visibility labels they imply."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FILL_MODES = ("solid", "noise")
SHAPES = ("rect", "ellipse")


@dataclass
class MaskParams:
    count: tuple[int, int] = (1, 3)
    area: tuple[float, float] = (0.02, 0.25)
    aspect: tuple[float, float] = (0.5, 2.0)
    shapes: tuple[str, ...] = SHAPES
    fill_modes: tuple[str, ...] = FILL_MODES
    delta: float = 0.5

    def validate(self) -> None:
        lo, hi = self.count
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid occluder count range {self.count}")
        a_lo, a_hi = self.area
        if not (0.0 <= a_lo <= a_hi <= 1.0):
            raise ValueError(f"invalid area fraction range {self.area}")
        r_lo, r_hi = self.aspect
        if not (0.0 < r_lo <= r_hi):
            raise ValueError(f"invalid aspect range {self.aspect}")
        if not self.shapes or any(s not in SHAPES for s in self.shapes):
            raise ValueError(f"shapes must be drawn from {SHAPES}")
        if not self.fill_modes or any(f not in FILL_MODES for f in self.fill_modes):
            raise ValueError(f"fill modes must be drawn from {FILL_MODES}")
        _check_delta(self.delta)


@dataclass(frozen=True)
class MaskShape:
    kind: str
    cx: float
    cy: float
    width: float
    height: float


@dataclass
class MaskSpec:
    mask: np.ndarray  # (h', w') uint8, heatmap resolution
    mask_crop: np.ndarray  # (h, w) bool, crop resolution
    fill_mode: str
    fill: np.ndarray = field(repr=False)  # (3, h, w) float32 fill image
    delta: float = 0.5
    shapes: tuple[MaskShape, ...] = ()

    def __post_init__(self):
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError("mask must be binary")
        _check_delta(self.delta)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaskSpec):
            return NotImplemented
        return (
            self.fill_mode == other.fill_mode
            and self.delta == other.delta
            and self.shapes == other.shapes
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.mask_crop, other.mask_crop)
            and np.array_equal(self.fill, other.fill)
        )


def _check_delta(delta: float) -> None:
    if not (0.0 < delta <= 1.0):
        raise ValueError(f"delta must lie in (0, 1], got {delta}")


def rasterize(shapes, crop_size: tuple[int, int]) -> np.ndarray:
    """Boolean (h, w) mask of pixel centres covered by any shape."""
    h, w = crop_size
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    out = np.zeros((h, w), dtype=bool)
    for s in shapes:
        if s.width <= 0 or s.height <= 0:
            continue
        dx, dy = (xs - s.cx) / (s.width / 2), (ys - s.cy) / (s.height / 2)
        if s.kind == "rect":
            out |= (np.abs(dx) <= 1) & (np.abs(dy) <= 1)
        else:
            out |= dx * dx + dy * dy <= 1
    return out


def downsample_mask(mask_crop: np.ndarray, stride: int) -> np.ndarray:
    """Area-average each stride x stride block, then threshold at 0.5."""
    h, w = mask_crop.shape
    if h % stride or w % stride:
        raise ValueError(f"crop {mask_crop.shape} not divisible by stride {stride}")
    frac = mask_crop.reshape(h // stride, stride, w // stride, stride).mean(axis=(1, 3))
    return (frac >= 0.5).astype(np.uint8)


def mask_from_shapes(shapes, crop_size: tuple[int, int], stride: int, fill_mode: str = "solid",
                     fill=None, delta: float = 0.5) -> MaskSpec:
    """Build a MaskSpec from explicit shapes; ``fill`` is an RGB triple or a (3, h, w) image."""
    if fill_mode not in FILL_MODES:
        raise ValueError(f"unknown fill mode '{fill_mode}'")
    h, w = crop_size
    if fill is None:
        fill = np.zeros(3, dtype=np.float32)
    fill = np.asarray(fill, dtype=np.float32)
    if fill.shape == (3,):
        fill = np.broadcast_to(fill[:, None, None], (3, h, w)).copy()
    if fill.shape != (3, h, w):
        raise ValueError(f"fill must be (3,) or (3, {h}, {w}), got {fill.shape}")
    crop_mask = rasterize(shapes, crop_size)
    return MaskSpec(downsample_mask(crop_mask, stride), crop_mask, fill_mode, fill, delta, tuple(shapes))


def sample_mask(rng_seed, crop_size: tuple[int, int], params: MaskParams | None = None,
                stride: int = 4) -> MaskSpec:
    """Random occluders placed fully inside the crop; deterministic per seed."""
    params = params or MaskParams()
    params.validate()
    rng = np.random.default_rng(rng_seed)
    h, w = crop_size
    n = int(rng.integers(params.count[0], params.count[1] + 1))
    shapes = []
    for _ in range(n):
        kind = params.shapes[int(rng.integers(len(params.shapes)))]
        frac = rng.uniform(*params.area)
        aspect = np.exp(rng.uniform(np.log(params.aspect[0]), np.log(params.aspect[1])))
        box_area = frac * h * w * (4 / np.pi if kind == "ellipse" else 1.0)
        sw = min(np.sqrt(box_area * aspect), float(w))
        sh = min(box_area / sw, float(h)) if sw > 0 else 0.0
        cx = rng.uniform(sw / 2, w - sw / 2)
        cy = rng.uniform(sh / 2, h - sh / 2)
        shapes.append(MaskShape(kind, float(cx), float(cy), float(sw), float(sh)))
    mode = params.fill_modes[int(rng.integers(len(params.fill_modes)))]
    if mode == "solid":
        fill = rng.uniform(0, 1, size=3)
    else:
        fill = rng.uniform(0, 1, size=(3, h, w))
    return mask_from_shapes(shapes, crop_size, stride, mode, fill, params.delta)


def overlap(mask: np.ndarray, heatmaps: np.ndarray) -> np.ndarray:
    """Inner product of the mask with each unit-sum-normalized heatmap channel."""
    heatmaps = np.asarray(heatmaps, dtype=np.float64)
    mask = np.asarray(mask)
    if heatmaps.shape[-2:] != mask.shape:
        raise ValueError(f"mask {mask.shape} does not match heatmaps {heatmaps.shape}")
    sums = heatmaps.sum(axis=(-2, -1))
    num = (heatmaps * mask).sum(axis=(-2, -1))
    return np.divide(num, sums, out=np.zeros_like(num), where=sums > 0)


def pseudo_visibility(mask: np.ndarray, heatmaps: np.ndarray, delta: float = 0.5) -> np.ndarray:
    """1 (visible) where the normalized overlap is below delta, else 0."""
    _check_delta(delta)
    return (overlap(mask, heatmaps) < delta).astype(np.uint8)


def masked_view(crop: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Paint the fill over masked pixels of a (3, h, w) crop."""
    crop = np.asarray(crop)
    if crop.shape[0] != 3 or crop.shape[1:] != spec.mask_crop.shape:
        raise ValueError(f"crop {crop.shape} does not match mask {spec.mask_crop.shape}")
    return np.where(spec.mask_crop[None], spec.fill, crop).astype(crop.dtype, copy=False)
