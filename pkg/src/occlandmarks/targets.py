"""Supervision targets at heatmap resolution.

Grid convention: cell (u, v) is column u, row v, and maps are indexed
``[v, u]``. A crop coordinate x corresponds to heatmap coordinate
``x / stride - 0.5`` so that cell centers line up with the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layout import LandmarkLayout


@dataclass
class TargetMaps:
    heatmaps: np.ndarray  # (P, h', w')
    point_map: np.ndarray  # (P, h', w')
    edge_map: np.ndarray  # (N_E, h', w')
    sigma: float


def crop_to_heatmap(points, stride: int) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) / stride - 0.5


def heatmap_to_crop(points, stride: int) -> np.ndarray:
    return (np.asarray(points, dtype=np.float64) + 0.5) * stride


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return u, v


def gaussian_heatmap(s, sigma: float, h: int, w: int) -> np.ndarray:
    """exp(-|(u,v) - s|^2 / (2 sigma^2)) on an h x w grid, untruncated."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    u, v = _grid(h, w)
    d2 = (u - s[0]) ** 2 + (v - s[1]) ** 2
    return np.exp(-d2 / (2.0 * sigma**2))


def build_point_map(points, sigma_pt: float, h: int, w: int) -> np.ndarray:
    if not sigma_pt > 0:
        raise ValueError(f"sigma must be positive, got {sigma_pt}")
    pts = np.asarray(points, dtype=np.float64)
    u, v = _grid(h, w)
    d2 = (u[None] - pts[:, 0, None, None]) ** 2 + (v[None] - pts[:, 1, None, None]) ** 2
    return np.exp(-d2 / (2.0 * sigma_pt**2))


def polyline_distance(poly: np.ndarray, h: int, w: int) -> np.ndarray:
    """Euclidean distance from every grid cell to a polyline (min over segments)."""
    u, v = _grid(h, w)
    q = np.stack([u, v], axis=-1)
    a = poly[:-1]
    b = poly[1:]
    if len(poly) == 1:
        a = b = poly
    best = np.full((h, w), np.inf)
    for pa, pb in zip(a, b):
        ab = pb - pa
        denom = float(ab @ ab)
        if denom == 0.0:
            d = np.linalg.norm(q - pa, axis=-1)
        else:
            t = np.clip(((q - pa) @ ab) / denom, 0.0, 1.0)
            d = np.linalg.norm(q - (pa + t[..., None] * ab), axis=-1)
        best = np.minimum(best, d)
    return best


def build_edge_map(layout: LandmarkLayout, points, sigma_edge: float, h: int, w: int) -> np.ndarray:
    if not sigma_edge > 0:
        raise ValueError(f"sigma must be positive, got {sigma_edge}")
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty((layout.num_edges, h, w))
    for e, poly in enumerate(layout.edges):
        if len(poly) < 2:
            raise ValueError(f"edge {e} has fewer than 2 points")
        d = polyline_distance(pts[list(poly)], h, w)
        out[e] = np.exp(-(d**2) / (2.0 * sigma_edge**2))
    return out


def build_targets(
    layout: LandmarkLayout,
    points_crop,
    stride: int,
    h: int,
    w: int,
    sigma: float = 1.5,
    sigma_pt: float = 1.0,
    sigma_edge: float = 1.0,
) -> TargetMaps:
    """All target maps for one crop; ``points_crop`` are crop-pixel coordinates."""
    s = crop_to_heatmap(points_crop, stride)
    hh, ww = h // stride, w // stride
    return TargetMaps(
        heatmaps=build_point_map(s, sigma, hh, ww),
        point_map=build_point_map(s, sigma_pt, hh, ww),
        edge_map=build_edge_map(layout, s, sigma_edge, hh, ww),
        sigma=sigma,
    )
