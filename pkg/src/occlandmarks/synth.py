"""Synthetic face scenes with exact landmark and visibility ground truth.

A 100-point template lives on (or just above) an ellipsoid head proxy.  The
head is rotated by yaw/pitch and perspective-projected; a landmark is
self-occluded when the camera ray reaches the ellipsoid before the point.
External occluders are axis-aligned rectangles/ellipses pasted over the face.

Head frame: x to the image right, y up, z toward the camera.  Positive yaw
turns the face toward the image right, so the subject's left ear (indices
93-99) becomes the far side.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .data import SPLITS, AnnotatedSample, write_annotation, write_manifest
from .layout import default_layout

HEAD_RADII = np.array([1.0, 1.25, 1.05])
CAMERA_DIST = 6.0
STYLES = ("human", "mammal-eared", "robot")
BACKGROUNDS = ("plain", "gradient", "noise")

RIGHT_EAR = list(range(86, 93))
LEFT_EAR = list(range(93, 100))

# a point whose first ray hit comes this much earlier than the point counts as hidden
_RAY_EPS = 1e-7


@dataclass
class Occluder:
    kind: str  # "rect" | "ellipse"
    cx: float
    cy: float
    width: float
    height: float
    color: tuple[float, float, float] = (0.5, 0.5, 0.5)
    textured: bool = False

    def contains(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        dx = (xy[:, 0] - self.cx) / (self.width / 2.0)
        dy = (xy[:, 1] - self.cy) / (self.height / 2.0)
        if self.kind == "rect":
            return (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)
        if self.kind == "ellipse":
            return dx**2 + dy**2 <= 1.0
        raise ValueError(f"unknown occluder kind '{self.kind}'")


@dataclass
class SceneParams:
    yaw: float = 0.0
    pitch: float = 0.0
    style: str = "human"
    occluder_count: tuple[int, int] = (0, 3)
    occluder_area: tuple[float, float] = (0.02, 0.25)
    background: str = "plain"
    image_size: int = 96
    # relative jitter of head placement/scale and of the face box
    jitter: float = 0.05
    occluders: list[Occluder] | None = field(default=None)


@dataclass
class SceneRanges:
    """Distribution over SceneParams used when generating a dataset."""

    yaw: tuple[float, float] = (-70.0, 70.0)
    pitch: tuple[float, float] = (-20.0, 20.0)
    styles: tuple[str, ...] = STYLES
    backgrounds: tuple[str, ...] = BACKGROUNDS
    occluder_count: tuple[int, int] = (0, 3)
    occluder_area: tuple[float, float] = (0.02, 0.25)
    image_size: int = 96
    jitter: float = 0.05

    def draw(self, rng: np.random.Generator) -> SceneParams:
        return SceneParams(
            yaw=float(rng.uniform(*self.yaw)),
            pitch=float(rng.uniform(*self.pitch)),
            style=self.styles[int(rng.integers(len(self.styles)))],
            occluder_count=tuple(self.occluder_count),
            occluder_area=tuple(self.occluder_area),
            background=self.backgrounds[int(rng.integers(len(self.backgrounds)))],
            image_size=self.image_size,
            jitter=self.jitter,
        )


# ---------------------------------------------------------------- template


def _surface_z(x: float, y: float) -> float:
    a, b, c = HEAD_RADII
    return float(c * np.sqrt(max(0.0, 1.0 - (x / a) ** 2 - (y / b) ** 2)))


def _on_face(x, y, lift=0.0):
    return (x, y, _surface_z(x, y) + lift)


def _human_ear(side: float) -> list[tuple[float, float, float]]:
    yz = [(0.38, 0.02), (0.42, -0.10), (0.35, -0.22), (0.20, -0.27), (0.05, -0.24), (-0.07, -0.15), (-0.10, -0.02)]
    return [(side * (1.10 + 0.12 * np.sin(np.pi * i / 6)), y, z) for i, (y, z) in enumerate(yz)]


def _mammal_ear(side: float) -> list[tuple[float, float, float]]:
    xy = [(0.30, 1.05), (0.40, 1.30), (0.52, 1.55), (0.65, 1.78), (0.74, 1.50), (0.80, 1.22), (0.82, 0.88)]
    return [(side * x, y, _surface_z(x, y) + 0.05) for x, y in xy]


def template_3d(style: str = "human") -> np.ndarray:
    """Canonical (100, 3) landmark template in head coordinates."""
    if style not in STYLES:
        raise ValueError(f"unknown style '{style}'")
    pts: list[tuple[float, float, float]] = []
    for th in np.linspace(0.0, np.pi, 17):
        pts.append(_on_face(-0.92 * np.cos(th), 0.15 - 1.27 * np.sin(th)))
    for side, xs in ((-1, np.linspace(-0.62, -0.12, 5)), (1, np.linspace(0.12, 0.62, 5))):
        for i, x in enumerate(xs):
            arch = np.sin(np.pi * (i if side < 0 else 4 - i) / 4)
            pts.append(_on_face(x, 0.5 + 0.08 * arch, 0.03))
    for y, lift in zip((0.32, 0.18, 0.04, -0.10), (0.05, 0.10, 0.16, 0.24)):
        pts.append(_on_face(0.0, y, lift))
    for x, lift in zip((-0.16, -0.08, 0.0, 0.08, 0.16), (0.08, 0.11, 0.13, 0.11, 0.08)):
        pts.append(_on_face(x, -0.2, lift))
    for cx in (-0.36, 0.36):
        # image-left corner first: outer corner for the right eye, inner for the left
        for dx, dy in ((-0.15, 0), (-0.05, 0.06), (0.05, 0.06), (0.15, 0), (0.05, -0.06), (-0.05, -0.06)):
            pts.append(_on_face(cx + dx, 0.28 + dy, 0.01))
    outer = [(-0.3, -0.55), (-0.2, -0.47), (-0.08, -0.43), (0.0, -0.45), (0.08, -0.43), (0.2, -0.47),
             (0.3, -0.55), (0.2, -0.64), (0.08, -0.68), (0.0, -0.69), (-0.08, -0.68), (-0.2, -0.64)]
    pts += [_on_face(x, y, 0.03) for x, y in outer]
    inner = [(-0.22, -0.55), (-0.1, -0.51), (0.0, -0.51), (0.1, -0.51), (0.22, -0.55), (0.1, -0.59),
             (0.0, -0.6), (-0.1, -0.59)]
    pts += [_on_face(x, y, 0.02) for x, y in inner]
    pts += [_on_face(-0.36, 0.28, 0.015), _on_face(0.36, 0.28, 0.015)]
    for cx in (-0.36, 0.36):
        for dx, dy in ((0.0, 0.045), (0.045, 0.0), (0.0, -0.045), (-0.045, 0.0)):
            pts.append(_on_face(cx + dx, 0.28 + dy, 0.012))
    for k in range(8):
        ang = 2 * np.pi * k / 8
        pts.append(_on_face(0.15 * np.cos(ang), -0.55 + 0.03 * np.sin(ang), 0.005))
    ear = _mammal_ear if style == "mammal-eared" else _human_ear
    pts += ear(-1.0) + ear(1.0)
    out = np.array(pts, dtype=np.float64)
    assert out.shape == (100, 3)
    return out


# ---------------------------------------------------------------- geometry


def rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    y, p = np.deg2rad(yaw_deg), np.deg2rad(pitch_deg)
    r_yaw = np.array([[np.cos(y), 0, np.sin(y)], [0, 1, 0], [-np.sin(y), 0, np.cos(y)]])
    r_pitch = np.array([[1, 0, 0], [0, np.cos(p), -np.sin(p)], [0, np.sin(p), np.cos(p)]])
    return r_pitch @ r_yaw


def ray_first_hit(origin: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Ray parameter t of the first ellipsoid hit on origin + t (target - origin).

    Returns +inf where the segment line misses the ellipsoid. All inputs are in
    head coordinates.
    """
    o = origin / HEAD_RADII
    d = (targets - origin) / HEAD_RADII
    a = np.sum(d * d, axis=-1)
    b = 2.0 * np.sum(d * o, axis=-1)
    c = float(o @ o) - 1.0
    disc = b * b - 4 * a * c
    t = np.full(len(targets), np.inf)
    hit = disc >= 0
    t[hit] = (-b[hit] - np.sqrt(disc[hit])) / (2 * a[hit])
    return t


def self_occluded(template: np.ndarray, yaw: float, pitch: float) -> np.ndarray:
    rot = rotation(yaw, pitch)
    cam_head = rot.T @ np.array([0.0, 0.0, CAMERA_DIST])
    t = ray_first_hit(cam_head, template)
    return t < 1.0 - _RAY_EPS


def project(points_world: np.ndarray, focal: float, cx: float, cy: float) -> np.ndarray:
    depth = CAMERA_DIST - points_world[:, 2]
    x = cx + focal * points_world[:, 0] / depth
    y = cy - focal * points_world[:, 1] / depth
    return np.stack([x, y], axis=1)


# ---------------------------------------------------------------- rendering

_STYLE_COLORS = {
    "human": ((0.87, 0.68, 0.55), 0.03),
    "mammal-eared": ((0.62, 0.45, 0.30), 0.10),
    "robot": ((0.62, 0.66, 0.72), 0.05),
}


def _smooth_noise(rng: np.random.Generator, size: int, cells: int = 6) -> np.ndarray:
    coarse = rng.random((cells, cells, 3))
    im = Image.fromarray((coarse * 255).astype(np.uint8)).resize((size, size), Image.BILINEAR)
    return np.asarray(im, dtype=np.float64) / 255.0


def _background(rng, mode: str, size: int) -> np.ndarray:
    if mode == "plain":
        return np.broadcast_to(rng.random(3), (size, size, 3)).copy()
    if mode == "gradient":
        c0, c1 = rng.random(3), rng.random(3)
        t = np.linspace(0.0, 1.0, size)[None, :, None]
        if rng.random() < 0.5:
            t = t.transpose(1, 0, 2)
        return np.broadcast_to(c0 * (1 - t) + c1 * t, (size, size, 3)).copy()
    if mode == "noise":
        return _smooth_noise(rng, size)
    raise ValueError(f"unknown background mode '{mode}'")


def _render_head(img, rot, focal, cx, cy, color, texture):
    size = img.shape[0]
    ys, xs = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    dirs = np.stack([(xs - cx) / focal, -(ys - cy) / focal, -np.ones_like(xs)], axis=-1).reshape(-1, 3)
    cam = rot.T @ np.array([0.0, 0.0, CAMERA_DIST])
    d = dirs @ rot  # rows: R^T d
    o = cam / HEAD_RADII
    dd = d / HEAD_RADII
    a = np.sum(dd * dd, axis=1)
    b = 2.0 * dd @ o
    c = float(o @ o) - 1.0
    disc = b * b - 4 * a * c
    hit = disc >= 0
    t = np.where(hit, (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a), 0.0)
    p = cam + t[:, None] * d
    n = p / HEAD_RADII**2
    n = (n @ rot.T)
    n /= np.linalg.norm(n, axis=1, keepdims=True) + 1e-12
    light = np.array([0.3, 0.5, 1.0]) / np.linalg.norm([0.3, 0.5, 1.0])
    shade = 0.35 + 0.65 * np.clip(n @ light, 0.0, 1.0)
    face = (np.asarray(color)[None, :] * shade[:, None] + texture.reshape(-1, 3)).reshape(size, size, 3)
    mask = hit.reshape(size, size)
    img[mask] = face[mask]
    return mask


def _poly(draw, pts, fill=None, outline=None, width=1, closed=False):
    seq = [tuple(map(float, p)) for p in pts]
    if fill is not None and len(seq) >= 3:
        draw.polygon(seq, fill=fill)
    if outline is not None:
        if closed:
            seq = seq + [seq[0]]
        draw.line(seq, fill=outline, width=width)


def _rgb(c) -> tuple[int, int, int]:
    return tuple(round(255 * float(np.clip(v, 0, 1))) for v in c)


def _draw_features(draw, xy, hidden, style, rng_colors):
    layout = default_layout()
    dark = (40, 30, 25) if style != "robot" else (20, 20, 30)
    eye_white = (235, 235, 230) if style != "robot" else (120, 220, 255)
    iris_col, lip_col = rng_colors

    def vis(idx):
        return not any(hidden[i] for i in idx)

    for side in (range(36, 42), range(42, 48)):
        idx = list(side)
        if vis(idx):
            _poly(draw, xy[idx], fill=eye_white)
    for pupil, iris in ((68, range(70, 74)), (69, range(74, 78))):
        idx = list(iris)
        if vis(idx + [pupil]):
            _poly(draw, xy[idx], fill=iris_col)
            x, y = xy[pupil]
            draw.ellipse([x - 0.9, y - 0.9, x + 0.9, y + 0.9], fill=(5, 5, 5))
    if vis(range(48, 60)):
        _poly(draw, xy[48:60], fill=lip_col)
    if vis(range(60, 68)):
        _poly(draw, xy[60:68], fill=(70, 20, 25))
    if vis(range(78, 86)):
        _poly(draw, xy[78:86], fill=(230, 225, 215))
    widths = {"left_brow": 2, "right_brow": 2}
    for name, poly in zip(layout.edge_names, layout.edges):
        if name.endswith(("ear", "iris")):
            continue
        for a, b in itertools.pairwise(poly):
            if hidden[a] or hidden[b]:
                continue
            draw.line([tuple(xy[a]), tuple(xy[b])], fill=dark, width=widths.get(name, 1))


def _ear_polys(xy, style):
    return [(RIGHT_EAR, xy[RIGHT_EAR]), (LEFT_EAR, xy[LEFT_EAR])]


def _random_occluders(rng, params: SceneParams, box) -> list[Occluder]:
    lo, hi = params.occluder_count
    if lo < 0 or hi < lo:
        raise ValueError(f"invalid occluder count range {params.occluder_count}")
    n = int(rng.integers(lo, hi + 1))
    bx, by, bw, bh = box
    out = []
    for _ in range(n):
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        area = rng.uniform(*params.occluder_area) * bw * bh
        aspect = float(np.exp(rng.uniform(np.log(0.5), np.log(2.0))))
        if kind == "ellipse":
            area *= 4.0 / np.pi
        w = float(np.sqrt(area * aspect))
        h = float(area / w)
        out.append(
            Occluder(
                kind=kind,
                cx=float(bx + rng.random() * bw),
                cy=float(by + rng.random() * bh),
                width=w,
                height=h,
                color=tuple(float(c) for c in rng.random(3)),
                textured=bool(rng.random() < 0.5),
            )
        )
    return out


def paint_occluders(img: np.ndarray, occluders: list[Occluder], rng: np.random.Generator) -> None:
    size_y, size_x = img.shape[:2]
    ys, xs = np.meshgrid(np.arange(size_y) + 0.5, np.arange(size_x) + 0.5, indexing="ij")
    centers = np.stack([xs.ravel(), ys.ravel()], axis=1)
    for occ in occluders:
        inside = occ.contains(centers).reshape(size_y, size_x)
        if occ.textured:
            tex = 0.5 * np.asarray(occ.color) + 0.5 * _smooth_noise(rng, max(size_x, size_y), cells=10)[:size_y, :size_x]
        else:
            tex = np.broadcast_to(np.asarray(occ.color), img.shape)
        img[inside] = tex[inside]


@dataclass
class RenderedScene:
    sample: AnnotatedSample
    occluders: list[Occluder]
    self_occluded: np.ndarray
    externally_occluded: np.ndarray


def synthesize_sample(rng_seed, scene: SceneParams | None = None) -> AnnotatedSample:
    """Render one scene; identical (seed, scene) gives a bit-identical sample."""
    return render_scene(rng_seed, scene).sample


def render_scene(rng_seed, scene: SceneParams | None = None) -> RenderedScene:
    scene = scene or SceneParams()
    if scene.style not in STYLES:
        raise ValueError(f"unknown style '{scene.style}'")
    if scene.background not in BACKGROUNDS:
        raise ValueError(f"unknown background mode '{scene.background}'")
    rng = np.random.default_rng(rng_seed)
    size = scene.image_size
    template = template_3d(scene.style)
    rot = rotation(scene.yaw, scene.pitch)
    world = template @ rot.T

    j = scene.jitter
    focal = 1.3 * size * (1.0 + rng.uniform(-2 * j, 2 * j))
    cx = size / 2.0 + rng.uniform(-j, j) * size
    cy = size / 2.0 + rng.uniform(-j, j) * size + (0.06 * size if scene.style == "mammal-eared" else 0.0)
    xy = project(world, focal, cx, cy)
    hidden_self = self_occluded(template, scene.yaw, scene.pitch)

    lo, hi = xy.min(axis=0), xy.max(axis=0)
    side = float(np.max(hi - lo)) * 1.2 * (1.0 + rng.uniform(-j, j))
    center = (lo + hi) / 2.0 + rng.uniform(-j, j, size=2) * side
    box = (float(center[0] - side / 2), float(center[1] - side / 2), side, side)

    base_color, tex_amp = _STYLE_COLORS[scene.style]
    base_color = np.clip(np.asarray(base_color) + rng.uniform(-0.08, 0.08, 3), 0, 1)
    texture = tex_amp * (2 * _smooth_noise(rng, size, cells=16) - 1)
    iris_col = _rgb(rng.uniform(0.1, 0.6, 3))
    lip_col = _rgb(np.clip(base_color * np.array([1.0, 0.6, 0.6]), 0, 1))

    img = _background(rng, scene.background, size)
    ear_depth = [world[idx, 2].mean() for idx in (RIGHT_EAR, LEFT_EAR)]
    ear_col = _rgb(base_color * 0.85)

    pil = Image.fromarray(np.round(img * 255).astype(np.uint8))
    draw = ImageDraw.Draw(pil)
    for (idx, pts), z in zip(_ear_polys(xy, scene.style), ear_depth):
        if z < 0:
            _poly(draw, pts, fill=ear_col, outline=(60, 40, 30))
    img = np.asarray(pil, dtype=np.float64) / 255.0
    img = img.copy()
    _render_head(img, rot, focal, cx, cy, base_color, texture)

    pil = Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8))
    draw = ImageDraw.Draw(pil)
    for (idx, pts), z in zip(_ear_polys(xy, scene.style), ear_depth):
        if z >= 0:
            _poly(draw, pts, fill=ear_col, outline=(60, 40, 30))
    _draw_features(draw, xy, hidden_self, scene.style, (iris_col, lip_col))
    img = np.asarray(pil, dtype=np.float64) / 255.0
    img = img.copy()

    occluders = scene.occluders if scene.occluders is not None else _random_occluders(rng, scene, box)
    paint_occluders(img, occluders, rng)
    hidden_ext = np.zeros(len(xy), dtype=bool)
    for occ in occluders:
        hidden_ext |= occ.contains(xy)
    in_frame = (xy[:, 0] >= 0) & (xy[:, 0] < size) & (xy[:, 1] >= 0) & (xy[:, 1] < size)

    visibility = (~hidden_self & ~hidden_ext & in_frame).astype(np.int64)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    sample = AnnotatedSample(
        image=img,
        box=box,
        points=xy,
        visibility=visibility,
        domain_tag=f"synthetic-{scene.style}",
    )
    return RenderedScene(sample, list(occluders), hidden_self, hidden_ext)


def generate_dataset(root, counts, seed: int = 0, ranges: SceneRanges | None = None) -> Path:
    """Write ``counts`` (train, val, test) scenes plus a manifest under ``root``.

    Each sample's scene and pixels depend only on (seed, split, index).
    """
    ranges = ranges or SceneRanges()
    if len(counts) != len(SPLITS) or any(int(c) < 0 for c in counts):
        raise ValueError(f"counts must be {len(SPLITS)} non-negative integers, got {counts}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for s, (split, n) in enumerate(zip(SPLITS, counts)):
        for i in range(int(n)):
            scene = ranges.draw(np.random.default_rng([seed, s, i, 0]))
            sample = synthesize_sample([seed, s, i, 1], scene)
            name = f"{split}_{i:05d}.json"
            write_annotation(sample, root / name)
            entries.append((name, split))
    meta = {
        "seed": int(seed),
        "counts": [int(c) for c in counts],
        "ranges": asdict(ranges),
        "layout_digest": default_layout().digest(),
    }
    write_manifest(root, entries, meta)
    return root
