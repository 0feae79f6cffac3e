"""The 100-point landmark schema and its semantic edge polylines.

Index blocks of the bundled layout:

    0-67    standard 68-point ordering (jaw, brows, nose, eyes, lips)
    68-69   right / left pupil
    70-77   iris ring, 4 points per eye
    78-85   inner-mouth ring
    86-99   ear contours, 7 points per ear

"Right" is the subject's right, which appears on the image left.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

NUM_POINTS = 100

# outer eye corners in the 68-point ordering, used for inter-ocular normalization
RIGHT_EYE_OUTER = 36
LEFT_EYE_OUTER = 45


class LayoutError(ValueError):
    """Base class for layout validation failures."""

    field_name = "layout"

    def __init__(self, message: str):
        super().__init__(f"{self.field_name}: {message}")


class LayoutParseError(LayoutError):
    field_name = "parse"


class PointCountError(LayoutError):
    field_name = "point count"


class DanglingIndexError(LayoutError):
    field_name = "dangling index"


class EmptyPolylineError(LayoutError):
    field_name = "empty polyline"


class MembershipMismatchError(LayoutError):
    field_name = "edge_membership"


@dataclass(frozen=True)
class LandmarkLayout:
    point_names: tuple[str, ...]
    point_parts: tuple[str, ...]
    edge_names: tuple[str, ...]
    edges: tuple[tuple[int, ...], ...]
    edge_membership: dict[int, tuple[int, ...]] = field(repr=False)

    @property
    def num_points(self) -> int:
        return len(self.point_names)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def to_dict(self) -> dict[str, Any]:
        return {
            "points": [
                {"index": i, "name": n, "part": p}
                for i, (n, p) in enumerate(zip(self.point_names, self.point_parts))
            ],
            "edges": [
                {"index": i, "name": n, "point_indices": list(e)}
                for i, (n, e) in enumerate(zip(self.edge_names, self.edges))
            ],
        }

    def digest(self) -> str:
        """Stable hash of the layout, stored in checkpoints."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def compute_membership(edges, num_points: int = NUM_POINTS) -> dict[int, tuple[int, ...]]:
    membership: dict[int, set[int]] = {p: set() for p in range(num_points)}
    for e, poly in enumerate(edges):
        for p in poly:
            membership[p].add(e)
    return {p: tuple(sorted(s)) for p, s in membership.items()}


def layout_from_dict(raw: Any) -> LandmarkLayout:
    if not isinstance(raw, dict) or "points" not in raw or "edges" not in raw:
        raise LayoutParseError("expected an object with 'points' and 'edges'")
    try:
        pts = sorted(raw["points"], key=lambda d: int(d["index"]))
        names = tuple(str(d["name"]) for d in pts)
        parts = tuple(str(d["part"]) for d in pts)
        pt_idx = [int(d["index"]) for d in pts]
        eds = sorted(raw["edges"], key=lambda d: int(d["index"]))
        edge_names = tuple(str(d["name"]) for d in eds)
        edges = tuple(tuple(int(i) for i in d["point_indices"]) for d in eds)
        edge_idx = [int(d["index"]) for d in eds]
    except (KeyError, TypeError, ValueError) as exc:
        raise LayoutParseError(f"malformed entry ({exc})") from exc

    if len(names) != NUM_POINTS:
        raise PointCountError(f"expected {NUM_POINTS} points, got {len(names)}")
    if pt_idx != list(range(NUM_POINTS)):
        raise LayoutParseError("point indices must be exactly 0..99")
    if edge_idx != list(range(len(edges))):
        raise LayoutParseError("edge indices must be contiguous from 0")
    for name, poly in zip(edge_names, edges):
        if len(poly) < 2:
            raise EmptyPolylineError(f"edge '{name}' has {len(poly)} point(s), needs >= 2")
        bad = [i for i in poly if not 0 <= i < NUM_POINTS]
        if bad:
            raise DanglingIndexError(f"edge '{name}' references {bad}")
        if any(a == b for a, b in itertools.pairwise(poly)):
            raise LayoutParseError(f"edge '{name}' repeats a consecutive index")

    membership = compute_membership(edges)
    stored = raw.get("edge_membership")
    if stored is not None:
        try:
            stored = {int(k): tuple(sorted(int(e) for e in v)) for k, v in stored.items()}
        except (AttributeError, TypeError, ValueError) as exc:
            raise LayoutParseError(f"malformed edge_membership ({exc})") from exc
        for p, es in stored.items():
            if any(not 0 <= e < len(edges) for e in es):
                raise DanglingIndexError(f"edge_membership[{p}] references unknown edge")
        full = {p: stored.get(p, ()) for p in range(NUM_POINTS)}
        if full != membership:
            raise MembershipMismatchError("stored membership disagrees with edges")

    return LandmarkLayout(names, parts, edge_names, edges, membership)


def load_layout(spec_path: str | Path | None = None) -> LandmarkLayout:
    """Load and validate a layout file; ``None`` loads the bundled default."""
    if spec_path is None:
        text = resources.files("occlandmarks.resources").joinpath("layout_100.json").read_text()
    else:
        text = Path(spec_path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutParseError(str(exc)) from exc
    return layout_from_dict(raw)


def save_layout(layout: LandmarkLayout, path: str | Path) -> None:
    Path(path).write_text(json.dumps(layout.to_dict(), indent=1) + "\n")


def edges_for_landmark(layout: LandmarkLayout, p: int) -> list[int]:
    if not 0 <= p < layout.num_points:
        raise IndexError(f"landmark index {p} out of range")
    return list(layout.edge_membership[p])


_DEFAULT: LandmarkLayout | None = None


def default_layout() -> LandmarkLayout:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_layout()
    return _DEFAULT
