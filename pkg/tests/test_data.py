import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occlandmarks.data import (
    AnnotatedSample,
    SchemaError,
    apply_affine,
    box_transform,
    invert_affine,
    load_split,
    normalize_crop,
    read_annotation,
    read_manifest,
    write_annotation,
    write_manifest,
)


def _sample(rng, size=32, box=None):
    img = np.round(rng.uniform(0, 1, (size, size, 3)) * 255) / 255
    pts = rng.uniform(0, size, (100, 2))
    vis = rng.integers(0, 2, 100)
    return AnnotatedSample(img, box or (0, 0, size, size), pts, vis, "synthetic-test")


def test_identity_crop():
    rng = np.random.default_rng(0)
    s = _sample(rng)
    nc = normalize_crop(s, 32, 32)
    assert np.allclose(nc.transform, [[1, 0, 0], [0, 1, 0]])
    assert np.allclose(nc.crop.transpose(1, 2, 0), s.image, atol=1e-12)
    assert np.allclose(nc.points_crop, s.points, atol=1e-9)


def test_box_centre_maps_to_crop_centre():
    rng = np.random.default_rng(1)
    s = _sample(rng, 40, box=(5.0, 7.0, 20.0, 30.0))
    s.points[0] = (15.0, 22.0)
    nc = normalize_crop(s, 16, 24)
    assert np.allclose(nc.points_crop[0], (12.0, 8.0))


def test_double_width_box_halves_x_scale():
    t = box_transform((10.0, 0.0, 128.0, 64.0), 64, 64)
    assert t[0, 0] == pytest.approx(0.5)
    corner = apply_affine(t, [[138.0, 64.0]])[0]
    assert np.allclose(corner, (64.0, 64.0))


def test_outside_pixels_are_zero():
    s = _sample(np.random.default_rng(2), 16, box=(-16.0, 0.0, 32.0, 16.0))
    nc = normalize_crop(s, 16, 16)
    assert np.all(nc.crop[:, :, :7] == 0.0)


def test_non_positive_box_rejected():
    with pytest.raises(ValueError):
        box_transform((0, 0, 0, 10), 8, 8)


@settings(max_examples=40, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(5, 80), st.floats(5, 80))
def test_transform_reproduces_points_crop(x, y, bw, bh):
    s = _sample(np.random.default_rng(3), 24, box=(x, y, bw, bh))
    nc = normalize_crop(s, 16, 16)
    assert np.max(np.abs(apply_affine(nc.transform, s.points) - nc.points_crop)) < 1e-6
    back = apply_affine(invert_affine(nc.transform), nc.points_crop)
    assert np.allclose(back, s.points, atol=1e-9)


def test_annotation_round_trip(tmp_path):
    s = _sample(np.random.default_rng(4))
    path = write_annotation(s, tmp_path / "a.json")
    r = read_annotation(path)
    assert np.max(np.abs(r.points - s.points)) <= 5e-7
    assert np.array_equal(r.visibility, s.visibility)
    assert r.box == pytest.approx(s.box, abs=1e-6)
    assert r.domain_tag == s.domain_tag
    assert np.array_equal(r.image, s.image)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.update(points=d["points"][:99]),
        lambda d: d["visibility"].__setitem__(3, 2),
        lambda d: d["visibility"].__setitem__(3, True),
        lambda d: d.update(box=[0, 0, -1, 4]),
        lambda d: d.pop("domain"),
    ],
    ids=["99-points", "visibility-2", "visibility-bool", "bad-box", "missing-key"],
)
def test_schema_errors(tmp_path, mutate):
    path = write_annotation(_sample(np.random.default_rng(5)), tmp_path / "a.json")
    raw = json.loads(path.read_text())
    mutate(raw)
    path.write_text(json.dumps(raw))
    with pytest.raises(SchemaError):
        read_annotation(path)


def test_missing_image(tmp_path):
    path = write_annotation(_sample(np.random.default_rng(6)), tmp_path / "a.json")
    (tmp_path / "a.png").unlink()
    with pytest.raises(FileNotFoundError):
        read_annotation(path)


def test_sample_validation():
    with pytest.raises(SchemaError):
        AnnotatedSample(np.zeros((4, 4, 3)), (0, 0, 4, 4), np.zeros((99, 2)), np.ones(100))
    with pytest.raises(SchemaError):
        AnnotatedSample(np.zeros((4, 4, 3)), (0, 0, 4, 4), np.zeros((100, 2)), np.full(100, 2))


def test_manifest_and_split(tmp_path):
    rng = np.random.default_rng(7)
    entries = []
    for i, split in enumerate(["train", "train", "test"]):
        write_annotation(_sample(rng), tmp_path / f"s{i}.json")
        entries.append((f"s{i}.json", split))
    write_manifest(tmp_path, entries, {"seed": 1})
    assert read_manifest(tmp_path) == entries
    assert len(load_split(tmp_path, "train")) == 2
    assert load_split(tmp_path, "val") == []
    with pytest.raises(SchemaError):
        write_manifest(tmp_path, [("x.json", "holdout")])
