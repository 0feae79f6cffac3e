import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from occlandmarks.decode import (
    aggregate_edge_evidence,
    membership_matrix,
    reweight_and_decode,
    soft_argmax,
)
from occlandmarks.layout import default_layout


def _oracle_decode(h, mask, temperature):
    """Explicit cell-by-cell softmax expectation for one channel (float64)."""
    rows, cols = len(h), len(h[0])
    logits = [[h[v][u] * mask[v][u] / temperature for u in range(cols)] for v in range(rows)]
    top = max(max(r) for r in logits)
    weights = [[math.exp(x - top) for x in r] for r in logits]
    z = sum(sum(r) for r in weights)
    eu = sum(weights[v][u] * u for v in range(rows) for u in range(cols)) / z
    ev = sum(weights[v][u] * v for v in range(rows) for u in range(cols)) / z
    return eu, ev


def test_aggregate_edge_evidence_examples():
    lay = default_layout()
    e = torch.rand(16, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    a = aggregate_edge_evidence(e, lay)
    jaw = lay.edge_membership[0][0]
    assert torch.equal(a[0], e[jaw])
    ea, eb = lay.edge_membership[48]
    assert torch.allclose(a[48], e[ea] + e[eb])
    assert torch.equal(a[68], torch.ones(8, 8, dtype=torch.float64))
    with pytest.raises(ValueError):
        aggregate_edge_evidence(torch.zeros(15, 8, 8), lay)


def test_membership_matrix_rows():
    lay = default_layout()
    m = membership_matrix(lay)
    assert m.shape == (100, 16)
    for p in range(100):
        assert set(torch.nonzero(m[p]).flatten().tolist()) == set(lay.edge_membership[p])


def test_near_delta():
    h = torch.zeros(1, 5, 5, dtype=torch.float64)
    h[0, 3, 1] = 50.0
    one = torch.ones_like(h)
    r = reweight_and_decode(h, one, one, 1.0, stride=4)
    assert torch.allclose(r.heatmap_coords[0], torch.tensor([1.0, 3.0], dtype=torch.float64), atol=1e-3)


def test_uniform_map_exact_centre():
    h = torch.full((1, 5, 5), 0.7, dtype=torch.float64)
    one = torch.ones_like(h)
    r = reweight_and_decode(h, one, one, 1.0, stride=4)
    assert r.heatmap_coords[0].tolist() == [2.0, 2.0]
    assert r.coords[0].tolist() == [10.0, 10.0]


def test_mask_suppresses_second_peak():
    h = torch.zeros(1, 5, 5, dtype=torch.float64)
    h[0, 0, 0] = h[0, 4, 4] = 5.0
    point = torch.ones_like(h)
    point[0, 3:, 3:] = 0.0
    evidence = torch.ones_like(h)
    r = reweight_and_decode(h, point, evidence, 1.0)
    eu, ev = _oracle_decode(h[0].tolist(), point[0].tolist(), 1.0)
    assert r.heatmap_coords[0].tolist() == pytest.approx([eu, ev], abs=1e-12)
    assert eu < 1.0 and ev < 1.0


def test_decode_oracle_random_8x8():
    rng = np.random.default_rng(0)
    for _ in range(120):
        h = rng.normal(0, 2, (1, 8, 8))
        p = rng.uniform(0, 1, (1, 8, 8))
        a = rng.uniform(0, 2, (1, 8, 8))
        t = float(rng.uniform(0.1, 2.0))
        r = reweight_and_decode(torch.from_numpy(h), torch.from_numpy(p), torch.from_numpy(a), t)
        eu, ev = _oracle_decode(h[0].tolist(), (p * a)[0].tolist(), t)
        assert abs(r.heatmap_coords[0, 0].item() - eu) < 1e-6
        assert abs(r.heatmap_coords[0, 1].item() - ev) < 1e-6


def test_errors():
    h = torch.zeros(1, 4, 4)
    one = torch.ones_like(h)
    with pytest.raises(ValueError):
        reweight_and_decode(h, one, one, 0.0)
    bad = h.clone()
    bad[0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        reweight_and_decode(bad, one, one, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-20, 20))
def test_shift_invariance_of_product(seed, c):
    g = torch.Generator().manual_seed(seed)
    h = torch.randn(3, 6, 6, dtype=torch.float64, generator=g)
    p = 0.2 + 0.8 * torch.rand(3, 6, 6, dtype=torch.float64, generator=g)
    one = torch.ones_like(h)
    base = reweight_and_decode(h, p, one, 1.0)
    # shift the product h * p by c: choose h' = h + c / p
    shifted = reweight_and_decode(h + c / p, p, one, 1.0)
    assert torch.allclose(base.attention, shifted.attention, atol=1e-9)
    assert torch.allclose(base.coords, shifted.coords, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_all_ones_mask_is_plain_soft_argmax_and_attention_normalized(seed):
    g = torch.Generator().manual_seed(seed)
    h = torch.randn(4, 7, 5, dtype=torch.float64, generator=g)
    one = torch.ones_like(h)
    r = reweight_and_decode(h, one, one, 0.5, stride=2)
    att, uv = soft_argmax(h, 0.5)
    assert torch.allclose(r.attention, att)
    assert torch.allclose(r.heatmap_coords, uv)
    assert torch.allclose(r.attention.sum(dim=(-2, -1)), torch.ones(4, dtype=torch.float64), atol=1e-5)
    assert (r.attention >= 0).all()
    assert (r.coords[..., 0] >= 0).all() and (r.coords[..., 0] <= 5 * 2).all()
    assert (r.coords[..., 1] >= 0).all() and (r.coords[..., 1] <= 7 * 2).all()


def test_gradient_of_coords_matches_finite_differences():
    g = torch.Generator().manual_seed(5)
    h = torch.randn(1, 3, 3, dtype=torch.float64, generator=g, requires_grad=True)
    one = torch.ones(1, 3, 3, dtype=torch.float64)
    w = torch.tensor([0.7, -1.3], dtype=torch.float64)
    (reweight_and_decode(h, one, one, 1.0).heatmap_coords[0] @ w).backward()
    eps = 1e-6
    for v in range(3):
        for u in range(3):
            hp, hm = h.detach().clone(), h.detach().clone()
            hp[0, v, u] += eps
            hm[0, v, u] -= eps
            num = ((reweight_and_decode(hp, one, one).heatmap_coords[0] @ w)
                   - (reweight_and_decode(hm, one, one).heatmap_coords[0] @ w)) / (2 * eps)
            assert abs(num.item() - h.grad[0, v, u].item()) < 1e-4
