import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fraccap.geometry import (
    Ball, Box, Empty, GridSet, HalfSpace, KernelParams, Lattice, Sector, boolean_ops, coarsen,
    l1_distance, rasterize, refine, region_from_dict, rescale, translate,
)

WIN = [[-1.0, 1.0], [0.0, 1.0]]


def test_kernel_params_validation():
    assert KernelParams(2, 0.5, 0.0).p == 2.5
    for bad in [dict(s=0.0), dict(s=1.0), dict(sigma=1.0), dict(sigma=-1.0), dict(n=0)]:
        with pytest.raises(ValueError):
            KernelParams(**{**dict(n=2, s=0.5, sigma=0.0), **bad})


def test_rasterize_centre_rule_and_measure():
    gs = rasterize(Box([0.0, 0.0], [0.5, 0.5]), WIN, (8, 4))
    assert gs.count == 4
    assert gs.measure == pytest.approx(0.25)


def test_sector_membership_and_angle():
    s = Sector(0.0, math.pi / 3)
    assert s.angle == pytest.approx(math.pi / 3)
    pts = np.array([[1.0, 0.1], [0.1, 1.0], [-1.0, 0.1]])
    assert s.contains(pts).tolist() == [True, False, False]


def test_region_from_dict_round_trip():
    spec = {"op": "intersect", "args": [{"shape": "ball", "r": 1.0}, {"shape": "halfspace"}]}
    r = region_from_dict(spec)
    pts = np.array([[0.0, 0.5], [0.0, -0.5], [0.9, 0.9]])
    assert r.contains(pts).tolist() == [True, False, False]
    assert not region_from_dict({"shape": "empty"}).contains(pts).any()
    with pytest.raises(ValueError):
        region_from_dict({"shape": "torus"})


def test_empty_region():
    e = Empty(2)
    assert e.crossings(np.zeros((3, 2)), np.ones((3, 2))).shape == (3, 0)


@given(st.floats(0.05, 3.0), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_rescale_and_translate_are_exact(r, dx, dy):
    gs = rasterize(Ball(0.4, (0.1, 0.5)), WIN, (16, 8))
    sc = rescale(gs, r)
    assert np.array_equal(sc.occupancy, gs.occupancy)
    assert sc.measure == pytest.approx(gs.measure / r ** 2)
    tr = translate(gs, (dx, dy))
    assert tr.measure == pytest.approx(gs.measure)
    assert np.allclose(tr.lattice.window, gs.lattice.window - np.array([[dx], [dy]]))


@given(st.integers(0, 2 ** 32 - 1))
def test_boolean_ops_algebra(seed):
    rng = np.random.default_rng(seed)
    lat = Lattice.make(WIN, (8, 4))
    a = GridSet(lat, rng.random(lat.shape) < 0.5)
    b = GridSet(lat, rng.random(lat.shape) < 0.5)
    union = boolean_ops(a, b, "union")
    inter = boolean_ops(a, b, "intersect")
    assert union.count + inter.count == a.count + b.count
    assert l1_distance(a, b) == pytest.approx(union.measure - inter.measure)
    assert boolean_ops(a, a.complement(), "intersect").count == 0


@given(st.integers(0, 2 ** 32 - 1))
def test_refine_preserves_set_and_coarsen_inverts(seed):
    rng = np.random.default_rng(seed)
    lat = Lattice.make(WIN, (6, 4))
    a = GridSet(lat, rng.random(lat.shape) < 0.5)
    fine = refine(a, 2)
    assert fine.measure == pytest.approx(a.measure)
    assert np.array_equal(coarsen(fine, 2).occupancy, a.occupancy)


@given(st.integers(0, 2 ** 32 - 1))
def test_save_load_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    lat = Lattice.make(WIN, (7, 3))
    a = GridSet(lat, rng.random(lat.shape) < 0.5)
    path = tmp_path_factory.mktemp("gs") / "a.bin"
    a.save(path)
    b = GridSet.load(path)
    assert b.lattice == a.lattice and np.array_equal(b.occupancy, a.occupancy)


REGIONS = [
    HalfSpace(2), Ball(0.7, (0.2, 0.3)), Box([-0.3, 0.1], [0.4, 0.6]),
    Sector(0.2, 2.0, apex=(0.1, -0.1)), Ball(0.5) & HalfSpace(2), ~Ball(0.5) | Box([0, 0], [1, 1]),
]


@pytest.mark.parametrize("region", REGIONS, ids=lambda r: type(r).__name__)
@given(st.integers(0, 2 ** 32 - 1))
def test_crossings_bracket_membership_changes(region, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.5, 1.5, (20, 2))
    th = rng.uniform(0, 2 * math.pi, 20)
    d = np.stack([np.cos(th), np.sin(th)], -1)
    c = region.crossings(x, d)
    rho = np.linspace(1e-3, 6.0, 600)
    for i in range(20):
        inside = region.contains(x[i] + rho[:, None] * d[i])
        flips = rho[1:][inside[1:] != inside[:-1]]
        cand = c[i][np.isfinite(c[i]) & (c[i] > 0)]
        for f in flips:
            # every membership change lies within one sampling step of a crossing
            assert cand.size and np.min(np.abs(cand - f)) <= rho[1] - rho[0] + 1e-9
