import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from fraccap.geometry import Ball, Box, GridSet, HalfSpace, KernelParams, Lattice, rasterize
from fraccap.interaction import (
    QuadratureConfig, box_exterior_point_potential, cell_pair_table, halfspace_cell_potential,
    interaction, interaction_mc,
)

P = KernelParams(2, 0.5, 0.0)
CFG = QuadratureConfig()


def tent_oracle(d, s):
    """``I_s`` of two unit squares at integer offset ``d`` via the tent-function reduction."""
    p = 2.0 + s

    def f(v, u):
        return (1 - abs(u - d[0])) * (1 - abs(v - d[1])) * (u * u + v * v) ** (-p / 2)

    # split at the kinks of both tents so the quadrature sees smooth pieces
    total = 0.0
    for ua, ub in [(d[0] - 1, d[0]), (d[0], d[0] + 1)]:
        for va, vb in [(d[1] - 1, d[1]), (d[1], d[1] + 1)]:
            v, _ = integrate.dblquad(f, ua, ub, va, vb, epsabs=1e-12, epsrel=1e-10)
            total += v
    return total


@pytest.mark.parametrize("d", [(1, 0), (1, 1), (2, 0), (3, 1), (0, 5)])
def test_cell_pair_table_matches_tent_oracle(d):
    lat = Lattice.make([[0.0, 8.0], [0.0, 8.0]], (8, 8))
    tab = cell_pair_table(lat, 0.5, CFG)
    w = float(tab.lookup(np.array(d)))
    ref = tent_oracle(d, 0.5)
    assert abs(w - ref) <= CFG.rel_tol * ref
    assert float(tab.lookup(np.array([0, 0]))) == 0.0


def test_cell_pair_table_scales_with_cell_size():
    a = cell_pair_table(Lattice.make([[0.0, 4.0], [0.0, 4.0]], (8, 8)), 0.5, CFG)
    b = cell_pair_table(Lattice.make([[0.0, 8.0], [0.0, 8.0]], (8, 8)), 0.5, CFG)
    assert np.allclose(b.values, a.values * 2.0 ** 1.5, rtol=1e-13)
    assert np.array_equal(a.values, a.values[::-1, ::-1])


def test_box_exterior_point_formula_against_angular_quadrature():
    lo, hi = np.array([-1.0, 0.0]), np.array([1.0, 1.0])
    x = np.array([[0.3, 0.2], [-0.8, 0.9]])
    s = 0.5
    got = box_exterior_point_potential(x, lo, hi, s)
    for k, pt in enumerate(x):
        def exit_dist(th):
            d = np.array([math.cos(th), math.sin(th)])
            with np.errstate(divide="ignore"):
                t = np.where(d > 0, (hi - pt) / d, np.where(d < 0, (lo - pt) / d, np.inf))
            return float(np.min(t))
        corners = sorted(math.atan2(c[1] - pt[1], c[0] - pt[0]) % (2 * math.pi)
                         for c in [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])])
        ref, _ = integrate.quad(lambda th: exit_dist(th) ** (-s) / s, 0, 2 * math.pi,
                                points=corners, limit=200, epsabs=1e-12)
        assert got[k] == pytest.approx(ref, rel=1e-9)


def test_halfspace_closed_form_against_nested_quadrature():
    s = 0.5
    lat = Lattice.make([[0.0, 2.0], [0.25, 1.25]], (2, 2))
    got = float(halfspace_cell_potential(lat, s, lower=True)[0, 0])

    def point(z):
        # int over y_2 < 0 of |x - y|^{-(2+s)}: integrate y_1 in closed form
        k = math.sqrt(math.pi) * math.gamma((1 + s) / 2) / math.gamma((2 + s) / 2)
        v, _ = integrate.quad(lambda w: k * (z - w) ** (-1 - s), -np.inf, 0.0)
        return v

    ref, _ = integrate.quad(point, 0.25, 0.75)
    assert got == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_scaling_law_for_disjoint_balls(lam):
    a, b = Ball(0.3, (-0.5, 0.5)), Ball(0.25, (0.4, 0.6))
    base = interaction(a, b, P, CFG)
    sc = interaction(Ball(0.3 * lam, (-0.5 * lam, 0.5 * lam)),
                     Ball(0.25 * lam, (0.4 * lam, 0.6 * lam)), P, CFG)
    assert sc.value == pytest.approx(lam ** (2 - 0.5) * base.value, rel=2 * CFG.rel_tol)


def _random_pair(seed, lat):
    rng = np.random.default_rng(seed)
    lab = rng.random(lat.shape)
    a = lab < 0.3
    b = (lab > 0.6) & ~a
    return GridSet(lat, a), GridSet(lat, b)


@given(st.integers(0, 2 ** 32 - 1))
def test_symmetry_and_additivity(seed):
    lat = Lattice.make([[-1.0, 1.0], [0.0, 1.0]], (12, 6))
    a, b = _random_pair(seed, lat)
    if not a.count or not b.count:
        return
    ab = interaction(a, b, P, CFG).value
    assert interaction(b, a, P, CFG).value == pytest.approx(ab, rel=1e-12)
    rng = np.random.default_rng(seed + 1)
    split = rng.random(lat.shape) < 0.5
    b1 = GridSet(lat, b.occupancy & split)
    b2 = GridSet(lat, b.occupancy & ~split)
    parts = interaction(a, b1, P, CFG).value + interaction(a, b2, P, CFG).value
    assert parts == pytest.approx(ab, rel=1e-12)


def test_overlapping_sets_rejected():
    lat = Lattice.make([[-1.0, 1.0], [0.0, 1.0]], (8, 4))
    a = rasterize(Box([-1, 0], [0.1, 1]), lat, None)
    with pytest.raises(ValueError):
        interaction(a, a, P, CFG)


def test_quadrature_agrees_with_monte_carlo():
    lat = Lattice.make([[-1.0, 1.0], [0.0, 1.0]], (32, 16))
    a = rasterize(Ball(0.3, (-0.4, 0.5)), lat, None)
    b = rasterize(Box([0.1, 0.1], [0.8, 0.9]), lat, None)
    q = interaction(a, b, P, CFG)
    mc = interaction_mc(a, b, P, 400_000, seed=3)
    assert abs(q.value - mc.value) <= q.error_estimate + mc.error_estimate + CFG.rel_tol * q.value


def test_unbounded_partner_against_importance_sampling():
    lat = Lattice.make([[-1.0, 1.0], [0.0, 1.0]], (32, 16))
    a = rasterize(Ball(0.3, (0.0, 0.5)), lat, None)
    q = interaction(a, ~HalfSpace(2), P, CFG)
    mc = interaction_mc(a, ~HalfSpace(2), P, 400_000, seed=5, method="importance")
    assert abs(q.value - mc.value) <= q.error_estimate + mc.error_estimate + CFG.rel_tol * q.value
