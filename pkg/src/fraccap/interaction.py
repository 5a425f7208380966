"""Fractional interaction ``I_s(A, B) = iint_{A x B} |x - y|^{-(n+s)} dx dy``.

Grid sets interact through a translation-invariant table of cell-pair integrals,
so every interaction between two occupancy masks on one lattice is an exact
finite sum ``sum_{i in A} sum_{j in B} W(j - i)``. Parts of the second argument
that lie outside the lattice window are handled analytically when they are the
whole exterior, the exterior half below or above ``x_n = 0``; anything else is
covered by a tail bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from ._validation import check_scalar
from .geometry import (
    Complement,
    Empty,
    GridSet,
    Intersection,
    KernelParams,
    Lattice,
    Region,
    Union,
    sphere_area,
)

UPPER = "U"
LOWER = "L"
ALL = frozenset({UPPER, LOWER})
NONE = frozenset()


@dataclass(frozen=True)
class QuadratureConfig:
    rel_tol: float = 1e-3
    max_subdivision_depth: int = 4
    farfield_ratio: float = 2.0
    tail_radius: float | None = None
    region_resolution: int = 64
    exterior_nodes: int = 6

    def __post_init__(self):
        check_scalar(self.rel_tol, "rel_tol", lo=0.0)
        check_scalar(self.max_subdivision_depth, "max_subdivision_depth", lo=1,
                     lo_inclusive=True, integer=True)
        check_scalar(self.farfield_ratio, "farfield_ratio", lo=2.0, lo_inclusive=True)
        if self.tail_radius is not None:
            check_scalar(self.tail_radius, "tail_radius", lo=0.0)
        check_scalar(self.region_resolution, "region_resolution", lo=2, lo_inclusive=True,
                     integer=True)
        check_scalar(self.exterior_nodes, "exterior_nodes", lo=2, lo_inclusive=True,
                     integer=True)

    def table_key(self):
        return (self.rel_tol, self.max_subdivision_depth, self.farfield_ratio)


@dataclass(frozen=True)
class InteractionResult:
    value: float
    error_estimate: float = 0.0
    tail_bound: float = 0.0
    converged: bool = True

    def __add__(self, other):
        return InteractionResult(self.value + other.value,
                                 self.error_estimate + other.error_estimate,
                                 self.tail_bound + other.tail_bound,
                                 self.converged and other.converged)

    def scaled(self, c):
        c = float(c)
        return InteractionResult(c * self.value, abs(c) * self.error_estimate,
                                 abs(c) * self.tail_bound, self.converged)

    def to_dict(self):
        return asdict(self)


ZERO = InteractionResult(0.0)


# --------------------------------------------------------------------------- cell-pair table


def _kernel(z, p):
    return np.sum(z * z, axis=-1) ** (-0.5 * p)


def _midpoint_correction(d, hb, p):
    """Second-order term of the box-pair average of ``|z|^-p`` about the midpoint."""
    r2 = np.sum(d * d, axis=-1)
    lap = -p * r2 ** (-0.5 * p - 1.0) * np.sum(hb * hb) + p * (p + 2.0) * r2 ** (
        -0.5 * p - 2.0) * np.sum(d * d * hb * hb, axis=-1)
    return lap / 12.0


_CHILD_WEIGHTS = {-1: 1.0, 0: 2.0, 1: 1.0}


def _child_offsets(n):
    grid = np.array(np.meshgrid(*([[-1, 0, 1]] * n), indexing="ij")).reshape(n, -1).T
    w = np.prod(np.vectorize(_CHILD_WEIGHTS.get)(grid), axis=1)
    return grid.astype(float), w


def _box_pairs(d, hb, p, cfg, depth):
    """Integrals of ``|x-y|^-p`` over box pairs with centre offsets ``d`` and sides ``hb``.

    Returns ``(value, error)`` arrays. Boxes never overlap: every offset has some
    ``|d_k| >= hb_k``.
    """
    vol2 = float(np.prod(hb)) ** 2
    dist = np.sqrt(np.sum(d * d, axis=-1))
    mid = vol2 * dist ** (-p)
    corr = vol2 * _midpoint_correction(d, hb, p)
    far = (dist > cfg.farfield_ratio * np.linalg.norm(hb)) & (
        np.abs(corr) <= cfg.rel_tol * mid)
    val = np.where(far, mid, 0.0)
    err = np.where(far, np.abs(corr), 0.0)
    rest = np.flatnonzero(~far)
    if rest.size == 0:
        return val, err
    n = d.shape[1]
    offs, w = _child_offsets(n)
    if depth >= cfg.max_subdivision_depth:
        # 2-point Gauss per axis on each box; pair differences collapse to 3^n offsets
        dr = d[rest][:, None, :] + offs[None] * (hb / math.sqrt(3.0))
        r = np.maximum(np.sqrt(np.sum(dr * dr, axis=-1)), 0.25 * float(np.min(hb)))
        tens = vol2 * np.sum(w * r ** (-p), axis=1) / 4.0 ** n
        val[rest] = tens
        err[rest] = np.abs(tens - mid[rest])
        return val, err
    child = (d[rest][:, None, :] + offs[None] * (0.5 * hb)).reshape(-1, n)
    cv, ce = _box_pairs(child, 0.5 * hb, p, cfg, depth + 1)
    val[rest] = (cv.reshape(rest.size, -1) * w).sum(axis=1)
    err[rest] = (ce.reshape(rest.size, -1) * w).sum(axis=1)
    return val, err


def _touching_pairs(hb, p, cfg):
    """Integrals for cell pairs sharing a face, edge or corner.

    Halving both cells maps a touching pair to 2^n x 2^n sub-pairs; those that
    still touch are scaled copies of the same family, so the values solve a
    small linear system and no clamping of the singular kernel is needed.
    """
    n = hb.size
    offs = np.array(np.meshgrid(*([[-1, 0, 1]] * n), indexing="ij")).reshape(n, -1).T
    offs = offs[np.any(offs != 0, axis=1)]
    key = {tuple(o): k for k, o in enumerate(offs)}
    child, w = _child_offsets(n)
    scale = 2.0 ** (p - 2 * n)
    A = np.zeros((len(offs), len(offs)))
    far_d, far_w, far_row = [], [], []
    for k, o in enumerate(offs):
        for c, wc in zip((2 * o[None] + child).astype(int), w):
            if np.all(np.abs(c) <= 1):
                A[k, key[tuple(c)]] += wc * scale
            else:
                far_d.append(c * 0.5 * hb)
                far_w.append(wc)
                far_row.append(k)
    # only a handful of entries: resolve them well below the table tolerance
    fine = QuadratureConfig(cfg.rel_tol * 0.1, cfg.max_subdivision_depth + 1, cfg.farfield_ratio)
    fv, fe = _box_pairs(np.array(far_d), 0.5 * hb, p, fine, 1)
    rhs = np.zeros(len(offs))
    rerr = np.zeros(len(offs))
    np.add.at(rhs, far_row, np.asarray(far_w) * fv)
    np.add.at(rerr, far_row, np.asarray(far_w) * fe)
    M = np.eye(len(offs)) - A
    return offs, np.linalg.solve(M, rhs), np.linalg.solve(M, rerr)


@lru_cache(maxsize=16)
def _unit_table(n, s, ratios, shape, cfg_key):
    cfg = QuadratureConfig(*cfg_key)
    hb = np.asarray(ratios, dtype=float)
    p = n + s
    ranges = [np.arange(-(k - 1), k) for k in shape]
    grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, n)
    separated = np.any(np.abs(grid) > 1, axis=1)
    val = np.zeros(grid.shape[0])
    err = np.zeros(grid.shape[0])
    v, e = _box_pairs(grid[separated] * hb, hb, p, cfg, 0)
    val[separated] = v
    err[separated] = e
    tshape = tuple(2 * k - 1 for k in shape)
    val = val.reshape(tshape)
    err = err.reshape(tshape)
    centre = np.asarray(shape) - 1
    offs, tv, te = _touching_pairs(hb, p, cfg)
    for o, a, b in zip(offs, tv, te):
        idx = tuple(centre + o)
        if all(0 <= i < m for i, m in zip(idx, tshape)):
            val[idx] = a
            err[idx] = b
    # exact symmetry W(d) = W(-d)
    flip = tuple(slice(None, None, -1) for _ in range(n))
    val = (val + val[flip]) * 0.5
    err = (err + err[flip]) * 0.5
    val.setflags(write=False)
    err.setflags(write=False)
    return val, err


@dataclass(frozen=True, eq=False)
class CellPairTable:
    """``W[d + (N-1)]`` = integral of the kernel over two cells at index offset ``d``."""

    values: np.ndarray
    errors: np.ndarray
    shape: tuple

    @property
    def max_rel_error(self):
        mask = self.values > 0
        return float(np.max(self.errors[mask] / self.values[mask])) if mask.any() else 0.0

    def lookup(self, offsets):
        idx = offsets + (np.asarray(self.shape) - 1)
        return self.values[tuple(np.moveaxis(idx, -1, 0))]

    def row(self, index):
        """``W(i - index)`` for every cell ``i`` of the lattice."""
        sl = tuple(slice(k - 1 - c, 2 * k - 1 - c) for k, c in zip(self.shape, index))
        return self.values[sl]


def cell_pair_table(lattice: Lattice, s: float, cfg: QuadratureConfig) -> CellPairTable:
    h = lattice.h
    scale = float(h[0])
    ratios = tuple(float(x) for x in np.round(h / scale, 12))
    val, err = _unit_table(lattice.n, float(s), ratios, lattice.shape, cfg.table_key())
    c = scale ** (lattice.n - s)
    return CellPairTable(val * c, err * c, lattice.shape)


# --------------------------------------------------------------------------- potentials


def potential(table: CellPairTable, sources, targets, chunk=2_000_000, errors=False):
    """``phi(t) = sum_{j in sources} W(j - t)`` for each target index.

    With ``errors=True`` the same sum is taken over the error table.
    """
    sources = np.asarray(sources, dtype=np.int64).reshape(-1, len(table.shape))
    targets = np.asarray(targets, dtype=np.int64).reshape(-1, len(table.shape))
    out = np.zeros(targets.shape[0])
    if sources.shape[0] == 0 or targets.shape[0] == 0:
        return out
    strides = np.array([int(np.prod([2 * k - 1 for k in table.shape[i + 1:]]))
                        for i in range(len(table.shape))], dtype=np.int64)
    base = (np.asarray(table.shape) - 1) @ strides
    sflat = sources @ strides
    tflat = targets @ strides
    flat = (table.errors if errors else table.values).ravel()
    step = max(1, chunk // sources.shape[0])
    for k in range(0, targets.shape[0], step):
        idx = sflat[None, :] - tflat[k:k + step, None] + base
        out[k:k + step] = flat[idx].sum(axis=1)
    return out


def halfspace_cell_potential(lattice: Lattice, s: float, lower: bool):
    """Exact ``I_s(cell, {x_n < 0})`` (``lower``) or ``I_s(cell, {x_n > 0})`` for every cell.

    Cells are assumed not to straddle ``x_n = 0``; the part of a cell on the
    wrong side is clipped away.
    """
    n = lattice.n
    kappa = math.pi ** ((n - 1) / 2) * math.gamma((1 + s) / 2) / math.gamma((n + s) / 2)
    xn = lattice.axes()[-1]
    hn = lattice.h[-1]
    a, b = xn - 0.5 * hn, xn + 0.5 * hn
    if not lower:
        a, b = -b, -a
    a = np.maximum(a, 0.0)
    b = np.maximum(b, 0.0)
    col = kappa / (s * (1.0 - s)) * (b ** (1.0 - s) - a ** (1.0 - s))
    col = col * float(np.prod(lattice.h[:-1]))
    return np.broadcast_to(col, lattice.shape).copy()


def _cos_power_primitive(x, s):
    """``int_0^x cos(t)^s dt`` for ``|x| <= pi/2``."""
    a, b = 0.5, 0.5 * (s + 1.0)
    return np.sign(x) * 0.5 * special.beta(a, b) * special.betainc(a, b, np.sin(x) ** 2)


def box_exterior_point_potential(points, lo, hi, s):
    """``int_{R^2 \\ box} |x - y|^-(2+s) dy`` for points strictly inside a planar box."""
    x, y = points[..., 0], points[..., 1]
    total = np.zeros(x.shape)
    # (distance to face, tangential offsets to the two ends of the face)
    faces = [
        (lo[0] - x, hi[1] - y, lo[1] - y),
        (x - lo[0], lo[1] - y, hi[1] - y),
        (hi[0] - x, lo[1] - y, hi[1] - y),
        (hi[1] - y, lo[0] - x, hi[0] - x),
        (y - lo[1], lo[0] - x, hi[0] - x),
    ][1:]
    for dist, t0, t1 in faces:
        a = np.arctan2(t0, dist)
        b = np.arctan2(t1, dist)
        total = total + dist ** (-s) * np.abs(_cos_power_primitive(b, s) - _cos_power_primitive(a, s))
    return total / s


def _cell_nodes(m, s, at_wall):
    """Quadrature nodes/weights on [0, 1] for ``g(u)`` (smooth) or ``u^-s g(u)``."""
    if at_wall:
        x, w = special.roots_jacobi(m, 0.0, -s)
        u = 0.5 * (x + 1.0)
        return u, w * 0.5 ** (1.0 - s)  # integrates u^-s g(u)
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


def box_exterior_potential(lattice: Lattice, s: float, m: int = 6):
    """``I_s(cell, R^2 \\ window)`` for every cell of a planar lattice.

    Tensor Gauss rule per cell; in cells touching the window edge the rule
    along the edge normal is Gauss-Jacobi so the ``dist^-s`` blow-up is exact.
    """
    if lattice.n != 2:
        raise ValueError("exterior potential of the window is implemented for n = 2")
    lo, hi, h = lattice.lo, lattice.hi, lattice.h
    cx, cy = lattice.axes()
    X, Y = np.meshgrid(cx, cy, indexing="ij")
    out = np.zeros(lattice.shape)
    ug, wg = _cell_nodes(m, s, False)
    uj, wj = _cell_nodes(m, s, True)
    # split the potential by face so each face's singular factor gets its own rule
    face_specs = [
        (0, -1), (0, +1), (1, -1), (1, +1),
    ]
    for axis, side in face_specs:
        other = 1 - axis
        coords = [X, Y]
        normal_c = coords[axis]
        edge = lo[axis] if side < 0 else hi[axis]
        dist_center = (normal_c - edge) * (-side)  # > 0 inside
        touching = np.isclose(dist_center, 0.5 * h[axis])
        for at_wall in (False, True):
            sel = touching if at_wall else ~touching
            if not sel.any():
                continue
            un, wn = (uj, wj) if at_wall else (ug, wg)
            # normal offset measured from the face-side cell edge, in cell units
            d0 = dist_center[sel] - 0.5 * h[axis]
            acc = np.zeros(d0.shape)
            for ui, wi in zip(un, wn):
                dist = d0 + ui * h[axis]
                for vt, wt in zip(ug, wg):
                    tang = coords[other][sel] - 0.5 * h[other] + vt * h[other]
                    t0 = lo[other] - tang
                    t1 = hi[other] - tang
                    ang = np.abs(_cos_power_primitive(np.arctan2(t1, dist), s)
                                 - _cos_power_primitive(np.arctan2(t0, dist), s))
                    if at_wall:
                        # weight already carries (u h)^-s / h^-s; dist = u h here
                        acc = acc + wi * wt * h[axis] ** (-s) * ang
                    else:
                        acc = acc + wi * wt * dist ** (-s) * ang
            out[sel] += acc
    return out * lattice.cell_volume / s


def _theta_rule(points, lo, hi, panels, order):
    """Composite Gauss angles per point, with panel breaks at the box-corner directions."""
    m = points.shape[0]
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    ang = np.mod(np.arctan2(corners[None, :, 1] - points[:, None, 1],
                            corners[None, :, 0] - points[:, None, 0]), 2 * math.pi)
    edges = np.concatenate([np.broadcast_to(np.linspace(0, 2 * math.pi, panels + 1), (m, panels + 1)),
                            ang], axis=1)
    edges.sort(axis=1)
    a, b = edges[:, :-1], edges[:, 1:]
    x, w = np.polynomial.legendre.leggauss(order)
    theta = (0.5 * (a + b))[..., None] + (0.5 * (b - a))[..., None] * x
    weight = (0.5 * (b - a))[..., None] * w
    return theta.reshape(m, -1), weight.reshape(m, -1)


def ray_exterior_integral(points, region: Region, lo, hi, primitive, panels=32, order=8,
                          chunk=64):
    """``int_{region \\ box} k(|y - x|) dy`` for planar points ``x``.

    ``primitive(rho, j)`` must return ``F`` with ``int_a^b k(rho) rho drho =
    F(a) - F(b)`` for the points indexed by ``j`` (shape ``(len(j), 1, 1)``
    broadcasting) and ``F(inf) = 0``. Each ray from ``x`` is split at the box
    entry and exit and at the exact boundary crossings of ``region``, so the
    radial integral is exact and only the angle is discretised. Points may lie
    outside the box.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.zeros(points.shape[0])
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    for j0 in range(0, points.shape[0], chunk):
        j = np.arange(j0, min(points.shape[0], j0 + chunk))
        x = points[j]
        theta, wt = _theta_rule(x, lo, hi, panels, order)
        m, R = theta.shape
        d = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        xr = np.broadcast_to(x[:, None, :], d.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - xr) / d
            t2 = (hi - xr) / d
            par = d == 0
            inside_slab = (xr >= lo) & (xr <= hi)
            tmin = np.where(par, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
            tmax = np.where(par, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
        t_in = np.clip(np.max(tmin, axis=-1), 0.0, None)
        t_out = np.clip(np.min(tmax, axis=-1), 0.0, None)
        hit = t_out > t_in
        t_in = np.where(hit, t_in, 0.0)
        t_out = np.where(hit, t_out, 0.0)
        flat_x = xr.reshape(-1, 2)
        flat_d = d.reshape(-1, 2)
        c = region.crossings(flat_x, flat_d).reshape(m, R, -1)
        c = np.where(np.isfinite(c) & (c > 0), c, np.inf)
        br = np.concatenate([np.zeros((m, R, 1)), t_in[..., None], t_out[..., None], c,
                             np.full((m, R, 1), np.inf)], axis=-1)
        br.sort(axis=-1)
        a, b = br[..., :-1], br[..., 1:]
        live = np.isfinite(a) & (b > a)
        probe = np.where(np.isfinite(b), 0.5 * (a + b), 2.0 * a + 1.0)
        probe = np.where(live, probe, 0.0)
        pts = xr[..., None, :] + probe[..., None] * d[..., None, :]
        in_box = np.all((pts > lo) & (pts < hi), axis=-1)
        inside = region.contains(pts.reshape(-1, 2)).reshape(a.shape) & live & ~in_box
        Fa = primitive(np.where(inside, a, 1.0), j)
        Fb = primitive(np.where(inside & np.isfinite(b), b, np.inf), j)
        contrib = np.where(inside, Fa - Fb, 0.0).sum(axis=-1)
        out[j] = np.sum(contrib * wt, axis=1)
    return out


def kernel_primitive(s):
    """Radial primitive of ``|z|^{-(2+s)}`` in the plane."""

    def F(rho, j):
        with np.errstate(divide="ignore"):
            return np.where(np.isinf(rho), 0.0, rho ** (-s) / s)

    return F


def region_exterior_potential(lattice: Lattice, region: Region, s, targets, panels=32,
                              order=8):
    """Cell-averaged ``I_s(cell, region \\ window)`` for target cells, and an error.

    The average uses a 2x2 Gauss rule; the error is its distance to the centre value.
    """
    if lattice.n != 2:
        raise NotImplementedError("ray integration of exterior regions is planar")
    targets = np.asarray(targets).reshape(-1, 2)
    c = lattice.lo + (targets + 0.5) * lattice.h
    F = kernel_primitive(s)
    centre = ray_exterior_integral(c, region, lattice.lo, lattice.hi, F, panels, order)
    g = 0.5 / math.sqrt(3.0)
    acc = np.zeros_like(centre)
    for ox in (-g, g):
        for oy in (-g, g):
            p = c + np.array([ox, oy]) * lattice.h
            acc += 0.25 * ray_exterior_integral(p, region, lattice.lo, lattice.hi, F,
                                                panels, order)
    vol = lattice.cell_volume
    return acc * vol, np.abs(acc - centre) * vol


# --------------------------------------------------------------------------- discretisation


@dataclass(frozen=True, eq=False)
class Discrete:
    """Window occupancy plus a description of the part outside the window.

    ``outside`` is a subset of ``{U, L}`` (exterior above / below ``x_n = 0``) or
    ``None`` when the exterior part is none of these; ``region`` describes the
    whole set analytically and is used to integrate such exterior parts.
    """

    mask: np.ndarray
    outside: frozenset | None
    region: Region | None = None
    lattice: Lattice | None = None

    def _make(self, mask, outside, region):
        if outside is None and region is not None and self.lattice is not None:
            # combination alone cannot tell; the combined region often can
            outside = _outside_class(region, self.lattice)
        return Discrete(mask, outside, region, self.lattice)

    def complement(self):
        return self._make(~self.mask, None if self.outside is None else ALL - self.outside,
                          None if self.region is None else Complement(self.region))

    def __and__(self, other):
        return self._make(self.mask & other.mask, _combine(self.outside, other.outside, "and"),
                          _combine_regions(self.region, other.region, Intersection))

    def __or__(self, other):
        return self._make(self.mask | other.mask, _combine(self.outside, other.outside, "or"),
                          _combine_regions(self.region, other.region, Union))

    @property
    def bounded(self):
        return self.outside == NONE


def _combine_regions(a, b, op):
    if a is None or b is None:
        return None
    return op(a, b)


def _combine(a, b, how):
    if how == "and":
        if a == NONE or b == NONE:
            return NONE
        if a is None or b is None:
            return a if b == ALL else (b if a == ALL else None)
        return a & b
    if a == ALL or b == ALL:
        return ALL
    if a is None or b is None:
        return b if a == NONE else (a if b == NONE else None)
    return a | b


def _probe_points(lattice: Lattice):
    n = lattice.n
    center = 0.5 * (lattice.lo + lattice.hi)
    half = 0.5 * (lattice.hi - lattice.lo)
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(512, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = []
    for factor in (1.0 + 1e-9, 1.001, 1.5, 4.0, 1e3):
        # push each direction to the boundary of the scaled box
        t = np.min(np.abs(half / np.where(dirs == 0, 1e-300, dirs)), axis=1)
        pts.append(center + dirs * (t * factor)[:, None] * (1 + 1e-12))
    pts = np.concatenate(pts)
    scale = float(np.max(np.abs(lattice.window)))
    return pts[np.abs(pts[:, -1]) > 1e-9 * max(scale, 1.0)]


def _outside_class(region: Region, lattice: Lattice):
    if region.bounding_box() is not None:
        bb = region.bounding_box()
        if np.all(bb[:, 0] >= lattice.lo) and np.all(bb[:, 1] <= lattice.hi):
            return NONE
    pts = _probe_points(lattice)
    inside = region.contains(pts)
    up = pts[:, -1] > 0
    if inside.all():
        return ALL
    if not inside.any():
        return NONE
    if np.array_equal(inside, up):
        return frozenset({UPPER})
    if np.array_equal(inside, ~up):
        return frozenset({LOWER})
    return None


def discretize(obj, lattice: Lattice) -> Discrete:
    if isinstance(obj, Discrete):
        return obj
    if isinstance(obj, GridSet):
        if obj.lattice != lattice:
            raise ValueError("GridSets must share one window and resolution")
        return Discrete(obj.occupancy, NONE, Empty(lattice.n), lattice)
    if isinstance(obj, Region):
        if obj.n != lattice.n:
            raise ValueError("region dimension does not match the lattice")
        return Discrete(obj.contains(lattice.centers()), _outside_class(obj, lattice), obj, lattice)
    raise TypeError(f"cannot discretize {type(obj).__name__}")


def region_lattice(regions, resolution, pad=0.0):
    """Square-celled lattice covering the bounded members of ``regions``."""
    boxes = [r.bounding_box() for r in regions if r.bounding_box() is not None]
    if not boxes:
        raise ValueError("at least one argument must be bounded")
    lo = np.min([b[:, 0] for b in boxes], axis=0)
    hi = np.max([b[:, 1] for b in boxes], axis=0)
    ext = hi - lo
    lo = lo - pad * ext
    hi = hi + pad * ext
    h = float(np.max(hi - lo)) / resolution
    shape = tuple(int(k) for k in np.maximum(2, np.ceil((hi - lo) / h - 1e-9)))
    hi = lo + h * np.asarray(shape)
    return Lattice(np.stack([lo, hi], axis=1), shape)


# --------------------------------------------------------------------------- engine


class InteractionEngine:
    """Caches kernel tables and exterior potentials for one lattice and order ``s``."""

    def __init__(self, lattice: Lattice, s: float, cfg: QuadratureConfig | None = None):
        self.lattice = lattice
        self.s = float(s)
        self.cfg = cfg or QuadratureConfig()
        self.table = cell_pair_table(lattice, self.s, self.cfg)
        self._ext = {}
        self._ext_err = {}

    @property
    def n(self):
        return self.lattice.n

    def potential(self, source_mask, targets):
        return potential(self.table, np.argwhere(source_mask), targets)

    def _exterior(self, which):
        """Per-cell interaction with the outside-window part ``which`` (plus error)."""
        if which in self._ext:
            return self._ext[which], self._ext_err[which]
        lat, s = self.lattice, self.s
        if which == ALL:
            if self.n != 2:
                raise NotImplementedError
            m = self.cfg.exterior_nodes
            fine = box_exterior_potential(lat, s, m)
            coarse = box_exterior_potential(lat, s, max(2, m // 2))
            val, err = fine, np.abs(fine - coarse)
        else:
            other = ALL - which
            val, err = self._half_exterior(which)
            oval, oerr = self._half_exterior(other)
            far = self._opposite(other)
            if far.any():
                # cells inside the half-space itself: whole exterior minus the other half
                tot, terr = self._exterior(ALL)
                val = np.where(far, tot - oval, val)
                err = np.where(far, terr + oerr, err)
        self._ext[which] = val
        self._ext_err[which] = err
        return val, err

    def _region_exterior(self, region, targets):
        """Per-target ``I_s(cell, region \\ window)`` by ray integration (planar).

        When the region covers the exterior right next to a cell, the singular
        part is taken from the exact whole-exterior potential and only the
        region's complement is ray-integrated.
        """
        lat = self.lattice
        targets = np.asarray(targets).reshape(-1, 2)
        c = lat.lo + (targets + 0.5) * lat.h
        # nearest exterior points across each of the two closest window edges
        span = lat.hi - lat.lo
        eps = 1e-9 * float(np.max(span))
        covered = np.ones(targets.shape[0], dtype=bool)
        near_any = np.zeros(targets.shape[0], dtype=bool)
        for ax in range(2):
            q = c.copy()
            dlo = c[:, ax] - lat.lo[ax]
            dhi = lat.hi[ax] - c[:, ax]
            q[:, ax] = np.where(dlo < dhi, lat.lo[ax] - eps, lat.hi[ax] + eps)
            near = np.minimum(dlo, dhi) < 2.0 * lat.h[ax]
            near_any |= near
            covered &= ~near | region.contains(q)
        covered &= near_any
        val = np.zeros(targets.shape[0])
        err = np.zeros(targets.shape[0])
        if (~covered).any():
            v, e = region_exterior_potential(lat, region, self.s, targets[~covered])
            val[~covered], err[~covered] = v, e
        if covered.any():
            tot, terr = self._exterior(ALL)
            sel = tuple(targets[covered].T)
            v, e = region_exterior_potential(lat, Complement(region), self.s, targets[covered])
            val[covered] = tot[sel] - v
            err[covered] = terr[sel] + e
        return val, err

    def _exterior_for(self, which, mask):
        """Exterior potential usable on ``mask``, or ``None`` if only a bound is available."""
        if which is None:
            return None
        if self.n == 2:
            return self._exterior(which)
        if which != ALL and not np.any(mask & ~self._opposite(which)):
            return self._half_exterior(which)
        return None

    def _opposite(self, which):
        """Cells on the far side of ``x_n = 0`` from the exterior half ``which``."""
        centers = self.lattice.centers()[..., -1]
        return centers > 0 if which == frozenset({LOWER}) else centers < 0

    def _half_exterior(self, which):
        """Closed-form half-space potential minus its in-window collar.

        Valid on the cells of ``self._opposite(which)``; zero elsewhere.
        """
        lat = self.lattice
        lower = which == frozenset({LOWER})
        target = self._opposite(which)
        collar = self._opposite(ALL - which)
        closed = halfspace_cell_potential(lat, self.s, lower)
        grid = np.zeros(lat.shape)
        err = np.zeros(lat.shape)
        tg = np.argwhere(target)
        src = np.argwhere(collar)
        grid[target] = potential(self.table, src, tg)
        err[target] = potential(self.table, src, tg, errors=True)
        return np.where(target, closed - grid, 0.0), err

    def _tail_bound(self, mask_a):
        """Bound on the interaction of ``mask_a`` with anything outside the window."""
        if self.n == 2:
            val, err = self._exterior(ALL)
            return float(np.sum((val + err)[mask_a]))
        lat = self.lattice
        c = lat.centers()
        d = np.min(np.minimum(c - lat.lo, lat.hi - c) - 0.5 * lat.h, axis=-1)
        d = d[mask_a]
        if np.any(d <= 0):
            return math.inf
        return float(np.sum(lat.cell_volume * sphere_area(self.n) * d ** (-self.s) / self.s))

    def term(self, a: Discrete, b: Discrete) -> InteractionResult:
        """``I_s(a, b)`` for a bounded ``a`` and any ``b`` (both discretised here)."""
        if not a.bounded:
            raise ValueError("first argument must be bounded within the window")
        if np.any(a.mask & b.mask):
            raise ValueError("interaction needs disjoint sets (overlapping cells found)")
        if not a.mask.any() or (not b.mask.any() and b.outside == NONE):
            return ZERO
        src = np.argwhere(b.mask)
        tgt = np.argwhere(a.mask)
        pairs = float(np.sum(potential(self.table, src, tgt))) if src.size else 0.0
        value = pairs
        err = float(np.sum(potential(self.table, src, tgt, errors=True))) if src.size else 0.0
        tail = 0.0
        if b.outside is None and self.n == 2 and b.region is not None:
            v, e = self._region_exterior(b.region, tgt)
            value += float(np.sum(v))
            err += float(np.sum(e))
        elif b.outside != NONE:
            ev = self._exterior_for(b.outside, a.mask)
            if ev is None:
                tail = self._tail_bound(a.mask)
            else:
                value += float(np.sum(ev[0][a.mask]))
                err += float(np.sum(ev[1][a.mask]))
        converged = err <= self.cfg.rel_tol * max(value, 1e-300) or value == 0.0
        return InteractionResult(value, err, tail, bool(converged))

    def cell_potentials(self, b: Discrete, targets=None):
        """Per-cell ``I_s(cell, b)`` for target cells (default: every cell)."""
        if targets is None:
            targets = np.argwhere(np.ones(self.lattice.shape, dtype=bool))
        out = potential(self.table, np.argwhere(b.mask), targets)
        if b.outside == NONE:
            return out
        mask = np.zeros(self.lattice.shape, dtype=bool)
        mask[tuple(targets.T)] = True
        ev = self._exterior_for(b.outside, mask)
        if ev is not None:
            return out + ev[0][tuple(targets.T)]
        if self.n == 2 and b.region is not None:
            return out + self._region_exterior(b.region, targets)[0]
        raise ValueError("exterior part of the set cannot be evaluated cell by cell")


@lru_cache(maxsize=8)
def _engine(lattice_key, s, cfg):
    shape, flat = lattice_key
    lat = Lattice(np.asarray(flat).reshape(len(shape), 2), shape)
    return InteractionEngine(lat, s, cfg)


def engine_for(lattice: Lattice, s: float, cfg: QuadratureConfig | None = None):
    cfg = cfg or QuadratureConfig()
    return _engine(lattice.key(), float(s), cfg)


def _choose_lattice(a, b, cfg):
    lats = [x.lattice for x in (a, b)
            if isinstance(x, GridSet) or (isinstance(x, Discrete) and x.lattice is not None)]
    if lats:
        if len(lats) == 2 and lats[0] != lats[1]:
            raise ValueError("GridSets must share one window and resolution")
        return lats[0]
    return region_lattice([a, b], cfg.region_resolution)


def interaction(a, b, params: KernelParams, cfg: QuadratureConfig | None = None
                ) -> InteractionResult:
    """``I_s(a, b)`` for disjoint GridSets and/or Regions."""
    cfg = cfg or QuadratureConfig()
    lattice = _choose_lattice(a, b, cfg)
    eng = engine_for(lattice, params.s, cfg)
    da = discretize(a, lattice)
    db = discretize(b, lattice)
    if not da.bounded and not db.bounded:
        if cfg.tail_radius is None:
            raise ValueError("both arguments unbounded; set tail_radius to trim one")
        trim = discretize(_ball(cfg.tail_radius, lattice.n), lattice)
        da = Discrete(da.mask & trim.mask, NONE)
    elif not da.bounded:
        da, db = db, da
    elif db.bounded and isinstance(a, GridSet) and isinstance(b, GridSet):
        # canonical order so I(a, b) and I(b, a) run the identical sum
        if np.packbits(da.mask).tobytes() > np.packbits(db.mask).tobytes():
            da, db = db, da
    return eng.term(da, db)


def _ball(r, n):
    from .geometry import Ball

    return Ball(r, n=n)


# --------------------------------------------------------------------------- oracles


def _sampler(obj, n):
    """Bounding box, measure-free membership for a GridSet or bounded Region."""
    if isinstance(obj, GridSet):
        idx = obj.indices()
        if idx.size == 0:
            return None, obj.contains
        lat = obj.lattice
        lo = lat.lo + idx.min(axis=0) * lat.h
        hi = lat.lo + (idx.max(axis=0) + 1) * lat.h
        return np.stack([lo, hi], axis=1), obj.contains
    bb = obj.bounding_box()
    if bb is None:
        raise ValueError("Monte-Carlo oracle needs bounded inputs (or method='importance')")
    return bb, obj.contains


def interaction_mc(a, b, params: KernelParams, samples: int, seed: int,
                   method: str = "uniform") -> InteractionResult:
    """Monte-Carlo estimate of ``I_s(a, b)``; ``error_estimate`` is 3 standard errors.

    ``uniform`` samples both bounding boxes. ``importance`` samples ``x`` uniformly
    in the GridSet ``a`` and ``y = x + z`` with ``|z|`` drawn from the kernel's own
    radial law beyond the distance from ``x`` to the edge of its cell, so ``b``
    may be unbounded; it requires ``b`` to contain no point of ``a``'s cells.
    """
    samples = check_scalar(samples, "samples", lo=0, integer=True)
    rng = np.random.default_rng(seed)
    n, p, s = params.n, params.p, params.s
    if method == "uniform":
        bba, ina = _sampler(a, n)
        bbb, inb = _sampler(b, n)
        if bba is None or bbb is None:
            return ZERO
        va = float(np.prod(bba[:, 1] - bba[:, 0]))
        vb = float(np.prod(bbb[:, 1] - bbb[:, 0]))
        total = 0.0
        total2 = 0.0
        done = 0
        while done < samples:
            m = min(1_000_000, samples - done)
            x = bba[:, 0] + rng.random((m, n)) * (bba[:, 1] - bba[:, 0])
            y = bbb[:, 0] + rng.random((m, n)) * (bbb[:, 1] - bbb[:, 0])
            keep = ina(x) & inb(y)
            f = np.zeros(m)
            f[keep] = _kernel(x[keep] - y[keep], p) * va * vb
            total += f.sum()
            total2 += (f * f).sum()
            done += m
    elif method == "importance":
        if not isinstance(a, GridSet):
            raise ValueError("importance sampling needs a GridSet first argument")
        idx = a.indices()
        if idx.size == 0:
            return ZERO
        lat = a.lattice
        inb = b.contains
        meas = a.measure
        omega = sphere_area(n)
        total = total2 = 0.0
        done = 0
        while done < samples:
            m = min(500_000, samples - done)
            cells = idx[rng.integers(0, idx.shape[0], m)]
            u = rng.random((m, n))
            x = lat.lo + (cells + u) * lat.h
            eps = np.min(np.minimum(u, 1.0 - u) * lat.h, axis=1)
            eps = np.maximum(eps, 1e-300)
            dirs = rng.normal(size=(m, n))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            rho = eps * (1.0 - rng.random(m)) ** (-1.0 / s)
            y = x + dirs * rho[:, None]
            f = inb(y) * (meas * omega / s) * eps ** (-s)
            total += f.sum()
            total2 += (f * f).sum()
            done += m
    else:
        raise ValueError(f"unknown method {method!r}")
    mean = total / samples
    var = max(total2 / samples - mean * mean, 0.0)
    return InteractionResult(mean, 3.0 * math.sqrt(var / samples), 0.0, True)


def tail_interaction_bound(a, params: KernelParams, R: float) -> float:
    """Upper bound on ``I_s(a, B_R^c)`` for ``a`` inside ``B_{R/2}``."""
    R = check_scalar(R, "R", lo=0.0)
    if isinstance(a, GridSet):
        idx = a.indices()
        if idx.size == 0:
            return 0.0
        lat = a.lattice
        corners = np.array(np.meshgrid(*([[0, 1]] * lat.n), indexing="ij")).reshape(lat.n, -1).T
        pts = lat.lo + (idx[:, None, :] + corners[None]) * lat.h
        reach = float(np.max(np.linalg.norm(pts, axis=-1)))
        meas = a.measure
    else:
        bb = a.bounding_box()
        if bb is None:
            raise ValueError("tail bound needs a bounded set")
        corners = np.array(np.meshgrid(*bb, indexing="ij")).reshape(a.n, -1).T
        reach = float(np.max(np.linalg.norm(corners, axis=-1)))
        from .geometry import rasterize

        meas = rasterize(a, bb, 256).measure if np.all(bb[:, 1] > bb[:, 0]) else 0.0
    if meas == 0.0:
        return 0.0
    if reach > 0.5 * R * (1 + 1e-12):
        raise ValueError(f"set reaches radius {reach:.4g} > R/2 = {R / 2:.4g}")
    return meas * sphere_area(params.n) * (0.5 * R) ** (-params.s) / params.s
