"""Fractional Poisson extension, weighted Dirichlet energy and the profile Phi_E(r).

The extension of an indicator ``chi_E`` is ``U(x, t) = int_E P_s(x - y, t) dy`` with
``P_s(x, t) = C t^s / (|x|^2 + t^2)^{(n+s)/2}``. Dirichlet energies are reported
divided by ``s C``: with that normalisation the energy of ``U`` over the whole
upper half-space equals ``I_s(E, E^c)``, so extension energies and nonlocal
interactions are measured in the same units.

``Phi`` is evaluated through the Green identity for ``div(t^{1-s} grad U) = 0``:

    int_{B_r^+} t^{1-s} |grad U|^2 / (s C) = H(r) / (s C) + I_s(E B_r, E^c),

where ``H(r)`` integrates ``t^{1-s} U dU/dr`` over the upper hemisphere of radius
``r``. That trades the singular gradient near ``{t = 0}`` for a smooth surface
integral plus interaction sums. The finite-difference energy on a sampled
field is kept for competitor comparisons.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special
from scipy.signal import fftconvolve

from ._validation import check_scalar
from .geometry import (
    Empty,
    GridSet,
    HalfSpace,
    KernelParams,
    Lattice,
    Region,
    coarsen,
    sphere_area,
)
from .interaction import (
    NONE,
    Discrete,
    QuadratureConfig,
    _outside_class,
    discretize,
    engine_for,
    ray_exterior_integral,
)

# --------------------------------------------------------------------------- kernel


class PoissonKernel:
    """``P_s(x, t) = C t^s (|x|^2 + t^2)^{-(n+s)/2}`` with ``C`` fixed by unit mass."""

    def __init__(self, params: KernelParams):
        self.params = params
        n, s = params.n, params.s
        # mass at t = 1 in polar form; the tail rho^{-1-s} is split off at 1
        f = lambda r: r ** (n - 1) * (r * r + 1.0) ** (-(n + s) / 2)  # noqa: E731
        a, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)
        b, _ = integrate.quad(lambda u: f(1.0 / u) / (u * u), 0.0, 1.0, epsabs=1e-15,
                              epsrel=1e-13, limit=200)
        self.normalization = 1.0 / (sphere_area(n) * (a + b))

    @property
    def n(self):
        return self.params.n

    @property
    def s(self):
        return self.params.s

    @property
    def dirichlet_scale(self):
        """``s C``: divides raw weighted Dirichlet energies."""
        return self.s * self.normalization

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1) + np.asarray(t, dtype=float) ** 2
        return self.normalization * np.asarray(t, dtype=float) ** self.s * r2 ** (-(self.n + self.s) / 2)

    def radial_primitive(self, t):
        """``F`` with ``int_a^b P(rho, t) rho drho = F(a) - F(b)`` in the plane."""
        C, s = self.normalization, self.s
        t = np.asarray(t, dtype=float)

        def F(rho, j):
            tj = t[j].reshape(-1, *([1] * (rho.ndim - 1))) if t.ndim else t
            with np.errstate(divide="ignore", invalid="ignore"):
                val = C * tj ** s * (rho * rho + tj * tj) ** (-s / 2) / s
            return np.where(np.isinf(rho), 0.0, val)

        return F

    def tail_mass(self, t, R):
        """Mass of ``P(., t)`` outside the ball of radius ``R``."""
        n, s = self.n, self.s
        f = lambda r: r ** (n - 1) * (r * r + t * t) ** (-(n + s) / 2)  # noqa: E731
        v, _ = integrate.quad(lambda u: f(1.0 / u) / (u * u), 0.0, 1.0 / R, epsabs=1e-16,
                              epsrel=1e-12, limit=200)
        return self.normalization * t ** s * sphere_area(n) * v

    def cell_table(self, lattice: Lattice, t: float):
        """``K[o] = int_{cell o} P(y, t) dy`` for every index offset ``o`` (centre at ``N-1``)."""
        h = lattice.h
        n = lattice.n
        ranges = [np.arange(-(k - 1), k) for k in lattice.shape]
        grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1)
        d = grid * h
        dist = np.sqrt(np.sum(d * d, axis=-1) + t * t)
        out = np.zeros(grid.shape[:-1])
        hmax = float(np.max(h))
        tiers = [(24.0 * hmax, np.inf, 1), (6.0 * hmax, 24.0 * hmax, 2),
                 (2.0 * hmax, 6.0 * hmax, 4),
                 (0.0, 2.0 * hmax, 12 if t >= 0.5 * hmax else 24)]
        for lo_d, hi_d, q in tiers:
            sel = (dist >= lo_d) & (dist < hi_d)
            if not sel.any():
                continue
            x, w = np.polynomial.legendre.leggauss(q)
            x = 0.5 * x
            w = 0.5 * w
            pts = np.stack(np.meshgrid(*([x] * n), indexing="ij"), axis=-1).reshape(-1, n)
            wt = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), axis=-1).reshape(-1, n),
                         axis=1)
            dd = d[sel][:, None, :] + pts[None] * h
            out[sel] = np.sum(self(dd, t) * wt, axis=1) * float(np.prod(h))
        if n == 2 and t < 2.0 * hmax:
            # the cells nearest the node: exact radial integration along rays
            for idx in np.argwhere(np.max(np.abs(grid), axis=-1) <= 1):
                c = grid[tuple(idx)] * h
                out[tuple(idx)] = _box_mass(self, c - 0.5 * h, c + 0.5 * h, t)
        return out


def _box_mass(kernel: PoissonKernel, lo, hi, t, panels=64, order=12):
    """``int_{[lo, hi]} P(y, t) dy`` around the origin, radial part exact (planar)."""
    th = np.linspace(0.0, 2 * math.pi, panels + 1)
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    ang = np.mod(np.arctan2(corners[:, 1], corners[:, 0]), 2 * math.pi)
    edges = np.unique(np.concatenate([th, ang]))
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1], edges[1:]
    theta = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * x
    wt = (0.5 * (b - a))[:, None] * w
    theta, wt = theta.ravel(), wt.ravel()
    d = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - 0.0) / d
        t2 = (hi - 0.0) / d
    enter = np.max(np.minimum(t1, t2), axis=-1)
    leave = np.min(np.maximum(t1, t2), axis=-1)
    enter = np.maximum(enter, 0.0)
    ok = leave > enter
    C, s = kernel.normalization, kernel.s
    F = lambda r: C * t ** s * (r * r + t * t) ** (-s / 2) / s  # noqa: E731
    val = np.where(ok, F(enter) - F(np.where(ok, leave, 1.0)), 0.0)
    return float(np.sum(val * wt))


# --------------------------------------------------------------------------- sampled field


def _ladder(h, T, levels=None, ratio=1.3):
    t0 = 0.25 * h
    if T <= t0:
        raise ValueError(f"T={T} must exceed the smallest level {t0}")
    if levels is None:
        levels = int(math.ceil(math.log(T / t0) / math.log(ratio))) + 1
    levels = check_scalar(levels, "levels", lo=3, lo_inclusive=True, integer=True)
    return np.concatenate([[0.0], np.geomspace(t0, T, levels)])


@dataclass(frozen=True, eq=False)
class ExtensionField:
    """``U`` sampled at cell centres ``x_i`` and heights ``t_k`` (``t_0 = 0`` is the trace)."""

    lattice: Lattice
    t: np.ndarray
    values: np.ndarray = field(repr=False)
    params: KernelParams
    trace: GridSet | None = None
    exterior: Region | None = None
    clip_excess: float = 0.0

    @property
    def kernel(self):
        return _kernel(self.params)

    def with_values(self, values):
        return ExtensionField(self.lattice, self.t, np.asarray(values, dtype=float), self.params,
                              self.trace, self.exterior)


_KERNELS = {}


def _kernel(params: KernelParams) -> PoissonKernel:
    key = (params.n, params.s)
    if key not in _KERNELS:
        _KERNELS[key] = PoissonKernel(KernelParams(params.n, params.s, 0.0))
    return _KERNELS[key]


def exterior_extension(kernel: PoissonKernel, points, t, region: Region, lattice: Lattice,
                       panels=16, order=8):
    """``int_{region \\ window} P(x - y, t) dy`` at planar points ``x``."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    t = np.broadcast_to(np.asarray(t, dtype=float), points.shape[:1]).copy()
    return ray_exterior_integral(points, region, lattice.lo, lattice.hi,
                                 kernel.radial_primitive(t), panels, order)


def extend(E: GridSet, T: float, levels: int | None = None, params: KernelParams | None = None,
           cfg: QuadratureConfig | None = None, exterior: Region | None = None,
           t_values=None) -> ExtensionField:
    """Sample ``U = P_s * chi_E`` on the lattice of ``E`` over a geometric ``t`` ladder.

    ``exterior`` optionally describes ``E`` outside the window (planar only); by
    default ``E`` is empty there.
    """
    params = params or KernelParams()
    lat = E.lattice
    kern = _kernel(params)
    if t_values is None:
        T = check_scalar(T, "T", lo=0.0)
        t = _ladder(float(np.max(lat.h)), T, levels)
    else:
        t = np.asarray(t_values, dtype=float)
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("t_values must start at 0 and increase")
    occ = E.occupancy.astype(float)
    vals = np.zeros((t.size,) + lat.shape)
    vals[0] = occ
    N = np.asarray(lat.shape)
    sl = tuple(slice(k - 1, 2 * k - 1) for k in lat.shape)
    centers = lat.centers().reshape(-1, lat.n)
    ext = exterior if exterior is not None and not isinstance(exterior, Empty) else None
    if ext is not None and lat.n != 2:
        raise NotImplementedError("exterior parts are supported in the plane only")
    for k in range(1, t.size):
        K = kern.cell_table(lat, float(t[k]))
        conv = fftconvolve(occ, K, mode="full")[sl] if occ.any() else np.zeros(lat.shape)
        vals[k] = conv
        if ext is not None:
            vals[k] += exterior_extension(kern, centers, t[k], ext, lat).reshape(lat.shape)
    del N
    excess = float(max(np.max(vals) - 1.0, -np.min(vals), 0.0))
    np.clip(vals, 0.0, 1.0, out=vals)
    return ExtensionField(lat, t, vals, params, E, ext, excess)


def _dual_cells(U: ExtensionField):
    """Centres, squared gradients and weights of the staggered cells between nodes."""
    lat, t, V = U.lattice, U.t, U.values
    n = lat.n
    h = lat.h
    dt = np.diff(t)
    slab = (t[1:] ** (2.0 - U.params.s) - t[:-1] ** (2.0 - U.params.s)) / (2.0 - U.params.s)
    grad2 = 0.0
    # every derivative is averaged over the 2^n parallel edges of the dual cell
    axes = list(range(1, n + 1))
    for ax in [0] + axes:
        D = np.diff(V, axis=ax) / (dt.reshape((-1,) + (1,) * n) if ax == 0 else h[ax - 1])
        for other in [0] + axes:
            if other == ax:
                continue
            D = 0.5 * (D[(slice(None),) * other + (slice(0, -1),)]
                       + D[(slice(None),) * other + (slice(1, None),)])
        grad2 = grad2 + D * D
    xc = [a[:-1] + 0.5 * np.diff(a) for a in lat.axes()]
    tc = 0.5 * (t[1:] + t[:-1])
    weight = slab.reshape((-1,) + (1,) * n) * float(np.prod(h))
    return xc, tc, grad2, weight


def weighted_dirichlet(U: ExtensionField, radius=None, box=None, normalized=False):
    """``int t^{1-s} |grad U|^2`` over the half-ball ``B_radius^+`` or an ``(x, t)`` box.

    Staggered central differences; the weight is integrated exactly over each
    ``t`` slab. With ``normalized=True`` the result is divided by ``s C``.
    """
    if (radius is None) == (box is None):
        raise ValueError("give exactly one of radius or box")
    xc, tc, g2, w = _dual_cells(U)
    grids = np.meshgrid(tc, *xc, indexing="ij")
    lat = U.lattice
    if radius is not None:
        r = check_scalar(radius, "radius", lo=0.0)
        if np.any(lat.lo > -r) or np.any(lat.hi < r) or U.t[-1] < r:
            raise ValueError(f"half-ball of radius {r} exceeds the sampled region")
        inside = sum(g * g for g in grids) < r * r
    else:
        b = np.asarray(box, dtype=float)
        if b.shape != (lat.n + 1, 2):
            raise ValueError("box must be (n+1, 2): spatial rows then the t row")
        spatial, trow = b[:-1], b[-1]
        c0 = [a[0] for a in lat.axes()]
        c1 = [a[-1] for a in lat.axes()]
        if np.any(spatial[:, 0] < np.array(c0) - 1e-12) or np.any(
                spatial[:, 1] > np.array(c1) + 1e-12) or trow[1] > U.t[-1] + 1e-12:
            raise ValueError("box exceeds the sampled region")
        inside = (grids[0] > trow[0]) & (grids[0] < trow[1])
        for k in range(lat.n):
            inside &= (grids[k + 1] > spatial[k, 0]) & (grids[k + 1] < spatial[k, 1])
    val = float(np.sum(np.where(inside, g2 * w, 0.0)))
    return val / U.kernel.dirichlet_scale if normalized else val


def _wall_term(U: ExtensionField, R, params, cfg):
    trace = U.trace if U.trace is not None else GridSet(U.lattice, U.values[0] > 0.5)
    if np.any(trace.occupancy & (trace.lattice.centers()[..., -1] <= 0)):
        raise ValueError("trace must lie in the upper half-space")
    eng = engine_for(trace.lattice, params.s, cfg)
    tg = np.argwhere(trace.occupancy)
    if tg.size == 0:
        return 0.0
    w = ball_fractions(trace.lattice, R)[tuple(tg.T)]
    phi = eng.cell_potentials(discretize(~HalfSpace(trace.n), trace.lattice), tg)
    return float(np.sum(w * phi))


def capillarity_extension_energy(U: ExtensionField, R, params: KernelParams,
                                 cfg: QuadratureConfig | None = None):
    """Normalised Dirichlet energy on ``B_R^+`` plus ``(sigma - 1) I_s(F B_R, H^c)``."""
    d = weighted_dirichlet(U, radius=R, normalized=True)
    if params.sigma == 1.0:
        return d
    return d + (params.sigma - 1.0) * _wall_term(U, R, params, cfg)


# --------------------------------------------------------------------------- competitors


def collar_cutoff(U: ExtensionField, R, eta=None):
    """Smooth factor on the nodes: 1 deep inside ``B_R^+``, 0 within ``eta`` of ``|X| = R``."""
    eta = 0.1 * R if eta is None else eta
    grids = np.meshgrid(U.t, *U.lattice.axes(), indexing="ij")
    rad = np.sqrt(sum(g * g for g in grids))
    u = np.clip((R - eta - rad) / eta, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def bump_competitor(U: ExtensionField, R, amplitude=0.1, center=None, width=None, eta=None):
    """``U + amplitude * t * bump * cutoff``: same trace, agrees with ``U`` near ``|X| = R``."""
    grids = np.meshgrid(U.t, *U.lattice.axes(), indexing="ij")
    c = np.zeros(U.lattice.n + 1) if center is None else np.asarray(center, dtype=float)
    width = 0.3 * R if width is None else width
    r2 = sum((g - ci) ** 2 for g, ci in zip(grids, c))
    bump = np.exp(-r2 / (2 * width * width))
    return U.with_values(U.values + amplitude * grids[0] * bump * collar_cutoff(U, R, eta))


def stretched_competitor(U: ExtensionField, R, factor=2.0, eta=None):
    """Blend ``U(x, factor t)`` into ``U`` away from the collar of ``|X| = R``."""
    if U.trace is None:
        raise ValueError("stretching needs the trace set")
    V = extend(U.trace, None, params=U.params, exterior=U.exterior, t_values=U.t * factor)
    cut = collar_cutoff(U, R, eta)
    return U.with_values(U.values + cut * (V.values - U.values))


def extension_optimality_check(E: GridSet, competitor: ExtensionField, R,
                               params: KernelParams | None = None,
                               cfg: QuadratureConfig | None = None, exterior=None):
    """``F(competitor, B_R^+) - F(ext E, B_R^+)`` on the competitor's nodes."""
    params = params or competitor.params
    if E.lattice != competitor.lattice or not np.array_equal(
            competitor.values[0] > 0.5, E.occupancy) or np.any(
            (competitor.values[0] != 0) & (competitor.values[0] != 1)):
        raise ValueError("competitor trace does not match the indicator of E")
    base = extend(E, None, params=params, exterior=exterior or competitor.exterior,
                  t_values=competitor.t)
    # the wall term depends only on the common trace, so only the Dirichlet parts differ
    return (weighted_dirichlet(competitor, radius=R, normalized=True)
            - weighted_dirichlet(base, radius=R, normalized=True))


# --------------------------------------------------------------------------- direct evaluation


class DirectExtension:
    """``U`` and ``dU/dr`` at arbitrary points by summing exact-ish cell integrals."""

    def __init__(self, E: GridSet, params: KernelParams, exterior: Region | None = None):
        self.E = E
        self.kernel = _kernel(params)
        self.exterior = None if exterior is None or isinstance(exterior, Empty) else exterior
        lat = E.lattice
        self.cells = lat.centers()[E.occupancy]
        self.h = lat.h

    def _sum(self, X):
        """``U`` and ``X . grad U`` at points ``X = (x, t)`` from the grid part."""
        k = self.kernel
        n, s, C = k.n, k.s, k.normalization
        p = n + s
        x, t = X[:, :n], X[:, n]
        U = np.zeros(X.shape[0])
        D = np.zeros(X.shape[0])
        if self.cells.shape[0] == 0:
            return U, D
        h = self.h
        hmax = float(np.max(h))
        rules = {}
        for q in (1, 3, 10):
            g, w = np.polynomial.legendre.leggauss(q)
            pts = np.stack(np.meshgrid(*([0.5 * g] * n), indexing="ij"), -1).reshape(-1, n) * h
            wt = np.prod(np.stack(np.meshgrid(*([0.5 * w] * n), indexing="ij"), -1).reshape(-1, n),
                         axis=1) * float(np.prod(h))
            rules[q] = (pts, wt)
        step = max(1, 4_000_000 // max(self.cells.shape[0], 1))
        for j0 in range(0, X.shape[0], step):
            j = slice(j0, j0 + step)
            d = x[j][:, None, :] - self.cells[None]
            tt = t[j][:, None]
            dist = np.sqrt(np.sum(d * d, axis=-1) + tt * tt)
            tier = np.where(dist > 5 * hmax, 1, np.where(dist > 2 * hmax, 3, 10))
            u = np.zeros(dist.shape)
            dr = np.zeros(dist.shape)
            for q, (pts, wt) in rules.items():
                sel = tier == q
                if not sel.any():
                    continue
                ii, cc = np.nonzero(sel)
                for pt, w in zip(pts, wt):
                    z = d[ii, cc] - pt
                    tz = tt[ii, 0]
                    r2 = np.sum(z * z, axis=-1) + tz * tz
                    Pv = C * tz ** s * r2 ** (-p / 2)
                    # X . grad P with X = (x, t): x.grad_x + t d_t
                    xg = -p * np.sum(x[j][ii] * z, axis=-1) / r2
                    tg = s - p * tz * tz / r2
                    u[ii, cc] += w * Pv
                    dr[ii, cc] += w * Pv * (xg + tg)
            U[j] = u.sum(axis=1)
            D[j] = dr.sum(axis=1)
        return U, D

    def value_and_radial(self, X):
        """``U`` and ``dU/dr = (X / |X|) . grad U`` at points ``X``."""
        X = np.asarray(X, dtype=float).reshape(-1, self.kernel.n + 1)
        U, D = self._sum(X)
        if self.exterior is not None:
            lat = self.E.lattice
            r = np.linalg.norm(X, axis=1)
            eps = 1e-4 * r
            unit = X / r[:, None]
            n = self.kernel.n

            def ue(Y):
                return exterior_extension(self.kernel, Y[:, :n], Y[:, n], self.exterior, lat)

            up = ue(X + eps[:, None] * unit)
            dn = ue(X - eps[:, None] * unit)
            # O(eps^2) midpoint value saves a third ray integration
            U = U + 0.5 * (up + dn)
            # D holds X . grad U; convert the exterior radial derivative alike
            D = D + r * (up - dn) / (2 * eps)
        r = np.linalg.norm(X, axis=1)
        return U, D / r


def _hemisphere_rule(n, s, r, m_u, m_phi):
    """Nodes and weights for ``int_{|X| = r, t > 0} t^{1-s} f dH^n`` in the plane case."""
    if n != 2:
        raise NotImplementedError("hemisphere quadrature is implemented for n = 2")
    x, w = special.roots_jacobi(m_u, 0.0, 1.0 - s)
    u = 0.5 * (x + 1.0)
    # int_0^1 u^{1-s} g(u) du = 2^{-(2-s)} sum w g
    wu = w * 0.5 ** (2.0 - s)
    phi = 2 * math.pi * (np.arange(m_phi) + 0.5) / m_phi
    wphi = np.full(m_phi, 2 * math.pi / m_phi)
    U, PH = np.meshgrid(u, phi, indexing="ij")
    st = np.sqrt(1.0 - U * U)
    X = r * np.stack([st * np.cos(PH), st * np.sin(PH), U], axis=-1).reshape(-1, 3)
    # dH^2 = r^2 du dphi and t^{1-s} = r^{1-s} u^{1-s}
    W = (np.outer(wu, wphi) * r ** (3.0 - s)).ravel()
    return X, W


def hemisphere_integrals(direct: DirectExtension, r, m_u=16, m_phi=128):
    """``(H, N)``: ``int t^{1-s} U dU/dr`` and ``int t^{1-s} (dU/dr)^2`` over the hemisphere."""
    X, W = _hemisphere_rule(direct.kernel.n, direct.kernel.s, r, m_u, m_phi)
    U, D = direct.value_and_radial(X)
    return float(np.sum(W * U * D)), float(np.sum(W * D * D))


# --------------------------------------------------------------------------- Phi profile


def _reach(lat: Lattice):
    """Largest radius whose upper half-ball fits in the window (the wall row may sit at 0)."""
    if lat.lo[-1] > 1e-12 * float(np.max(lat.hi - lat.lo)):
        return 0.0
    return float(min(np.min(np.minimum(-lat.lo[:-1], lat.hi[:-1])), lat.hi[-1]))


def ball_fractions(lattice: Lattice, r, sub=8):
    """Fraction of each cell inside ``B_r`` by ``sub^n`` point sampling."""
    g = (np.arange(sub) + 0.5) / sub - 0.5
    offs = np.stack(np.meshgrid(*([g] * lattice.n), indexing="ij"), -1).reshape(-1, lattice.n)
    c = lattice.centers()
    out = np.zeros(lattice.shape)
    for o in offs:
        p = c + o * lattice.h
        out += np.sum(p * p, axis=-1) < r * r
    return out / offs.shape[0]


@dataclass(frozen=True)
class PhiProfile:
    radii: np.ndarray
    phi: np.ndarray
    dirichlet_part: np.ndarray
    wetting_part: np.ndarray
    errors: np.ndarray
    boundary_term: np.ndarray
    sigma: float
    s: float
    n: int

    @property
    def recomposed(self):
        return self.dirichlet_part + (self.sigma - 1.0) * self.wetting_part

    def monotone_flags(self, k=3.0):
        """``Phi(r_{j+1}) >= Phi(r_j) - k (err_j + err_{j+1})`` for consecutive radii."""
        e = self.errors
        return self.phi[1:] >= self.phi[:-1] - k * (e[1:] + e[:-1])

    def to_csv(self):
        lines = ["r,phi,G,J,err"]
        for row in zip(self.radii, self.phi, self.dirichlet_part, self.wetting_part, self.errors):
            lines.append(",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in asdict(self).items()}


def _phi_raw(E: GridSet, radii, params, cfg, exterior, m_u, m_phi):
    """Per radius: (H/(sC) + I(EB_r, E^c), I(EB_r, H^c), quadrature error, N/(sC))."""
    lat = E.lattice
    kern = _kernel(params)
    eng = engine_for(lat, params.s, cfg)
    ext = exterior if exterior is not None else Empty(lat.n)
    e_disc = Discrete(E.occupancy, _outside_class(ext, lat) if not isinstance(ext, Empty) else NONE,
                      ext)
    comp = e_disc.complement()
    tg = np.argwhere(E.occupancy)
    hc = discretize(~HalfSpace(lat.n), lat)
    if tg.size:
        # cells of E lie in H, so E^c potentials split into E^c H and H^c parts
        phi_comp = eng.cell_potentials(comp, tg)
        phi_hc = eng.cell_potentials(hc, tg)
    else:
        phi_comp = phi_hc = np.zeros(0)
    direct = DirectExtension(E, params, exterior)
    out = []
    for r in radii:
        w = ball_fractions(lat, r)[tuple(tg.T)] if tg.size else np.zeros(0)
        Ic = float(np.sum(w * phi_comp))
        J = float(np.sum(w * phi_hc))
        if tg.size or direct.exterior is not None:
            H, Nn = hemisphere_integrals(direct, r, m_u, m_phi)
            H2, _ = hemisphere_integrals(direct, r, max(4, m_u // 2), max(16, m_phi // 2))
        else:
            H = Nn = H2 = 0.0
        sc = kern.dirichlet_scale
        G = H / sc + Ic
        qerr = abs(H - H2) / sc + eng.table.max_rel_error * Ic
        out.append((G, J, qerr, Nn / sc))
    return out


def phi_profile(E: GridSet, radii, params: KernelParams, cfg: QuadratureConfig | None = None,
                exterior: Region | None = None, fidelity=True, m_u=16, m_phi=128) -> PhiProfile:
    """``Phi_E(r) = G(r) + (sigma - 1) J(r)`` on a radius ladder.

    ``G(r) = r^{s-n} int_{B_r^+} t^{1-s} |grad U|^2 / (s C)`` and
    ``J(r) = r^{s-n} I_s(B_r E, H^c)``. Errors add the quadrature estimates and,
    with ``fidelity``, the change under 2x2 majority coarsening of ``E``.
    """
    radii = np.asarray(radii, dtype=float).ravel()
    if radii.size == 0 or np.any(radii <= 0):
        raise ValueError("radii must be positive")
    lat = E.lattice
    if np.any(E.occupancy & (lat.centers()[..., -1] <= 0)):
        raise ValueError("E must lie in the upper half-space")
    reach = _reach(lat)
    if np.any(radii >= reach):
        raise ValueError(f"radii must stay inside the window (max {reach:g})")
    n, s = params.n, params.s
    rows = _phi_raw(E, radii, params, cfg, exterior, m_u, m_phi)
    scale = radii ** (s - n)
    G = np.array([r[0] for r in rows]) * scale
    J = np.array([r[1] for r in rows]) * scale
    err = np.array([r[2] for r in rows]) * scale
    N = np.array([r[3] for r in rows])
    phi = G + (params.sigma - 1.0) * J
    if fidelity and all(k % 2 == 0 for k in lat.shape):
        Ec = coarsen(E, 2)
        Ec = Ec.with_occupancy(Ec.occupancy & (Ec.lattice.centers()[..., -1] > 0))
        rc = _phi_raw(Ec, radii, params, cfg, exterior, m_u, m_phi)
        phic = (np.array([r[0] for r in rc]) + (params.sigma - 1.0) * np.array(
            [r[1] for r in rc])) * scale
        err = err + np.abs(phi - phic)
    return PhiProfile(radii, phi, G, J, err, N, params.sigma, s, n)


def normal_gradient_boundary_integral(U, r, params: KernelParams | None = None,
                                      exterior: Region | None = None, m_u=16, m_phi=128):
    """``int_{|X| = r, t > 0} t^{1-s} (dU/dr)^2 dH^n / (s C)`` for the extension of a set.

    ``U`` is an :class:`ExtensionField` (its trace and exterior are used) or a
    GridSet. Values and derivatives come from direct summation, not from the
    sampled ladder.
    """
    if isinstance(U, ExtensionField):
        E, params, exterior = U.trace, params or U.params, exterior or U.exterior
        if E is None:
            raise ValueError("field has no trace set")
    else:
        E = U
        params = params or KernelParams()
    lat = E.lattice
    reach = _reach(lat)
    r = check_scalar(r, "r", lo=0.0)
    if r >= reach - 2 * float(np.max(lat.h)):
        raise ValueError(f"r={r} too close to the window boundary")
    if not E.occupancy.any() and (exterior is None or isinstance(exterior, Empty)):
        return 0.0
    direct = DirectExtension(E, params, exterior)
    _, N = hemisphere_integrals(direct, r, m_u, m_phi)
    return N / _kernel(params).dirichlet_scale


__all__ = [
    "PoissonKernel", "ExtensionField", "PhiProfile", "DirectExtension", "extend",
    "weighted_dirichlet", "capillarity_extension_energy", "phi_profile",
    "normal_gradient_boundary_integral", "extension_optimality_check", "bump_competitor",
    "stretched_competitor", "collar_cutoff", "ball_fractions", "hemisphere_integrals",
    "exterior_extension",
]
