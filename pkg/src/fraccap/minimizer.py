"""Volume-constrained annealing of the capillarity energy and blow-up diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator

from ._validation import check_scalar
from .energies import capillarity_energy
from .extension import phi_profile
from .geometry import GridSet, KernelParams, Lattice
from .interaction import ALL, QuadratureConfig, engine_for


@dataclass(frozen=True)
class AnnealConfig:
    volume_cells: int
    initial_temperature: float | None = None
    cooling_ratio: float = 0.95
    sweeps: int = 200
    moves_per_sweep: int | None = None
    quench_sweeps: int = 20
    seed: int = 0
    move_kind: str = "swap-pair"

    def __post_init__(self):
        check_scalar(self.volume_cells, "volume_cells", lo=0, lo_inclusive=True, integer=True)
        check_scalar(self.cooling_ratio, "cooling_ratio", lo=0.0, hi=1.0)
        check_scalar(self.sweeps, "sweeps", lo=0, lo_inclusive=True, integer=True)
        check_scalar(self.quench_sweeps, "quench_sweeps", lo=0, lo_inclusive=True, integer=True)
        if self.initial_temperature is not None:
            check_scalar(self.initial_temperature, "initial_temperature", lo=0.0)
        if self.moves_per_sweep is not None:
            check_scalar(self.moves_per_sweep, "moves_per_sweep", lo=0, integer=True)
        if self.move_kind != "swap-pair":
            raise ValueError(f"unknown move_kind {self.move_kind!r}; only 'swap-pair' exists")


@dataclass
class MinimizeResult:
    droplet: GridSet
    energy: float
    trace: list = field(repr=False)
    initial_temperature: float = 0.0

    def trace_csv(self):
        lines = ["sweep,temperature,energy,best_energy,acceptance"]
        for row in self.trace:
            lines.append("{},{:.17g},{:.17g},{:.17g},{:.6f}".format(*row))
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- potentials


def _conv(mask, table):
    """``phi(i) = sum_j mask(j) W(j - i)`` for every cell (``W`` is even)."""
    if not mask.any():
        return np.zeros(mask.shape)
    sl = tuple(slice(k - 1, 2 * k - 1) for k in mask.shape)
    return fftconvolve(mask.astype(float), table.values, mode="full")[sl]


class _State:
    """Per-cell ``f = phi_omega - 2 phi_E + sigma V`` for the current droplet."""

    def __init__(self, container: GridSet, occ, params: KernelParams, cfg):
        lat = container.lattice
        if lat.n != 2:
            raise NotImplementedError("the minimizer is planar")
        self.container = container.occupancy
        self.params = params
        eng = engine_for(lat, params.s, cfg)
        self.table = eng.table
        ext, _ = eng._exterior(ALL)
        self.V = _conv(~self.container, self.table) + ext
        self.phi_w = _conv(self.container, self.table)
        self.occ = np.array(occ, dtype=bool)
        self.refresh()

    def refresh(self):
        phi_e = _conv(self.occ, self.table)
        self.f = self.phi_w - 2.0 * phi_e + self.params.sigma * self.V
        # C = sum_E (phi_w - phi_E + sigma V) = sum_E (f + phi_E)
        self.energy = float(np.sum((self.f + phi_e)[self.occ]))

    def pair(self, a, b):
        d = np.asarray(a) - np.asarray(b) + (np.asarray(self.table.shape) - 1)
        return float(self.table.values[tuple(d)])

    def swap_delta(self, a, b):
        return -self.f[a] + self.f[b] + 2.0 * self.pair(a, b)

    def apply(self, a, b, delta):
        self.occ[a] = False
        self.occ[b] = True
        self.f -= 2.0 * (self.table.row(b) - self.table.row(a))
        self.energy += delta


def _frontier(occ, container):
    """Cells of ``E`` next to ``container \\ E`` and cells of ``container \\ E`` next to ``E``."""
    free = container & ~occ
    pad_o = np.pad(occ, 1)
    pad_f = np.pad(free, 1)
    near_o = np.zeros_like(occ)
    near_f = np.zeros_like(occ)
    for ax in range(2):
        for sh in (-1, 1):
            near_o |= np.roll(pad_o, sh, axis=ax)[1:-1, 1:-1]
            near_f |= np.roll(pad_f, sh, axis=ax)[1:-1, 1:-1]
    return np.argwhere(occ & near_f), np.argwhere(free & near_o)


def _has_neighbour(mask, idx):
    i, j = idx
    n0, n1 = mask.shape
    return ((i > 0 and mask[i - 1, j]) or (i + 1 < n0 and mask[i + 1, j])
            or (j > 0 and mask[i, j - 1]) or (j + 1 < n1 and mask[i, j + 1]))


def triangle_init(container: GridSet, volume_cells: int) -> GridSet:
    """The ``volume_cells`` container cells closest in ``|x_1 - c| + x_2`` to the wall
    centre ``c``: a 45-degree wedge standing on the lowest container row."""
    lat = container.lattice
    occ = container.occupancy
    if volume_cells > int(occ.sum()):
        raise ValueError(f"volume_cells={volume_cells} exceeds the {int(occ.sum())} "
                         "container cells")
    cen = lat.centers()
    rows = np.flatnonzero(occ.any(axis=0))
    if rows.size == 0:
        return GridSet.empty(lat)
    wall = cen[:, rows[0], 0][occ[:, rows[0]]]
    c = float(np.mean(wall))
    key = np.abs(cen[..., 0] - c) + (cen[..., 1] - lat.lo[1])
    flat = np.flatnonzero(occ.ravel())
    order = flat[np.lexsort((flat, key.ravel()[flat]))]
    out = np.zeros(lat.size, dtype=bool)
    out[order[:volume_cells]] = True
    return GridSet(lat, out.reshape(lat.shape))


def _sweep(state: _State, rng, T, moves, greedy=False):
    occ, cont = state.occ, state.container
    inner, outer = _frontier(occ, cont)
    if inner.shape[0] == 0 or outer.shape[0] == 0:
        return 0
    ia = rng.integers(0, inner.shape[0], moves)
    ib = rng.integers(0, outer.shape[0], moves)
    u = rng.random(moves)
    accepted = 0
    for k in range(moves):
        a = tuple(inner[ia[k]])
        b = tuple(outer[ib[k]])
        # frontier lists go stale as moves land; skip entries that no longer qualify
        if not occ[a] or occ[b]:
            continue
        if not _has_neighbour(cont & ~occ, a) or not _has_neighbour(occ, b):
            continue
        d = state.swap_delta(a, b)
        if d < 0 or (not greedy and T > 0 and u[k] < math.exp(-d / T)):
            state.apply(a, b, d)
            accepted += 1
    return accepted


def minimize(container: GridSet, params: KernelParams, anneal: AnnealConfig,
             cfg: QuadratureConfig | None = None, initial: GridSet | None = None
             ) -> MinimizeResult:
    """Metropolis annealing over volume-preserving swaps, then a greedy quench."""
    cfg = cfg or QuadratureConfig()
    lat = container.lattice
    total = container.count
    vol = anneal.volume_cells
    if vol > total:
        raise ValueError(f"volume_cells={vol} exceeds the {total} container cells")
    if vol == 0 or vol == total:
        E = GridSet(lat, container.occupancy if vol else np.zeros(lat.shape, dtype=bool))
        e = capillarity_energy(E, container, params, cfg).total if vol else 0.0
        return MinimizeResult(E, float(e), [(0, 0.0, float(e), float(e), 0.0)])
    E0 = initial if initial is not None else triangle_init(container, vol)
    if E0.count != vol or np.any(E0.occupancy & ~container.occupancy):
        raise ValueError("initial set must lie in the container with volume_cells cells")
    rng = np.random.default_rng(anneal.seed)
    state = _State(container, E0.occupancy, params, cfg)
    T = anneal.initial_temperature
    if T is None:
        inner, outer = _frontier(state.occ, state.container)
        ia = rng.integers(0, inner.shape[0], 100)
        ib = rng.integers(0, outer.shape[0], 100)
        probes = [abs(state.swap_delta(tuple(inner[i]), tuple(outer[j])))
                  for i, j in zip(ia, ib)]
        T = float(np.median(probes))
    T0 = T
    best = state.energy
    best_occ = state.occ.copy()
    trace = [(0, T, state.energy, best, 0.0)]
    step = 0
    for sweep in range(anneal.sweeps + anneal.quench_sweeps):
        greedy = sweep >= anneal.sweeps
        inner, _ = _frontier(state.occ, state.container)
        moves = anneal.moves_per_sweep or max(100, 2 * inner.shape[0])
        acc = _sweep(state, rng, 0.0 if greedy else T, moves, greedy)
        # re-derive potentials from scratch so rounding never accumulates
        state.refresh()
        if state.energy < best:
            best = state.energy
            best_occ = state.occ.copy()
        step += 1
        trace.append((step, 0.0 if greedy else T, state.energy, best, acc / moves))
        if not greedy:
            T *= anneal.cooling_ratio
        elif acc == 0:
            break
    E = GridSet(lat, best_occ)
    return MinimizeResult(E, best, trace, T0)


def incremental_delta(E: GridSet, cell, container: GridSet, params: KernelParams,
                      cfg: QuadratureConfig | None = None) -> float:
    """Exact change of the discrete capillarity energy when ``cell`` is toggled."""
    cell = tuple(int(c) for c in cell)
    if E.lattice != container.lattice:
        raise ValueError("E and container must share a lattice")
    if not all(0 <= c < k for c, k in zip(cell, E.lattice.shape)) or not container.occupancy[cell]:
        raise ValueError(f"cell {cell} is not inside the container")
    st = _State(container, E.occupancy, params, cfg or QuadratureConfig())
    return float(-st.f[cell] if E.occupancy[cell] else st.f[cell])


# --------------------------------------------------------------------------- blow-up


@dataclass
class BlowupReport:
    contact_point: tuple
    radii: tuple
    side: int  # +1 when the liquid lies towards +x_1 from the contact point
    rescaled: list = field(repr=False)  # indicator samples of E_r on the unit half-disc
    distances: np.ndarray = field(repr=False)  # pairwise L1 on B_1
    consecutive: tuple = ()
    fitted_angles: tuple = ()
    fitted_angle: float = math.nan
    phi_values: tuple = ()
    phi_errors: tuple = ()

    @property
    def distances_decreasing(self):
        d = np.asarray(self.consecutive)
        return bool(np.all(np.diff(d) <= 0))

    def to_dict(self):
        return {
            "contact_point": list(self.contact_point),
            "radii": list(self.radii),
            "side": self.side,
            "distances": self.distances.tolist(),
            "consecutive": list(self.consecutive),
            "distances_decreasing": self.distances_decreasing,
            "fitted_angles": list(self.fitted_angles),
            "fitted_angle": self.fitted_angle,
            "fitted_angle_degrees": math.degrees(self.fitted_angle),
            "phi_values": list(self.phi_values),
            "phi_errors": list(self.phi_errors),
        }


def find_contact_point(E: GridSet, rows=3):
    """Wall point where the occupancy of the lowest rows changes most along the wall."""
    lat = E.lattice
    band = E.occupancy[:, :rows].mean(axis=1)
    jump = np.abs(np.diff(band))
    if jump.size == 0 or jump.max() == 0:
        raise ValueError("no contact point: E does not meet the wall")
    i = int(np.argmax(jump))
    return (float(lat.lo[0] + (i + 1) * lat.h[0]), float(lat.lo[1]))


def _unit_samples(m):
    """Midpoints and weights of an ``2m x m`` grid on ``[-1,1] x [0,1]``."""
    g = (np.arange(2 * m) + 0.5) / m - 1.0
    t = (np.arange(m) + 0.5) / m
    Y = np.stack(np.meshgrid(g, t, indexing="ij"), -1).reshape(-1, 2)
    return Y, 1.0 / (m * m)


def _sample(E: GridSet, p, r, Y):
    """Indicator at ``p + r Y`` and the polar angle about ``p`` of each sample's cell centre."""
    lat = E.lattice
    idx, inside = lat.cell_index(np.asarray(p) + r * Y)
    c = lat.lo + (idx + 0.5) * lat.h - np.asarray(p)
    return E.occupancy[tuple(idx.T)] & inside, np.arctan2(c[:, 1], c[:, 0])


def _fit_sector(occ, ang, w, sel):
    """Best sector angle (1-degree steps) and side by indicator mismatch on ``sel``.

    Candidates are judged at cell centres, the rule rasterization uses, so a
    rasterized sector fits its own angle at any scale.
    """
    ang = ang[sel]
    o = occ[sel]
    th = np.radians(np.arange(1, 180))
    best = (math.inf, 1, math.nan)
    for side in (1, -1):
        a = ang if side == 1 else math.pi - ang
        inside = a[None, :] < th[:, None]
        cost = np.sum(inside != o[None, :], axis=1) * w
        k = int(np.argmin(cost))
        # centre of the run of equally good angles: coarse scales leave ties
        lo = hi = k
        while lo > 0 and cost[lo - 1] == cost[k]:
            lo -= 1
        while hi + 1 < cost.size and cost[hi + 1] == cost[k]:
            hi += 1
        if cost[k] < best[0]:
            best = (float(cost[k]), side, float(0.5 * (th[lo] + th[hi])))
    return best


def _padded(E: GridSet, p, reach):
    """``E - p`` on a window padded so the upper half-disc of radius ``reach`` fits."""
    lat = E.lattice
    h = lat.h
    lo = lat.lo - np.asarray(p)
    hi = lat.hi - np.asarray(p)
    need_lo = np.array([-reach, lo[1]])
    need_hi = np.array([reach, max(hi[1], reach)])
    add_lo = np.maximum(0, np.ceil((lo - need_lo) / h - 1e-9)).astype(int)
    add_hi = np.maximum(0, np.ceil((need_hi - hi) / h - 1e-9)).astype(int)
    # even shapes keep the coarsened fidelity pass available
    shape = np.asarray(lat.shape) + add_lo + add_hi
    add_hi += shape % 2
    occ = np.pad(E.occupancy, [(a, b) for a, b in zip(add_lo, add_hi)])
    win = np.stack([lo - add_lo * h, hi + add_hi * h], axis=1)
    return GridSet(Lattice(win, occ.shape), occ)


def blowup(E: GridSet, contact_point, radii, params: KernelParams,
           cfg: QuadratureConfig | None = None, samples=128, phi=True) -> BlowupReport:
    """Rescale ``E`` about a wall point over a decreasing radius ladder.

    Reports pairwise L1 distances of the rescaled indicators on the unit
    half-disc, the best-fit sector angle on the annulus ``0.2 <= |y| <= 0.8``
    and, with ``phi``, the profile ``Phi_E`` at the ladder radii.
    """
    lat = E.lattice
    if lat.n != 2:
        raise NotImplementedError("blow-up analysis is planar")
    radii = tuple(float(r) for r in np.asarray(radii, dtype=float).ravel())
    if len(radii) < 2 or np.any(np.diff(radii) >= 0):
        raise ValueError("radii must be a decreasing ladder of at least two values")
    floor = 4.0 * float(np.max(lat.h))
    if min(radii) < floor:
        raise ValueError(f"radii below the resolution floor 4 * cell size = {floor:g}")
    if contact_point is None:
        contact_point = find_contact_point(E)
    p = tuple(float(x) for x in contact_point)
    if abs(p[1] - lat.lo[1]) > 1e-9 * float(np.max(lat.hi - lat.lo)) or lat.lo[1] != 0.0:
        raise ValueError("contact point must lie on the flat wall x_2 = 0 at the window bottom")
    Y, w = _unit_samples(samples)
    rr = np.linalg.norm(Y, axis=1)
    disc = rr < 1.0
    ann = (rr >= 0.2) & (rr <= 0.8)
    sampled = [_sample(E, p, r, Y) for r in radii]
    sets = [o for o, _ in sampled]
    k = len(radii)
    D = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = float(np.sum((sets[i] != sets[j]) & disc) * w)
    fits = [_fit_sector(o, a, w, ann) for o, a in sampled]
    side = fits[-1][1]
    angles = tuple(f[2] for f in fits)
    report = BlowupReport(p, radii, side, [o.reshape(2 * samples, samples) for o in sets], D,
                          tuple(float(D[i, i + 1]) for i in range(k - 1)), angles, angles[-1])
    if phi:
        G = _padded(E, p, max(radii) * 1.25 + 4.0 * float(np.max(lat.h)))
        asc = np.array(sorted(radii))
        prof = phi_profile(G, asc, params, cfg)
        order = np.argsort(asc)[::-1]
        report.phi_values = tuple(float(x) for x in prof.phi[order])
        report.phi_errors = tuple(float(x) for x in prof.errors[order])
    return report


# --------------------------------------------------------------------------- estimators


class DropletMinimizer(BaseEstimator):
    """``fit(container)`` anneals a droplet of ``volume_fraction`` of the container."""

    def __init__(self, s=0.5, sigma=0.0, volume_fraction=0.3, sweeps=200, cooling_ratio=0.95,
                 initial_temperature=None, moves_per_sweep=None, quench_sweeps=20, seed=0,
                 rel_tol=1e-3):
        self.s = s
        self.sigma = sigma
        self.volume_fraction = volume_fraction
        self.sweeps = sweeps
        self.cooling_ratio = cooling_ratio
        self.initial_temperature = initial_temperature
        self.moves_per_sweep = moves_per_sweep
        self.quench_sweeps = quench_sweeps
        self.seed = seed
        self.rel_tol = rel_tol

    def fit(self, container: GridSet, y=None):
        frac = check_scalar(self.volume_fraction, "volume_fraction", lo=0.0, hi=1.0,
                            lo_inclusive=True, hi_inclusive=True)
        vol = int(round(frac * container.count))
        cfg = AnnealConfig(vol, self.initial_temperature, self.cooling_ratio, self.sweeps,
                           self.moves_per_sweep, self.quench_sweeps, self.seed)
        res = minimize(container, KernelParams(2, self.s, self.sigma), cfg,
                       QuadratureConfig(rel_tol=self.rel_tol))
        self.droplet_ = res.droplet
        self.energy_ = res.energy
        self.trace_ = res.trace
        return self


class BlowupAnalyzer(BaseEstimator):
    """``fit(E)`` runs :func:`blowup`; ``fitted_angle_`` is the sector fit at the smallest radius."""

    def __init__(self, radii=(0.4, 0.2, 0.1, 0.05), contact_point=None, s=0.5, sigma=0.0,
                 phi=True):
        self.radii = radii
        self.contact_point = contact_point
        self.s = s
        self.sigma = sigma
        self.phi = phi

    def fit(self, E: GridSet, y=None):
        self.report_ = blowup(E, self.contact_point, self.radii,
                              KernelParams(2, self.s, self.sigma), phi=self.phi)
        self.fitted_angle_ = self.report_.fitted_angle
        return self


__all__ = [
    "AnnealConfig", "MinimizeResult", "minimize", "incremental_delta", "triangle_init",
    "BlowupReport", "find_contact_point", "blowup", "DropletMinimizer", "BlowupAnalyzer",
]
