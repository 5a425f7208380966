"""Capillarity energy, localized fractional perimeters and their exact identities.

Every functional here is a signed sum of interactions between pieces of the
plane cut out by a few sets (the droplet, a ball, the upper half-space). The
identity checks split the plane into the atoms generated by those sets,
evaluate each atom-pair interaction once, and then assemble both sides of an
identity from the same numbers, so any mismatch is a bookkeeping error rather
than quadrature noise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ._validation import IdentityViolation, check_scalar
from .geometry import Ball, GridSet, HalfSpace, KernelParams, Lattice
from .interaction import (
    NONE,
    ZERO,
    Discrete,
    InteractionResult,
    QuadratureConfig,
    discretize,
    engine_for,
)


@dataclass(frozen=True)
class EnergyBreakdown:
    """Named interaction terms with their coefficients; ``total`` sums them in order."""

    terms: dict
    coefficients: dict
    total: float = field(init=False)
    error_estimate: float = field(init=False)
    tail_bound: float = field(init=False)

    def __post_init__(self):
        total = err = tail = 0.0
        for k, r in self.terms.items():
            c = self.coefficients[k]
            total += c * r.value
            err += abs(c) * r.error_estimate
            tail += abs(c) * r.tail_bound
        object.__setattr__(self, "total", total)
        object.__setattr__(self, "error_estimate", err)
        object.__setattr__(self, "tail_bound", tail)

    @property
    def converged(self):
        return all(r.converged for r in self.terms.values())

    def to_dict(self):
        return {
            "total": self.total,
            "error_estimate": self.error_estimate,
            "tail_bound": self.tail_bound,
            "converged": self.converged,
            "terms": {k: dict(r.to_dict(), coefficient=self.coefficients[k])
                      for k, r in self.terms.items()},
        }


def _lattice_of(*objs, lattice=None):
    if lattice is not None:
        return lattice
    for o in objs:
        if isinstance(o, GridSet):
            return o.lattice
    raise ValueError("at least one argument must be a GridSet (or pass lattice=)")


class _Terms:
    """Discretized sets on one lattice plus an interaction evaluator."""

    def __init__(self, lattice: Lattice, params: KernelParams, cfg: QuadratureConfig | None):
        self.lattice = lattice
        self.params = params
        self.engine = engine_for(lattice, params.s, cfg)

    def d(self, obj) -> Discrete:
        return discretize(obj, self.lattice)

    def I(self, a: Discrete, b: Discrete) -> InteractionResult:
        if not a.mask.any() and a.bounded:
            return ZERO
        if not b.mask.any() and b.bounded:
            return ZERO
        if not a.bounded:
            if not b.bounded:
                raise ValueError("both arguments of an interaction are unbounded")
            a, b = b, a
        return self.engine.term(a, b)


def _ball(R, n):
    return Ball(check_scalar(R, "R", lo=0.0), n=n)


def _check_in_h(F: Discrete, lattice):
    below = lattice.centers()[..., -1] <= 0
    if F.outside is None and F.region is not None:
        # probe the lower half-space at several scales around the window
        c = lattice.centers().reshape(-1, lattice.n)
        probes = [c * k for k in (1.0, 4.0, 64.0)]
        for q in probes:
            q = q.copy()
            q[:, -1] = -np.abs(q[:, -1]) - 1e-12
            if np.any(F.region.contains(q)):
                break
        else:
            outside_ok = True
            if np.any(F.mask & below) or not outside_ok:
                raise ValueError("set must lie in the upper half-space {x_n > 0}")
            return
    if np.any(F.mask & below) or (F.outside is None or F.outside - {"U"}):
        raise ValueError("set must lie in the upper half-space {x_n > 0}")


def capillarity_energy(E, omega, params: KernelParams, cfg: QuadratureConfig | None = None,
                       lattice=None) -> EnergyBreakdown:
    """``I_s(E, E^c omega) + sigma I_s(E, omega^c)``."""
    T = _Terms(_lattice_of(E, omega, lattice=lattice), params, cfg)
    e, w = T.d(E), T.d(omega)
    if np.any(e.mask & ~w.mask) or not e.bounded:
        raise ValueError("E must be a bounded subset of the container")
    terms = {
        "I_s(E, E^c ω)": T.I(e, e.complement() & w),
        "I_s(E, ω^c)": T.I(e, w.complement()),
    }
    return EnergyBreakdown(terms, {"I_s(E, E^c ω)": 1.0, "I_s(E, ω^c)": params.sigma})


def _perimeter_terms(T: _Terms, f: Discrete, w: Discrete, tag="ω"):
    fc, wc = f.complement(), w.complement()
    return {
        f"I_s(F{tag}, F^c{tag})": T.I(f & w, fc & w),
        f"I_s(F{tag}, F^c{tag}^c)": T.I(f & w, fc & wc),
        f"I_s(F{tag}^c, F^c{tag})": T.I(f & wc, fc & w),
    }


def fractional_perimeter(F, omega, params: KernelParams, cfg: QuadratureConfig | None = None,
                         lattice=None) -> EnergyBreakdown:
    """``Per_s(F, omega)`` as its three localized interaction terms."""
    T = _Terms(_lattice_of(F, omega, lattice=lattice), params, cfg)
    terms = _perimeter_terms(T, T.d(F), T.d(omega))
    return EnergyBreakdown(terms, dict.fromkeys(terms, 1.0))


def per_s_sigma(F, R, params: KernelParams, cfg: QuadratureConfig | None = None,
                lattice=None) -> EnergyBreakdown:
    """``Per_s(F, B_R H) + (sigma - 1) I_s(F B_R, H^c)`` for ``F`` inside ``H``."""
    T = _Terms(_lattice_of(F, lattice=lattice), params, cfg)
    f = T.d(F)
    _check_in_h(f, T.lattice)
    b = T.d(_ball(R, params.n))
    h = T.d(HalfSpace(params.n))
    terms = _perimeter_terms(T, f, b & h, tag="B_RH")
    terms["I_s(FB_R, H^c)"] = T.I(f & b, h.complement())
    coef = dict.fromkeys(terms, 1.0)
    coef["I_s(FB_R, H^c)"] = params.sigma - 1.0
    return EnergyBreakdown(terms, coef)


def minimizer_comparison_energy(F, R, params: KernelParams,
                                cfg: QuadratureConfig | None = None,
                                lattice=None) -> EnergyBreakdown:
    """``I_s(F B_R, F^c H) + I_s(F B_R^c, F^c B_R H) + sigma I_s(F B_R, H^c)``."""
    T = _Terms(_lattice_of(F, lattice=lattice), params, cfg)
    f = T.d(F)
    _check_in_h(f, T.lattice)
    b = T.d(_ball(R, params.n))
    h = T.d(HalfSpace(params.n))
    fc = f.complement()
    terms = {
        "I_s(FB_R, F^cH)": T.I(f & b, fc & h),
        "I_s(FB_R^c, F^cB_RH)": T.I(f & b.complement(), fc & b & h),
        "I_s(FB_R, H^c)": T.I(f & b, h.complement()),
    }
    coef = {"I_s(FB_R, F^cH)": 1.0, "I_s(FB_R^c, F^cB_RH)": 1.0,
            "I_s(FB_R, H^c)": params.sigma}
    return EnergyBreakdown(terms, coef)


# --------------------------------------------------------------------------- atom tables


class AtomTable:
    """Pairwise interactions of the atoms generated by a few named sets.

    An atom is a non-empty intersection choosing, for each named set, either the
    set or its complement; it is identified by a tuple of booleans in the order
    of ``names``. Any set built from the named sets by boolean operations is a
    union of atoms, so its interactions are sums of table entries.
    """

    def __init__(self, sets: dict, lattice: Lattice, params: KernelParams,
                 cfg: QuadratureConfig | None = None):
        self._T = _Terms(lattice, params, cfg)
        self.names = tuple(sets)
        disc = [self._T.d(v) for v in sets.values()]
        self.atoms = {}
        for sig in itertools.product((True, False), repeat=len(disc)):
            piece = None
            for chosen, dset in zip(sig, disc):
                part = dset if chosen else dset.complement()
                piece = part if piece is None else piece & part
            if piece.mask.any() or piece.outside != NONE:
                self.atoms[sig] = piece
        self._pairs = {}

    def _pair(self, a, b):
        key = (a, b) if a <= b else (b, a)
        if key not in self._pairs:
            self._pairs[key] = self._T.I(self.atoms[key[0]], self.atoms[key[1]])
        return self._pairs[key]

    def select(self, predicate):
        """Atom signatures of the set ``{sig : predicate(**membership)}``."""
        return [sig for sig in self.atoms if predicate(**dict(zip(self.names, sig)))]

    def I(self, pa, pb) -> InteractionResult:
        """Interaction of two disjoint unions of atoms given by predicates."""
        A, B = self.select(pa), self.select(pb)
        if set(A) & set(B):
            raise ValueError("interaction needs disjoint sets")
        out = ZERO
        for a in A:
            for b in B:
                out = out + self._pair(a, b)
        return out

    def perimeter(self, pf, pw) -> InteractionResult:
        """``Per_s(F, omega)`` with ``F``/``omega`` given by membership predicates."""
        return (self.I(lambda **m: pf(**m) and pw(**m), lambda **m: not pf(**m) and pw(**m))
                + self.I(lambda **m: pf(**m) and pw(**m),
                         lambda **m: not pf(**m) and not pw(**m))
                + self.I(lambda **m: pf(**m) and not pw(**m),
                         lambda **m: not pf(**m) and pw(**m)))


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    lhs: float
    rhs: float
    scale: float

    @property
    def rel_error(self):
        return abs(self.lhs - self.rhs) / max(self.scale, 1e-300)

    def passed(self, tol=1e-10):
        return self.rel_error <= tol

    def to_dict(self):
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "rel_error": self.rel_error}


def _scale(*vals):
    return max(abs(v) for v in vals) or 1.0


def check_comparison_identity(F: GridSet, R, params, cfg=None) -> IdentityCheck:
    """Comparison energy and ``Per_{s,sigma}(F, B_R)`` from one atom table."""
    t = AtomTable({"F": F, "B": _ball(R, params.n), "H": HalfSpace(params.n)},
                  F.lattice, params, cfg)
    _check_in_h(t._T.d(F), F.lattice)
    sig = params.sigma
    lhs = (t.I(lambda F, B, H: F and B, lambda F, B, H: not F and H).value
           + t.I(lambda F, B, H: F and not B, lambda F, B, H: not F and B and H).value
           + sig * t.I(lambda F, B, H: F and B, lambda F, B, H: not H).value)
    per = t.perimeter(lambda F, B, H: F, lambda F, B, H: B and H).value
    rhs = per + (sig - 1.0) * t.I(lambda F, B, H: F and B, lambda F, B, H: not H).value
    return IdentityCheck("comparison", lhs, rhs, _scale(lhs, rhs, per))


def check_ball_split_identity(F: GridSet, R, params, cfg=None) -> IdentityCheck:
    """``Per_s(F, B_R) - Per_s(F, B_R H) = I_s(F B_R^c, B_R H^c)`` for ``F`` in ``H``."""
    t = AtomTable({"F": F, "B": _ball(R, params.n), "H": HalfSpace(params.n)},
                  F.lattice, params, cfg)
    _check_in_h(t._T.d(F), F.lattice)
    full = t.perimeter(lambda F, B, H: F, lambda F, B, H: B).value
    half = t.perimeter(lambda F, B, H: F, lambda F, B, H: B and H).value
    rhs = t.I(lambda F, B, H: F and not B, lambda F, B, H: B and not H).value
    return IdentityCheck("ball_split", full - half, rhs, _scale(full, half, rhs))


def check_telescoping(E: GridSet, F: GridSet, R, params, cfg=None) -> IdentityCheck:
    """Perimeter differences in ``B_{R+1}`` and ``B_R`` agree when ``E`` and ``F``
    differ only inside ``B_R``."""
    n = params.n
    t = AtomTable({"E": E, "F": F, "B": _ball(R, n), "C": _ball(R + 1, n)},
                  E.lattice, params, cfg)
    diff = t._T.d(E).mask ^ t._T.d(F).mask
    if np.any(diff & ~t._T.d(_ball(R, n)).mask):
        raise ValueError("E and F must differ only inside B_R")
    pe = lambda E, F, B, C: E  # noqa: E731
    pf = lambda E, F, B, C: F  # noqa: E731
    inB = lambda E, F, B, C: B  # noqa: E731
    inC = lambda E, F, B, C: C  # noqa: E731
    outer = t.perimeter(pe, inC).value - t.perimeter(pf, inC).value
    inner = t.perimeter(pe, inB).value - t.perimeter(pf, inB).value
    return IdentityCheck("telescoping", outer - inner, 0.0,
                         _scale(t.perimeter(pe, inC).value, t.perimeter(pe, inB).value))


def random_grid_set(lattice: Lattice, rng, density=0.5, upper_only=True, smooth=2):
    """Random blobby occupancy: thresholded box-smoothed noise."""
    from scipy.ndimage import uniform_filter

    noise = uniform_filter(rng.random(lattice.shape), size=2 * smooth + 1, mode="wrap")
    occ = noise > np.quantile(noise, 1.0 - density)
    if upper_only:
        occ &= lattice.centers()[..., -1] > 0
    return GridSet(lattice, occ)


def verify_identities(trials=20, seed=1, resolution=64, params: KernelParams | None = None,
                      cfg: QuadratureConfig | None = None, tol=1e-10, raise_on_failure=False):
    """Run every exact identity on ``trials`` seeded random sets each."""
    params = params or KernelParams(2, 0.5, 0.3)
    rng = np.random.default_rng(seed)
    # wide enough that B_{R+1} stays inside the window, so no exterior terms arise
    lat = Lattice.make([[-2.0, 2.0], [-2.0, 2.0]], (resolution, resolution))
    checks = []
    for _ in range(trials):
        R = float(rng.uniform(0.6, 0.9))
        F = random_grid_set(lat, rng, density=float(rng.uniform(0.2, 0.6)))
        checks.append(check_comparison_identity(F, R, params, cfg))
        checks.append(check_ball_split_identity(F, R, params, cfg))
        inside = Ball(R, n=params.n).contains(lat.centers())
        occ = F.occupancy.copy()
        flip = inside & (rng.random(lat.shape) < 0.3)
        occ[flip] = ~occ[flip]
        checks.append(check_telescoping(F, F.with_occupancy(occ), R, params, cfg))
    bad = [c for c in checks if not c.passed(tol)]
    if bad and raise_on_failure:
        raise IdentityViolation(f"{len(bad)} identity checks failed: {bad[0].to_dict()}")
    return checks
