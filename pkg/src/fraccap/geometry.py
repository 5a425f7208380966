"""Set representations: analytic regions, uniform lattices and occupancy bitmaps."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    check_order,
    check_points,
    check_resolution,
    check_scalar,
    check_sigma,
    check_window,
)


@dataclass(frozen=True)
class KernelParams:
    """Dimension ``n``, fractional order ``s`` and adhesion coefficient ``sigma``."""

    n: int = 2
    s: float = 0.5
    sigma: float = 0.0

    def __post_init__(self):
        n = check_scalar(self.n, "n", lo=1, lo_inclusive=True, integer=True)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "s", check_order(self.s))
        object.__setattr__(self, "sigma", check_sigma(self.sigma))

    @property
    def p(self):
        """Kernel exponent ``n + s``."""
        return self.n + self.s


# --------------------------------------------------------------------------- regions


class Region:
    """Analytic set with exact, vectorised membership."""

    n = None

    def contains(self, points):
        raise NotImplementedError

    def bounding_box(self):
        """``(n, 2)`` array enclosing the region, or ``None`` if unbounded."""
        return None

    def to_dict(self):
        raise NotImplementedError

    def crossings(self, points, dirs):
        """Ray parameters ``rho`` where ``points + rho * dirs`` may cross the boundary.

        Returns an ``(m, k)`` array; entries that are ``nan`` or ``<= 0`` are
        ignored. Between consecutive crossings membership along a ray is constant.
        """
        raise NotImplementedError(f"{type(self).__name__} has no ray crossings")

    # boolean algebra
    def __and__(self, other):
        return Intersection(self, other)

    def __or__(self, other):
        return Union(self, other)

    def __invert__(self):
        return Complement(self)

    def __repr__(self):
        return f"Region({json.dumps(self.to_dict())})"


class Empty(Region):
    def __init__(self, n=2):
        self.n = int(n)

    def contains(self, points):
        return np.zeros(check_points(points, self.n).shape[:-1], dtype=bool)

    def crossings(self, points, dirs):
        return np.zeros((points.shape[0], 0))

    def bounding_box(self):
        return np.zeros((self.n, 2))

    def to_dict(self):
        return {"shape": "empty", "n": self.n}


class HalfSpace(Region):
    """``{x : x . normal > offset}``; the default is ``H = {x_n > 0}``."""

    def __init__(self, n=2, normal=None, offset=0.0):
        self.n = int(n)
        if normal is None:
            normal = np.zeros(self.n)
            normal[-1] = 1.0
        self.normal = np.asarray(normal, dtype=float)
        if self.normal.shape != (self.n,) or not np.any(self.normal):
            raise ValueError("halfspace normal must be a nonzero vector of length n")
        self.offset = float(offset)

    @property
    def is_standard(self):
        e = np.zeros(self.n)
        e[-1] = 1.0
        return self.offset == 0.0 and np.array_equal(self.normal, e)

    def contains(self, points):
        p = check_points(points, self.n)
        return p @ self.normal > self.offset

    def crossings(self, points, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = (self.offset - points @ self.normal) / (dirs @ self.normal)
        return rho[:, None]

    def to_dict(self):
        if self.is_standard:
            return {"shape": "halfspace", "n": self.n}
        return {"shape": "halfspace", "n": self.n, "normal": self.normal.tolist(),
                "offset": self.offset}


class Ball(Region):
    def __init__(self, r, c=None, n=2):
        self.r = check_scalar(r, "r", lo=0.0)
        self.c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
        self.n = self.c.shape[0]

    def contains(self, points):
        p = check_points(points, self.n)
        return np.sum((p - self.c) ** 2, axis=-1) < self.r * self.r

    def crossings(self, points, dirs):
        q = points - self.c
        b = np.sum(q * dirs, axis=-1)
        disc = b * b - np.sum(q * q, axis=-1) + self.r * self.r
        root = np.sqrt(np.where(disc > 0, disc, np.nan))
        return np.stack([-b - root, -b + root], axis=-1)

    def bounding_box(self):
        return np.stack([self.c - self.r, self.c + self.r], axis=1)

    def to_dict(self):
        return {"shape": "ball", "r": self.r, "c": self.c.tolist()}


class Box(Region):
    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        check_window(np.stack([self.lo, self.hi], axis=1))
        self.n = self.lo.shape[0]

    def contains(self, points):
        p = check_points(points, self.n)
        return np.all((p > self.lo) & (p < self.hi), axis=-1)

    def crossings(self, points, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (self.lo - points) / dirs
            b = (self.hi - points) / dirs
        return np.concatenate([a, b], axis=-1)

    def bounding_box(self):
        return np.stack([self.lo, self.hi], axis=1)

    def to_dict(self):
        return {"shape": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class Sector(Region):
    """Planar angular sector ``{apex + rho (cos phi, sin phi) : alpha < phi < beta}``."""

    n = 2

    def __init__(self, alpha, beta, apex=(0.0, 0.0)):
        self.alpha = float(alpha)
        self.beta = float(beta)
        if self.beta < self.alpha or self.beta - self.alpha > 2 * math.pi:
            raise ValueError("sector needs alpha <= beta <= alpha + 2*pi")
        self.apex = np.asarray(apex, dtype=float)

    def contains(self, points):
        p = check_points(points, 2) - self.apex
        phi = np.mod(np.arctan2(p[..., 1], p[..., 0]) - self.alpha, 2 * math.pi)
        nonzero = np.any(p != 0.0, axis=-1)
        return nonzero & (phi > 0.0) & (phi < self.beta - self.alpha)

    @property
    def angle(self):
        return self.beta - self.alpha

    def crossings(self, points, dirs):
        out = []
        q = self.apex - points
        for phi in (self.alpha, self.beta):
            u = np.array([math.cos(phi), math.sin(phi)])
            # points + rho d = apex + lam u, solved for (rho, lam)
            det = dirs[:, 0] * (-u[1]) - dirs[:, 1] * (-u[0])
            with np.errstate(divide="ignore", invalid="ignore"):
                rho = (q[:, 0] * (-u[1]) - q[:, 1] * (-u[0])) / det
                lam = (dirs[:, 0] * q[:, 1] - dirs[:, 1] * q[:, 0]) / det
            out.append(np.where(lam >= 0, rho, np.nan))
        return np.stack(out, axis=-1)

    def to_dict(self):
        d = {"shape": "sector", "alpha": self.alpha, "beta": self.beta}
        if np.any(self.apex):
            d["apex"] = self.apex.tolist()
        return d


class Complement(Region):
    def __init__(self, region):
        self.region = region
        self.n = region.n

    def contains(self, points):
        return ~self.region.contains(points)

    def crossings(self, points, dirs):
        return self.region.crossings(points, dirs)

    def to_dict(self):
        return {"op": "complement", "arg": self.region.to_dict()}


class Intersection(Region):
    def __init__(self, *regions):
        if not regions:
            raise ValueError("intersection needs at least one region")
        self.regions = regions
        self.n = regions[0].n

    def contains(self, points):
        out = self.regions[0].contains(points)
        for r in self.regions[1:]:
            out = out & r.contains(points)
        return out

    def crossings(self, points, dirs):
        return np.concatenate([r.crossings(points, dirs) for r in self.regions], axis=-1)

    def bounding_box(self):
        boxes = [b for b in (r.bounding_box() for r in self.regions) if b is not None]
        if not boxes:
            return None
        lo = np.max([b[:, 0] for b in boxes], axis=0)
        hi = np.min([b[:, 1] for b in boxes], axis=0)
        return np.stack([lo, np.maximum(hi, lo)], axis=1)

    def to_dict(self):
        return {"op": "intersect", "args": [r.to_dict() for r in self.regions]}


class Union(Region):
    def __init__(self, *regions):
        if not regions:
            raise ValueError("union needs at least one region")
        self.regions = regions
        self.n = regions[0].n

    def contains(self, points):
        out = self.regions[0].contains(points)
        for r in self.regions[1:]:
            out = out | r.contains(points)
        return out

    def crossings(self, points, dirs):
        return np.concatenate([r.crossings(points, dirs) for r in self.regions], axis=-1)

    def bounding_box(self):
        boxes = [r.bounding_box() for r in self.regions]
        if any(b is None for b in boxes):
            return None
        return np.stack([np.min([b[:, 0] for b in boxes], axis=0),
                         np.max([b[:, 1] for b in boxes], axis=0)], axis=1)

    def to_dict(self):
        return {"op": "union", "args": [r.to_dict() for r in self.regions]}


def region_from_dict(d, n=2):
    """Parse the JSON region grammar (shapes plus ``op`` combinators)."""
    if "op" in d:
        op = d["op"]
        if op == "complement":
            return Complement(region_from_dict(d.get("arg", d.get("args", [None])[0]), n))
        args = [region_from_dict(a, n) for a in d["args"]]
        if op == "intersect":
            return Intersection(*args)
        if op == "union":
            return Union(*args)
        raise ValueError(f"unknown region op {op!r}")
    shape = d.get("shape")
    if shape == "halfspace":
        return HalfSpace(n=d.get("n", n), normal=d.get("normal"), offset=d.get("offset", 0.0))
    if shape == "empty":
        return Empty(d.get("n", n))
    if shape == "ball":
        return Ball(d["r"], d.get("c"), n=n)
    if shape == "box":
        return Box(d["lo"], d["hi"])
    if shape == "sector":
        return Sector(d["alpha"], d["beta"], d.get("apex", (0.0, 0.0)))
    raise ValueError(f"unknown region shape {shape!r}")


def load_region(path):
    with open(path) as fh:
        return region_from_dict(json.load(fh))


# --------------------------------------------------------------------------- lattices


@dataclass(frozen=True, eq=False)
class Lattice:
    """Uniform cell grid over an axis-aligned box."""

    window: np.ndarray
    shape: tuple

    def __post_init__(self):
        w = check_window(self.window)
        w.setflags(write=False)
        object.__setattr__(self, "window", w)
        object.__setattr__(self, "shape", check_resolution(self.shape, w.shape[0]))

    @classmethod
    def make(cls, window, resolution):
        w = check_window(window)
        return cls(w, check_resolution(resolution, w.shape[0]))

    @property
    def n(self):
        return self.window.shape[0]

    @property
    def lo(self):
        return self.window[:, 0]

    @property
    def hi(self):
        return self.window[:, 1]

    @property
    def h(self):
        """Cell side lengths per axis."""
        return (self.hi - self.lo) / np.asarray(self.shape)

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axes(self):
        return [self.lo[k] + (np.arange(self.shape[k]) + 0.5) * self.h[k] for k in range(self.n)]

    def centers(self):
        """Cell centres, shape ``shape + (n,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def cell_index(self, points):
        """Integer cell indices of ``points`` and a mask of points inside the window."""
        p = check_points(points, self.n)
        idx = np.floor((p - self.lo) / self.h).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.shape)), axis=-1)
        return np.clip(idx, 0, np.asarray(self.shape) - 1), inside

    def scaled(self, factor):
        return Lattice(self.window * factor, self.shape)

    def shifted(self, offset):
        return Lattice(self.window - np.asarray(offset, dtype=float)[:, None], self.shape)

    def __eq__(self, other):
        return (isinstance(other, Lattice) and self.shape == other.shape
                and np.array_equal(self.window, other.window))

    def __hash__(self):
        return hash((self.shape, self.window.tobytes()))

    def key(self):
        return (self.shape, tuple(self.window.ravel().tolist()))


@dataclass(frozen=True, eq=False)
class GridSet:
    """Occupancy bitmap on a :class:`Lattice`; the discrete stand-in for a set."""

    lattice: Lattice
    occupancy: np.ndarray = field(repr=False)

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool)
        if occ.shape != self.lattice.shape:
            raise ValueError(f"occupancy shape {occ.shape} != lattice shape {self.lattice.shape}")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    @classmethod
    def empty(cls, lattice):
        return cls(lattice, np.zeros(lattice.shape, dtype=bool))

    @property
    def n(self):
        return self.lattice.n

    @property
    def count(self):
        return int(self.occupancy.sum())

    @property
    def measure(self):
        return self.count * self.lattice.cell_volume

    def indices(self):
        """Occupied cell indices, ``(count, n)``, in row-major order."""
        return np.argwhere(self.occupancy)

    def contains(self, points):
        idx, inside = self.lattice.cell_index(points)
        return inside & self.occupancy[tuple(np.moveaxis(idx, -1, 0))]

    def in_halfspace(self):
        """True if no occupied cell has its centre at ``x_n < 0``."""
        centers = self.lattice.centers()[..., -1]
        return not np.any(self.occupancy & (centers < 0))

    def with_occupancy(self, occupancy):
        return GridSet(self.lattice, occupancy)

    def complement(self):
        return GridSet(self.lattice, ~self.occupancy)

    def __eq__(self, other):
        return (isinstance(other, GridSet) and self.lattice == other.lattice
                and np.array_equal(self.occupancy, other.occupancy))

    def __hash__(self):
        return hash((self.lattice, np.packbits(self.occupancy).tobytes()))

    # serialisation: JSON header line, then row-major packed bits
    def to_bytes(self):
        header = {"window": self.lattice.window.tolist(), "resolution": list(self.lattice.shape),
                  "bits": "row-major, msb-first"}
        return (json.dumps(header, sort_keys=True).encode() + b"\n"
                + np.packbits(self.occupancy.ravel()).tobytes())

    @classmethod
    def from_bytes(cls, data):
        head, _, body = data.partition(b"\n")
        header = json.loads(head)
        lattice = Lattice.make(header["window"], header["resolution"])
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8))[: lattice.size]
        if bits.size != lattice.size:
            raise ValueError("truncated GridSet payload")
        return cls(lattice, bits.astype(bool).reshape(lattice.shape))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# --------------------------------------------------------------------------- operations


def rasterize(region: Region, window, resolution) -> GridSet:
    """Occupy every cell whose centre lies in ``region``."""
    lattice = window if isinstance(window, Lattice) else Lattice.make(window, resolution)
    if region.n != lattice.n:
        raise ValueError(f"region dimension {region.n} != window dimension {lattice.n}")
    return GridSet(lattice, region.contains(lattice.centers()))


def rescale(gs: GridSet, r: float) -> GridSet:
    """The set ``E / r`` on the window scaled by ``1 / r`` (same resolution)."""
    r = check_scalar(r, "r", lo=0.0)
    return GridSet(gs.lattice.scaled(1.0 / r), gs.occupancy)


def translate(gs: GridSet, offset) -> GridSet:
    """The set ``E - offset``; exact, the window moves with the set."""
    return GridSet(gs.lattice.shifted(offset), gs.occupancy)


_BOOLEAN = {
    "intersect": np.logical_and,
    "union": np.logical_or,
    "difference": lambda a, b: a & ~b,
    "symmetric_difference": np.logical_xor,
}


def boolean_ops(a: GridSet, b: GridSet, op: str) -> GridSet:
    if op not in _BOOLEAN:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_BOOLEAN)}")
    if a.lattice != b.lattice:
        raise ValueError("boolean_ops needs GridSets on the same window and resolution")
    return GridSet(a.lattice, _BOOLEAN[op](a.occupancy, b.occupancy))


def coarsen(gs: GridSet, factor: int = 2) -> GridSet:
    """Block-majority coarsening (ties count as occupied)."""
    shape = gs.lattice.shape
    if any(k % factor for k in shape):
        raise ValueError(f"resolution {shape} not divisible by {factor}")
    n = gs.n
    blocks = gs.occupancy.reshape(sum(((k // factor, factor) for k in shape), ()))
    votes = blocks.sum(axis=tuple(range(1, 2 * n, 2)))
    coarse = Lattice(gs.lattice.window, tuple(k // factor for k in shape))
    return GridSet(coarse, 2 * votes >= factor ** n)


def refine(gs: GridSet, factor: int = 2) -> GridSet:
    """Split every cell into ``factor**n`` sub-cells; the represented set is unchanged."""
    occ = gs.occupancy
    for axis in range(gs.n):
        occ = np.repeat(occ, factor, axis=axis)
    return GridSet(Lattice(gs.lattice.window, tuple(k * factor for k in gs.lattice.shape)), occ)


def l1_distance(a: GridSet, b: GridSet) -> float:
    return boolean_ops(a, b, "symmetric_difference").measure


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in ``R^n``."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


__all__ = [
    "KernelParams", "Region", "Empty", "HalfSpace", "Ball", "Box", "Sector", "Complement",
    "Intersection", "Union", "region_from_dict", "load_region", "Lattice", "GridSet",
    "rasterize", "rescale", "translate", "boolean_ops", "coarsen", "refine", "l1_distance",
    "sphere_area",
]
