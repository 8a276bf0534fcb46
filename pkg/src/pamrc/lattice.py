"""Lattice boxes, conductance fields, and the near-constant-pocket scanner.

A box of radius L in dimension d has vertex set {-L,..,L}^d (optionally
shifted); edges join nearest neighbours, with wrap-around pairs when the
geometry is periodic.  Conductance fields attach a positive rate to every
undirected edge and are immutable after construction, so they can be shared
read-only across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._rng import root_key, uniform_at
from .errors import ConfigError

GEOMETRIES = ("absorbing", "periodic")


@dataclass(frozen=True)
class LatticeBox:
    dim: int
    radius: int
    geometry: str = "absorbing"
    origin_offset: tuple = ()

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.radius < 0:
            raise ConfigError("radius must be >= 0")
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}")
        off = tuple(self.origin_offset) if self.origin_offset else (0,) * self.dim
        if len(off) != self.dim:
            raise ConfigError("origin_offset length must equal dim")
        object.__setattr__(self, "origin_offset", off)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def n_sites(self) -> int:
        return self.side ** self.dim

    def contains(self, site: Sequence[int]) -> bool:
        return all(abs(site[a] - self.origin_offset[a]) <= self.radius
                   for a in range(self.dim))

    def index(self, site: Sequence[int]) -> int:
        idx = 0
        for a in range(self.dim):
            c = site[a] - self.origin_offset[a] + self.radius
            if not 0 <= c < self.side:
                raise ConfigError(f"site {tuple(site)} outside the box")
            idx = idx * self.side + c
        return idx

    def coords(self, idx: int) -> tuple:
        out = []
        for a in reversed(range(self.dim)):
            out.append(idx % self.side - self.radius + self.origin_offset[a])
            idx //= self.side
        return tuple(reversed(out))

    @property
    def origin_index(self) -> int:
        return self.index(self.origin_offset)

    def coords_array(self) -> np.ndarray:
        """int64[S, dim] coordinates of every site, in index order."""
        grids = np.unravel_index(np.arange(self.n_sites),
                                 (self.side,) * self.dim)
        cols = [g.astype(np.int64) - self.radius + self.origin_offset[a]
                for a, g in enumerate(grids)]
        return np.stack(cols, axis=1)

    def neighbor_table(self) -> np.ndarray:
        """int64[S, 2*dim]; slot 2a is +e_a, slot 2a+1 is -e_a, -1 if absent."""
        S = self.side ** self.dim
        idx = np.arange(S, dtype=np.int64)
        out = np.full((S, 2 * self.dim), -1, dtype=np.int64)
        if self.side == 1:
            return out
        for a in range(self.dim):
            stride = self.side ** (self.dim - 1 - a)
            c = (idx // stride) % self.side
            up = idx + stride
            dn = idx - stride
            if self.geometry == "periodic":
                up = np.where(c == self.side - 1, idx - (self.side - 1) * stride, up)
                dn = np.where(c == 0, idx + (self.side - 1) * stride, dn)
                out[:, 2 * a] = up
                out[:, 2 * a + 1] = dn
            else:
                out[c < self.side - 1, 2 * a] = up[c < self.side - 1]
                out[c > 0, 2 * a + 1] = dn[c > 0]
        return out

    def neighbor(self, idx: int, slot: int) -> int:
        axis, sign = divmod(slot, 2)
        site = list(self.coords(idx))
        site[axis] += 1 if sign == 0 else -1
        rel = site[axis] - self.origin_offset[axis]
        if abs(rel) > self.radius:
            if self.geometry != "periodic" or self.side < 3:
                return -1
            rel = (rel + self.radius) % self.side - self.radius
            site[axis] = rel + self.origin_offset[axis]
        return self.index(site)

    def subbox_mask(self, center: Sequence[int], r: int) -> np.ndarray:
        """bool[S]: sites within sup-distance r of center (no wrapping)."""
        coords = self.coords_array()
        return np.all(np.abs(coords - np.asarray(center)) <= r, axis=1)


def edge_arrays(box: LatticeBox) -> tuple:
    """Undirected edges as (a, b) index arrays with a < b, lexicographic."""
    nbr = box.neighbor_table()
    idx = np.arange(box.n_sites, dtype=np.int64)
    pairs = []
    for a in range(box.dim):
        j = nbr[:, 2 * a]
        ok = j >= 0
        if box.geometry == "periodic":
            ok &= j != idx  # a 1-site torus has no edges
        pairs.append(np.stack([idx[ok], j[ok]], axis=1))
    e = np.concatenate(pairs, axis=0) if pairs else np.empty((0, 2), np.int64)
    e.sort(axis=1)
    order = np.lexsort((e[:, 1], e[:, 0]))
    e = e[order]
    return e[:, 0].copy(), e[:, 1].copy()


@dataclass(frozen=True)
class Adjacency:
    """Flat per-site neighbour tables consumed by the kernels."""
    nbr: np.ndarray     # int64[S, 2d], -1 where no edge
    rate: np.ndarray    # float64[S, 2d]
    total: np.ndarray   # float64[S]


class ConductanceField:
    """Positive rates on the undirected edges of a box.

    Uniform ellipticity (0 < c <= rate <= C < inf) is validated on
    construction; symmetry is structural because storage is per undirected
    edge.  Instances are immutable.
    """

    def __init__(self, box: LatticeBox, rates):
        ea, eb = edge_arrays(box)
        if isinstance(rates, dict):
            rates = {(min(a, b), max(a, b)): float(v) for (a, b), v in rates.items()}
            if len(rates) != len(ea) or any(
                    (int(a), int(b)) not in rates for a, b in zip(ea, eb)):
                raise ConfigError("rates must cover exactly the edges of the box")
            vals = np.array([rates[(int(a), int(b))] for a, b in zip(ea, eb)])
        else:
            vals = np.asarray(rates, dtype=np.float64)
            if vals.shape != ea.shape:
                raise ConfigError("rate array length must equal the edge count")
            vals = vals.copy()
        if len(vals) and (not np.all(np.isfinite(vals)) or np.any(vals <= 0.0)):
            raise ConfigError("edge rates must lie in (0, inf)")
        self.box = box
        self.edge_a = ea
        self.edge_b = eb
        self.values = vals
        sup = np.unique(vals)
        self.support = tuple(float(v) for v in sup)
        self.lower = float(sup[0]) if len(sup) else None
        self.upper = float(sup[-1]) if len(sup) else None
        self._lookup: Optional[dict] = None
        self._adjacency: Optional[Adjacency] = None

    @property
    def n_edges(self) -> int:
        return len(self.values)

    def _table(self) -> dict:
        if self._lookup is None:
            self._lookup = {(int(a), int(b)): float(v) for a, b, v in
                            zip(self.edge_a, self.edge_b, self.values)}
        return self._lookup

    def rate(self, a: int, b: int) -> float:
        return self._table()[(min(a, b), max(a, b))]

    def items(self):
        return [((int(a), int(b)), float(v)) for a, b, v in
                zip(self.edge_a, self.edge_b, self.values)]

    def total_rate(self, idx: int) -> float:
        return float(self.adjacency().total[idx])

    def adjacency(self) -> Adjacency:
        if self._adjacency is None:
            box = self.box
            S, D = box.n_sites, 2 * box.dim
            nbr = box.neighbor_table()
            nbr = np.where(nbr == np.arange(S, dtype=np.int64)[:, None], -1, nbr)
            rate = np.zeros((S, D), dtype=np.float64)
            for slot in range(D):
                j = nbr[:, slot]
                ok = j >= 0
                aa = np.minimum(np.arange(S, dtype=np.int64)[ok], j[ok])
                bb = np.maximum(np.arange(S, dtype=np.int64)[ok], j[ok])
                rate[ok, slot] = _gather_edge_values(
                    self.edge_a, self.edge_b, self.values, aa, bb, S)
            self._adjacency = Adjacency(nbr, rate, rate.sum(axis=1))
        return self._adjacency


def _gather_edge_values(ea, eb, vals, qa, qb, n_sites):
    """Vectorized lookup of edge values for query pairs (qa < qb)."""
    keys = ea * n_sites + eb
    order = np.argsort(keys)
    pos = np.searchsorted(keys[order], qa * n_sites + qb)
    return vals[order[pos]]


class DecoratedConductanceField:
    """Two parallel edges (red, green) per neighbour pair of the box."""

    def __init__(self, box: LatticeBox, red: dict, green: dict):
        self.box = box
        self._red = ConductanceField(box, red)
        self._green = ConductanceField(box, green)

    @property
    def red(self) -> ConductanceField:
        return self._red

    @property
    def green(self) -> ConductanceField:
        return self._green

    def pair_rate(self, a: int, b: int) -> float:
        return self._red.rate(a, b) + self._green.rate(a, b)


def constant_field(box: LatticeBox, kappa: float) -> ConductanceField:
    if kappa <= 0:
        raise ConfigError("constant rate must be positive")
    ea, _ = edge_arrays(box)
    return ConductanceField(box, np.full(len(ea), float(kappa)))


def constant_decorated(box: LatticeBox, red: float,
                       green: float) -> DecoratedConductanceField:
    ea, _ = edge_arrays(box)
    return DecoratedConductanceField(box,
                                     np.full(len(ea), float(red)),
                                     np.full(len(ea), float(green)))


@dataclass(frozen=True)
class Pocket:
    center: tuple
    radius: int
    value: float


@dataclass(frozen=True)
class Constant:
    kappa: float


@dataclass(frozen=True)
class IidDiscrete:
    values: tuple
    probs: tuple


@dataclass(frozen=True)
class Clustered:
    values: tuple
    probs: tuple
    pockets: tuple   # of Pocket


def _pocket_edge_mask(field_box: LatticeBox, ea, eb, pocket: Pocket) -> np.ndarray:
    for a in range(field_box.dim):
        if (abs(pocket.center[a] - field_box.origin_offset[a]) + pocket.radius
                > field_box.radius):
            raise ConfigError(f"pocket at {pocket.center} does not fit inside the box")
    inside = field_box.subbox_mask(pocket.center, pocket.radius)
    return inside[ea] & inside[eb]


def generate_field(box: LatticeBox, law, seed: int) -> ConductanceField:
    """Sample a conductance field; deterministic in (box, law, seed)."""
    ea, eb = edge_arrays(box)
    if isinstance(law, Constant):
        return constant_field(box, law.kappa)

    if isinstance(law, (IidDiscrete, Clustered)):
        values = np.asarray(law.values, dtype=np.float64)
        probs = np.asarray(law.probs, dtype=np.float64)
        if np.any(values <= 0):
            raise ConfigError("support values must lie in (0, inf)")
        if len(values) != len(probs) or abs(probs.sum() - 1.0) > 1e-12:
            raise ConfigError("probs must match values and sum to 1")
        cum = np.cumsum(probs)
        key = root_key(seed)
        draws = np.array([uniform_at(key, i) for i in range(len(ea))])
        vals = values[np.searchsorted(cum, draws)]
        if isinstance(law, Clustered):
            claimed = np.zeros(len(ea), dtype=bool)
            for pocket in law.pockets:
                if float(pocket.value) not in set(values.tolist()):
                    raise ConfigError("pocket value must belong to the support")
                mask = _pocket_edge_mask(box, ea, eb, pocket)
                if np.any(claimed & mask):
                    raise ConfigError(
                        f"pocket at {pocket.center} (radius {pocket.radius}) "
                        "overlaps an earlier pocket")
                claimed |= mask
                vals[mask] = pocket.value
        return ConductanceField(box, vals)

    raise ConfigError(f"unknown field law {law!r}")


@dataclass(frozen=True)
class ClusterSpec:
    target: float
    tolerance: float
    pocket_radius: int
    pocket_center: tuple


def verify_clustering(field: ConductanceField, kappa: float, delta: float,
                      r: int) -> Optional[ClusterSpec]:
    """First pocket with every edge rate in (kappa - delta, kappa + delta);
    None if no center qualifies.

    Centers are ranked by sup-distance from the origin and lexicographically
    within ties (pockets near the origin are the useful ones: their distance
    must stay sublinear in the horizon), and the scan is exhaustive: each
    off-target edge vetoes the rectangle of centers whose window contains it.
    """
    box = field.box
    if r > box.radius:
        raise ConfigError("pocket radius exceeds the box radius")
    lo, hi = kappa - delta, kappa + delta
    span = box.radius - r
    shape = (2 * span + 1,) * box.dim
    bad = np.zeros(shape, dtype=bool)

    off = np.asarray(box.origin_offset)
    coords = box.coords_array()
    viol = ~((field.values > lo) & (field.values < hi))
    ca = coords[field.edge_a[viol]]
    cb = coords[field.edge_b[viol]]
    # window center c contains edge (a,b) iff max(ca,cb)-r <= c <= min(ca,cb)+r
    lo_c = np.maximum(np.maximum(ca, cb) - r, off - span)
    hi_c = np.minimum(np.minimum(ca, cb) + r, off + span)
    for k in range(len(ca)):
        if np.any(lo_c[k] > hi_c[k]):
            continue
        sl = tuple(slice(lo_c[k][a] - off[a] + span, hi_c[k][a] - off[a] + span + 1)
                   for a in range(box.dim))
        bad[sl] = True

    good = np.argwhere(~bad)
    if len(good) == 0:
        return None
    rel = good - span   # center coordinates relative to the origin
    dist = np.max(np.abs(rel), axis=1)
    order = np.lexsort(tuple(rel[:, a] for a in reversed(range(box.dim)))
                       + (dist,))
    first = rel[order[0]]
    center = tuple(int(first[a] + off[a]) for a in range(box.dim))
    return ClusterSpec(kappa, delta, r, center)


def discretize_field(field: ConductanceField, n: int) -> ConductanceField:
    """Floor every rate to the n-step grid between the field's extremes.

    Grid points are lower + j * (upper - lower) / n, j = 0..n; the maximal
    rate maps to itself.  Grid values snap exactly, which makes the map
    idempotent, and the edgewise error is below (upper - lower) / n.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    lo, hi = field.lower, field.upper
    if hi == lo:
        return field
    step = (hi - lo) / n
    out = np.empty_like(field.values)
    for i, v in enumerate(field.values):
        if v == hi:
            out[i] = hi
            continue
        j = int(np.floor((v - lo) / step))
        # float-exact snapping: correct the bin when rounding misplaced it
        while j > 0 and lo + j * step > v:
            j -= 1
        while j < n - 1 and lo + (j + 1) * step <= v:
            j += 1
        out[i] = lo + j * step
    return ConductanceField(field.box, out)


def decorated_to_effective(dec: DecoratedConductanceField) -> ConductanceField:
    """Merge each red/green pair into a single edge with the summed rate."""
    return ConductanceField(dec.box, dec.red.values + dec.green.values)


# -- serialization ----------------------------------------------------------

def save_field(field: ConductanceField, path: str) -> None:
    """One `x;y;rate` row per undirected edge after a `dim,radius,geometry`
    header; floats are written with repr so the round trip is exact."""
    box = field.box
    if any(box.origin_offset):
        raise ConfigError("field serialization assumes an origin-centered box")
    with open(path, "w") as fh:
        fh.write(f"{box.dim},{box.radius},{box.geometry}\n")
        for (a, b), v in field.items():
            ca = ",".join(str(c) for c in box.coords(a))
            cb = ",".join(str(c) for c in box.coords(b))
            fh.write(f"{ca};{cb};{v!r}\n")


def load_field(path: str) -> ConductanceField:
    with open(path) as fh:
        head = fh.readline().strip().split(",")
        if len(head) != 3:
            raise ConfigError("malformed field header")
        box = LatticeBox(int(head[0]), int(head[1]), head[2])
        rates = {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            xa, xb, v = line.split(";")
            a = box.index([int(c) for c in xa.split(",")])
            b = box.index([int(c) for c in xb.split(",")])
            rates[(min(a, b), max(a, b))] = float(v)
    return ConductanceField(box, rates)
