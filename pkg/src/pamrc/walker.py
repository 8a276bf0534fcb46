"""Event-driven simulation of the conductance walk.

The walk jumps across edge (x, y) at rate equal to that edge's conductance;
holding times are exponential in the site's total rate.  Paths are sampled
from counter-based streams (see ``pamrc._rng``), so a (seed, replica, path)
triple pins the trajectory exactly, on either kernel backend.

Decorated fields are sampled through the merged red+green clock plus an
independent label draw, so a decorated path and its effective-field twin
share the same jump times and positions for the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Union

import numpy as np

from . import kernels
from ._rng import derive_key, root_key, uniform_at
from .errors import ConfigError
from .lattice import (ClusterSpec, ConductanceField, DecoratedConductanceField,
                      LatticeBox, decorated_to_effective)

# sub-stream index for decorated edge labels; separate from the jump draws so
# positions are unchanged when labels are added
_LABEL_STREAM = 0x4C4142454C


@dataclass
class WalkPath:
    box: LatticeBox
    start: tuple
    horizon: float
    jump_times: np.ndarray   # float64[m], strictly increasing
    sites: np.ndarray        # int64[m+1] site indices, sites[0] = start
    slots: np.ndarray        # int64[m] neighbour slot taken at each jump
    edge_labels: Optional[np.ndarray] = None   # 0 = red, 1 = green

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def positions(self) -> list:
        return [self.box.coords(int(s)) for s in self.sites]

    def end_site(self) -> int:
        return int(self.sites[-1])


def simulate_path(field: Union[ConductanceField, DecoratedConductanceField],
                  start, horizon: float, seed: int,
                  key: Optional[int] = None) -> WalkPath:
    """Sample one walk on `field` from `start` over [0, horizon].

    `seed` is hashed into a stream key; callers that manage streams
    themselves (replica batches) may pass `key` directly instead.
    """
    decorated = isinstance(field, DecoratedConductanceField)
    eff = decorated_to_effective(field) if decorated else field
    box = eff.box
    if not box.contains(start):
        raise ConfigError(f"start {tuple(start)} outside the box")
    adj = eff.adjacency()
    k = root_key(seed) if key is None else key
    times, sites, slots, _ = kernels.simulate_path(
        adj.nbr, adj.rate, adj.total, box.index(start), horizon, k)
    labels = None
    if decorated:
        labels = _draw_labels(field, sites, k)
    return WalkPath(box, tuple(start), float(horizon), times, sites, slots, labels)


def _draw_labels(dec: DecoratedConductanceField, sites: np.ndarray,
                 key: int) -> np.ndarray:
    label_key = derive_key(key, _LABEL_STREAM)
    labels = np.empty(len(sites) - 1, dtype=np.int64)
    for j in range(len(sites) - 1):
        a, b = int(sites[j]), int(sites[j + 1])
        p_red = dec.red.rate(a, b) / dec.pair_rate(a, b)
        labels[j] = 0 if uniform_at(label_key, j) < p_red else 1
    return labels


def confinement_indicator(path: WalkPath,
                          pocket: Union[ClusterSpec, LatticeBox]) -> bool:
    """True iff every visited site stays inside the pocket for the whole
    horizon (the indicator that multiplies confined estimators)."""
    if isinstance(pocket, ClusterSpec):
        center = np.asarray(pocket.center)
        r = pocket.pocket_radius
    else:
        center = np.asarray(pocket.origin_offset)
        r = pocket.radius
    coords = np.array([path.box.coords(int(s)) for s in path.sites])
    return bool(np.all(np.abs(coords - center) <= r))


@dataclass(frozen=True)
class GirsanovWeight:
    jump_term: float
    time_term: float

    @property
    def log_weight(self) -> float:
        return self.jump_term + self.time_term


def girsanov_weight(path: WalkPath, field_from: ConductanceField,
                    field_to: ConductanceField) -> GirsanovWeight:
    """Log density of the `field_to` walk law against the sampled
    `field_from` law along `path`.

    jump term:  sum over jumps of log(rate_to / rate_from) on the traversed
    edge; time term: minus the integral of the total-rate difference along
    the piecewise-constant path (computed exactly, no quadrature).
    """
    if field_from.box != field_to.box:
        raise ConfigError("both fields must live on the same box")
    af = field_from.adjacency()
    at = field_to.adjacency()
    jump, time = kernels.girsanov_terms(
        path.jump_times, path.sites, path.slots,
        af.rate, af.total, at.rate, at.total, path.horizon)
    return GirsanovWeight(jump, time)


def save_path(path: WalkPath, fname: str) -> None:
    """CSV rows `jump_time,site_coords(,edge_label)`; row 0 is the start."""
    with open(fname, "w") as fh:
        coords = ":".join(str(c) for c in path.box.coords(int(path.sites[0])))
        fh.write(f"{0.0!r},{coords}\n")
        for j in range(path.n_jumps):
            coords = ":".join(str(c) for c in path.box.coords(int(path.sites[j + 1])))
            row = f"{path.jump_times[j]!r},{coords}"
            if path.edge_labels is not None:
                row += f",{int(path.edge_labels[j])}"
            fh.write(row + "\n")
