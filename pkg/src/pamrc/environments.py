"""The four dynamic environments: white noise, finite and infinite systems
of independent walks, and spin-flip (stochastic Ising) dynamics.

Environments live on a periodic box (torus) so that the stationary start is
exact: all walkers at the origin for the finite system, i.i.d. Poisson
occupation for the infinite system, and a Gibbs draw for the spin system.
Evolution is event-driven with the correct total rates; event logs replay
deterministically for a fixed seed.

White noise is never materialized pointwise.  Its trajectory object only
hands out Brownian increments on a solver-chosen grid; asking for a field
value is refused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._rng import derive_key, root_key, uniform_at
from .errors import ConfigError
from .lattice import LatticeBox

KINDS = ("white_noise", "finite_rw", "infinite_rw", "spin_flip")

EXACT_GIBBS_MAX_SITES = 20


@dataclass(frozen=True)
class EnvConfig:
    kind: str
    env_box: LatticeBox
    seed: int = 0
    n: int = 0            # finite_rw: number of walkers
    rho: float = 0.0      # finite_rw: walkers jump at total rate 2*d*rho
    nu: float = 0.0       # infinite_rw: Poisson intensity
    beta: float = 0.0     # spin_flip: inverse temperature
    sampler: str = "auto"  # spin_flip initial draw: auto | exact | chain

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        if self.env_box.geometry != "periodic":
            raise ConfigError("environments live on a periodic box")
        if self.kind == "finite_rw" and (self.n < 1 or self.rho <= 0):
            raise ConfigError("finite_rw needs n >= 1 and rho > 0")
        if self.kind == "infinite_rw" and self.nu <= 0:
            raise ConfigError("infinite_rw needs nu > 0")
        if self.kind == "spin_flip" and self.beta < 0:
            raise ConfigError("spin_flip needs beta >= 0")


@dataclass
class EnvState:
    config: EnvConfig
    t: float
    positions: Optional[np.ndarray] = None   # particle site indices (II)
    counters: Optional[np.ndarray] = None    # per-particle stream cursors (II)
    eta: Optional[np.ndarray] = None         # 0/1 spins (III)
    cursor: int = 0                          # scalar stream cursor (III)

    def occupancy(self) -> np.ndarray:
        """Site occupation numbers (counts for (II), spins for (III))."""
        cfg = self.config
        if cfg.kind in ("finite_rw", "infinite_rw"):
            out = np.zeros(cfg.env_box.n_sites, dtype=np.int64)
            np.add.at(out, self.positions, 1)
            return out
        if cfg.kind == "spin_flip":
            return self.eta.astype(np.int64)
        raise ConfigError("white noise has no occupancy field")


def _env_key(config: EnvConfig) -> int:
    return root_key(config.seed)


# -- stationary starts -------------------------------------------------------

def sample_initial(config: EnvConfig) -> EnvState:
    box = config.env_box
    key = _env_key(config)
    if config.kind == "white_noise":
        return EnvState(config, 0.0)
    if config.kind == "finite_rw":
        pos = np.full(config.n, box.origin_index, dtype=np.int64)
        return EnvState(config, 0.0, positions=pos,
                        counters=np.zeros(config.n, dtype=np.int64))
    if config.kind == "infinite_rw":
        rng = np.random.Generator(np.random.Philox(key=derive_key(key, 0)))
        counts = rng.poisson(config.nu, size=box.n_sites)
        pos = np.repeat(np.arange(box.n_sites, dtype=np.int64), counts)
        return EnvState(config, 0.0, positions=pos,
                        counters=np.zeros(len(pos), dtype=np.int64))
    # spin_flip
    n_sites = box.n_sites
    use_exact = config.sampler == "exact" or (
        config.sampler == "auto" and n_sites <= EXACT_GIBBS_MAX_SITES)
    if config.sampler == "exact" and n_sites > EXACT_GIBBS_MAX_SITES:
        raise ConfigError(
            f"exact Gibbs sampling caps at {EXACT_GIBBS_MAX_SITES} sites "
            f"(box has {n_sites}); use sampler='chain'")
    sampler = GibbsSampler(box, config.beta,
                           method="exact_enumeration" if use_exact else "gibbs_chain")
    eta = sampler.sample(derive_key(key, 1))
    return EnvState(config, 0.0, eta=eta, cursor=0)


# -- exact and MCMC Gibbs sampling -------------------------------------------

def _ising_bonds(box: LatticeBox) -> np.ndarray:
    from .lattice import edge_arrays
    ea, eb = edge_arrays(box)
    return np.stack([ea, eb], axis=1)


def gibbs_log_weights(box: LatticeBox, beta: float) -> np.ndarray:
    """log of the unnormalized Gibbs weight e^{beta * sum sigma sigma} for
    every configuration, enumerated as bit masks."""
    n = box.n_sites
    if n > EXACT_GIBBS_MAX_SITES:
        raise ConfigError("exact enumeration capped at 20 sites")
    bonds = _ising_bonds(box)
    configs = np.arange(1 << n, dtype=np.int64)
    energy = np.zeros(1 << n, dtype=np.float64)
    for a, b in bonds:
        same = ((configs >> int(a)) & 1) == ((configs >> int(b)) & 1)
        energy += np.where(same, 1.0, -1.0)
    return beta * energy


@dataclass
class GibbsSampler:
    env_box: LatticeBox
    beta: float
    method: str = "exact_enumeration"
    burn_in: int = 200      # sweeps, chain method
    thinning: int = 5

    def sample(self, key: int) -> np.ndarray:
        if self.method == "exact_enumeration":
            return self._sample_exact(key)
        if self.method == "gibbs_chain":
            return self._sample_chain(key)
        raise ConfigError(f"unknown Gibbs method {self.method}")

    def _sample_exact(self, key: int) -> np.ndarray:
        logw = gibbs_log_weights(self.env_box, self.beta)
        w = np.exp(logw - logw.max())
        cum = np.cumsum(w / w.sum())
        u = uniform_at(key, 0)
        mask = int(np.searchsorted(cum, u))
        n = self.env_box.n_sites
        return ((mask >> np.arange(n)) & 1).astype(np.int8)

    def _sample_chain(self, key: int) -> np.ndarray:
        """Heat-bath sweeps; adequate mixing for beta <= 1 (see docs)."""
        box = self.env_box
        n = box.n_sites
        nbr = box.neighbor_table()
        eta = np.zeros(n, dtype=np.int8)
        # independent start at beta=0 marginal
        for x in range(n):
            eta[x] = 1 if uniform_at(key, x) < 0.5 else 0
        c = n
        for sweep in range(self.burn_in):
            for x in range(n):
                h = 0
                for j in nbr[x]:
                    if j >= 0:
                        h += 2 * int(eta[j]) - 1
                # heat bath: P(spin=1) with local field h
                p1 = 1.0 / (1.0 + math.exp(-2.0 * self.beta * h))
                eta[x] = 1 if uniform_at(key, c) < p1 else 0
                c += 1
        return eta


def flip_rates(eta: np.ndarray, box: LatticeBox, beta: float,
               nbr: Optional[np.ndarray] = None) -> np.ndarray:
    """Stochastic-Ising flip rate exp(-beta * sigma(x) * sum_nbr sigma(y))
    for every site of the configuration."""
    if nbr is None:
        nbr = box.neighbor_table()
    sigma = 2.0 * eta - 1.0
    h = np.where(nbr >= 0, sigma[nbr], 0.0).sum(axis=1)
    return np.exp(-beta * sigma * h)


# -- evolution ----------------------------------------------------------------

def evolve(state: EnvState, dt: float):
    """Advance the environment by dt; returns (new_state, events).

    Events are time-sorted tuples: ("jump", t, particle, from, to) for the
    walk systems, ("flip", t, site) for spin flips.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    cfg = state.config
    if cfg.kind == "white_noise":
        raise ConfigError("white noise has no event-driven evolution; it is "
                          "consumed as Brownian increments by the solver")
    if cfg.kind in ("finite_rw", "infinite_rw"):
        return _evolve_particles(state, dt)
    return _evolve_spin(state, dt)


def _particle_adjacency(cfg: EnvConfig):
    from .lattice import constant_field
    per_edge = cfg.rho if cfg.kind == "finite_rw" else 1.0
    return constant_field(cfg.env_box, per_edge).adjacency()


def _evolve_particles(state: EnvState, dt: float):
    from . import kernels
    cfg = state.config
    adj = _particle_adjacency(cfg)
    key = _env_key(cfg)
    positions = state.positions.copy()
    counters = state.counters.copy()
    events = []
    for pid in range(len(positions)):
        pkey = derive_key(key, 100 + pid)
        times, sites, _, cend = kernels.simulate_path(
            adj.nbr, adj.rate, adj.total, int(positions[pid]), dt,
            pkey, int(counters[pid]))
        for j in range(len(times)):
            events.append(("jump", state.t + float(times[j]), pid,
                           int(sites[j]), int(sites[j + 1])))
        positions[pid] = sites[-1]
        counters[pid] = cend
    events.sort(key=lambda e: e[1])
    return (EnvState(cfg, state.t + dt, positions=positions, counters=counters),
            events)


def _evolve_spin(state: EnvState, dt: float):
    cfg = state.config
    box = cfg.env_box
    nbr = box.neighbor_table()
    key = derive_key(_env_key(cfg), 2)
    eta = state.eta.copy()
    rates = flip_rates(eta, box, cfg.beta, nbr)
    t = 0.0
    c = state.cursor
    events = []
    while True:
        total = float(rates.sum())
        u = uniform_at(key, c)
        c += 1
        t += -math.log(u) / total
        if t > dt:
            c += 1  # matching site draw of the censored event
            break
        u2 = uniform_at(key, c)
        c += 1
        x = int(np.searchsorted(np.cumsum(rates), u2 * total))
        x = min(x, box.n_sites - 1)
        eta[x] = 1 - eta[x]
        events.append(("flip", state.t + t, x))
        touched = [x] + [int(j) for j in nbr[x] if j >= 0]
        sigma = 2.0 * eta - 1.0
        for y in set(touched):
            h = sum(sigma[j] for j in nbr[y] if j >= 0)
            rates[y] = math.exp(-cfg.beta * sigma[y] * h)
    return EnvState(cfg, state.t + dt, eta=eta, cursor=c), events


def evolve_coupled_spins(eta_low: np.ndarray, eta_high: np.ndarray,
                         box: LatticeBox, beta: float, horizon: float,
                         key: int):
    """Synchronous monotone coupling of two spin systems.

    Both copies share Poisson clocks (uniformized at 2*e^{2d beta} per site,
    which dominates any up-rate plus any down-rate) and uniforms; for
    attractive rates this preserves eta_low <= eta_high pathwise.  Returns
    the two final configurations and the ring times.
    """
    nbr = box.neighbor_table()
    n = box.n_sites
    cap = 2.0 * math.exp(2 * box.dim * beta)
    lo = eta_low.astype(np.int8).copy()
    hi = eta_high.astype(np.int8).copy()
    t = 0.0
    c = 0
    rings = []
    while True:
        u = uniform_at(key, c)
        c += 1
        t += -math.log(u) / (n * cap)
        if t > horizon:
            break
        x = int(uniform_at(key, c) * n)
        c += 1
        x = min(x, n - 1)
        u3 = uniform_at(key, c)
        c += 1
        for eta in (lo, hi):
            rate = _site_flip_rate(eta, nbr, beta, x)
            up_prob = rate / cap if eta[x] == 0 else 1.0 - rate / cap
            eta[x] = 1 if u3 < up_prob else 0
        rings.append(t)
    return lo, hi, rings


def _site_flip_rate(eta, nbr, beta, x) -> float:
    sigma_x = 2.0 * eta[x] - 1.0
    h = sum(2.0 * eta[j] - 1.0 for j in nbr[x] if j >= 0)
    return math.exp(-beta * sigma_x * h)


# -- trajectories -------------------------------------------------------------

@dataclass
class EnvTrajectory:
    config: EnvConfig
    horizon: float
    initial: EnvState
    events: list
    final: EnvState

    def segments(self):
        """Yield (t0, t1, occupancy) pieces covering [0, horizon]."""
        occ = self.initial.occupancy().astype(np.float64)
        t0 = 0.0
        for ev in self.events:
            t1 = ev[1]
            if t1 > t0:
                yield t0, t1, occ
            occ = occ.copy()
            if ev[0] == "jump":
                occ[ev[3]] -= 1
                occ[ev[4]] += 1
            else:
                occ[ev[2]] = 1.0 - occ[ev[2]]
            t0 = t1
        if self.horizon > t0:
            yield t0, self.horizon, occ

    def brownian_increments(self, grid: np.ndarray, n_sites: int) -> np.ndarray:
        """White-noise increments, shape [len(grid)-1, n_sites]; only valid
        for the white_noise kind."""
        if self.config.kind != "white_noise":
            raise ConfigError("brownian increments exist only for white noise")
        steps = np.diff(grid)
        rng = np.random.Generator(np.random.Philox(
            key=derive_key(_env_key(self.config), 7)))
        return rng.standard_normal((len(steps), n_sites)) * np.sqrt(steps)[:, None]


def build_trajectory(config: EnvConfig, horizon: float) -> EnvTrajectory:
    initial = sample_initial(config)
    if config.kind == "white_noise":
        return EnvTrajectory(config, horizon, initial, [], initial)
    final, events = evolve(initial, horizon)
    return EnvTrajectory(config, horizon, initial, events, final)


def field_value(traj: EnvTrajectory, x, t: float) -> float:
    """xi(x, t), right-continuous in t, reconstructed from the event log."""
    if traj.config.kind == "white_noise":
        raise ConfigError("white noise has no pointwise field value")
    if not 0 <= t <= traj.horizon:
        raise ConfigError("t outside the trajectory horizon")
    box = traj.config.env_box
    idx = box.index(x) if not np.isscalar(x) else int(x)
    occ = traj.initial.occupancy()
    for ev in traj.events:
        if ev[1] > t:
            break
        if ev[0] == "jump":
            occ[ev[3]] -= 1
            occ[ev[4]] += 1
        else:
            occ[ev[2]] = 1 - occ[ev[2]]
    return float(occ[idx])


def check_detailed_balance(beta: float, env_box: LatticeBox) -> float:
    """Max over (configuration, site) of |c(x,eta) pi(eta) - c(x,eta^x)
    pi(eta^x)| under the exact Gibbs weights; 0 for reversible dynamics."""
    n = env_box.n_sites
    if n > EXACT_GIBBS_MAX_SITES:
        raise ConfigError("detailed-balance check needs <= 20 sites")
    logw = gibbs_log_weights(env_box, beta)
    w = np.exp(logw - logw.max())
    pi = w / w.sum()
    nbr = env_box.neighbor_table()
    configs = np.arange(1 << n, dtype=np.int64)
    worst = 0.0
    for x in range(n):
        sigma_x = 2.0 * ((configs >> x) & 1) - 1.0
        h = np.zeros(1 << n)
        for j in nbr[x]:
            if j >= 0:
                h += 2.0 * ((configs >> int(j)) & 1) - 1.0
        c_rate = np.exp(-beta * sigma_x * h)
        flipped = configs ^ (1 << x)
        resid = np.abs(c_rate * pi - (np.exp(-beta * (-sigma_x) * h) * pi[flipped]))
        worst = max(worst, float(resid.max()))
    return worst


def save_events(traj: EnvTrajectory, fname: str) -> None:
    """CSV `time,kind,site(,target_site)`, time-sorted; site columns are
    coordinates joined by ':'."""
    box = traj.config.env_box
    with open(fname, "w") as fh:
        for ev in traj.events:
            if ev[0] == "jump":
                a = ":".join(str(c) for c in box.coords(ev[3]))
                b = ":".join(str(c) for c in box.coords(ev[4]))
                fh.write(f"{ev[1]!r},jump,{a},{b}\n")
            else:
                a = ":".join(str(c) for c in box.coords(ev[2]))
                fh.write(f"{ev[1]!r},flip,{a}\n")
