"""Monte Carlo moment estimators, the quenched solver, the source-following
w-equation, and the lattice Green function.

Moments are estimated through path representations: the p-th white-noise
moment is the expected exponential of the pairwise meeting time of p
conductance walks; the finite-system moment replaces pairs by crossings with
the environment walkers; the infinite-system moment integrates the
w-equation along the sampled walks.  Meeting times are accumulated exactly
(both trajectories are piecewise constant), so the only discretization error
anywhere is the quenched/w time-stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from . import kernels
from ._rng import derive_key, root_key
from .errors import ConfigError, StabilityError
from .lattice import (ClusterSpec, ConductanceField, DecoratedConductanceField,
                      LatticeBox, constant_field, decorated_to_effective)
from .environments import EnvConfig, EnvTrajectory, build_trajectory
from .walker import WalkPath, simulate_path


@dataclass
class MomentEstimate:
    p: int
    t: float
    value: float
    std_error: float
    replicas: int
    confined: Optional[object] = None
    batch_means: Optional[np.ndarray] = None
    seed: Optional[int] = None
    divergent: bool = False

    @property
    def log_value(self) -> float:
        return math.log(self.value)


def _pocket_mask(box: LatticeBox, pocket) -> np.ndarray:
    if isinstance(pocket, ClusterSpec):
        return box.subbox_mask(pocket.pocket_center, pocket.pocket_radius).astype(np.int8)
    if isinstance(pocket, LatticeBox):
        return box.subbox_mask(pocket.origin_offset, pocket.radius).astype(np.int8)
    raise ConfigError("pocket must be a ClusterSpec or a LatticeBox")


def _finish_estimate(weights: np.ndarray, p, T, pocket, seed,
                     n_batches) -> MomentEstimate:
    n = len(weights)
    value = float(weights.mean())
    if value <= 0.0:
        raise ConfigError(
            "every sampled integrand vanished (end-point or confinement "
            "indicator never hit); increase replicas")
    se = float(weights.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    batches = np.array([b.mean() for b in np.array_split(weights, n_batches)
                        if len(b)])
    return MomentEstimate(p, float(T), value, se, n, pocket, batches, seed)


def _as_effective(field) -> ConductanceField:
    if isinstance(field, DecoratedConductanceField):
        return decorated_to_effective(field)
    return field


def _split_replicas(n: int, workers: int) -> list:
    if workers <= 1 or n < 2 * workers:
        return [(0, n)]
    per = n // workers
    chunks = [(i * per, per) for i in range(workers)]
    last_r0 = workers * per
    if last_r0 < n:
        chunks.append((last_r0, n - last_r0))
    return chunks


def _bundle_chunk(args):
    from . import kernels as k
    (nbr, rate, total, start, T, p, key0, mask, r0, count) = args
    return k.bundle_overlap_batch(nbr, rate, total, start, T, p, count,
                                  key0, mask, r0)


def _cross_chunk(args):
    from . import kernels as k
    (nk, rk, tk, sk, ne, re_, te, se_, T, p, n_env, key0, mask, r0, count) = args
    return k.cross_overlap_batch(nk, rk, tk, sk, ne, re_, te, se_, T, p,
                                 n_env, count, key0, mask, r0)


def _pool_map(worker, jobs, workers):
    if len(jobs) == 1:
        return [worker(jobs[0])]
    import multiprocessing as mp
    with mp.get_context("fork").Pool(min(workers, len(jobs))) as pool:
        return pool.map(worker, jobs)


def moment_white_noise(field, p: int, T: float, replicas: int,
                       pocket=None, *, u0: str = "ones", seed: int = 0,
                       n_batches: int = 32, workers: int = 1) -> MomentEstimate:
    """Estimate E[u(0,T)^p] for space-time white noise.

    Samples p walks per replica and averages exp(total pairwise meeting
    time), optionally multiplied by the end-point factor (u0="delta0") and
    by the pocket-confinement indicator.
    """
    if p < 1:
        raise ConfigError("p must be >= 1")
    field = _as_effective(field)
    adj = field.adjacency()
    box = field.box
    mask = _pocket_mask(box, pocket) if pocket is not None else None
    key0 = root_key(seed)
    jobs = [(adj.nbr, adj.rate, adj.total, box.origin_index, T, p, key0,
             mask, r0, count)
            for r0, count in _split_replicas(replicas, workers)]
    parts = _pool_map(_bundle_chunk, jobs, workers)
    overlaps = np.concatenate([p_[0] for p_ in parts])
    ends = np.concatenate([p_[1] for p_ in parts])
    inside = np.concatenate([p_[2] for p_ in parts])
    weights = np.exp(overlaps)
    if u0 == "delta0":
        weights = weights * np.all(ends == box.origin_index, axis=1)
    elif u0 != "ones":
        raise ConfigError("u0 must be 'ones' or 'delta0'")
    if pocket is not None:
        weights = weights * inside
    return _finish_estimate(weights, p, T, pocket, seed, n_batches)


def moment_finite_rw(field, p: int, n: int, rho: float, T: float,
                     replicas: int, pocket=None, *, u0: str = "ones",
                     seed: int = 0, n_batches: int = 32,
                     workers: int = 1) -> MomentEstimate:
    """E[u(0,T)^p] for n independent environment walkers started at the
    origin and jumping at total rate 2*d*rho."""
    if p < 1 or n < 0:
        raise ConfigError("need p >= 1 and n >= 0")
    field = _as_effective(field)
    adj = field.adjacency()
    box = field.box
    mask = _pocket_mask(box, pocket) if pocket is not None else None
    key0 = root_key(seed)
    if n == 0:
        weights = np.ones(replicas)
        ends = np.full((replicas, p), box.origin_index)
    else:
        env_adj = constant_field(box, rho).adjacency()
        jobs = [(adj.nbr, adj.rate, adj.total, box.origin_index,
                 env_adj.nbr, env_adj.rate, env_adj.total, box.origin_index,
                 T, p, n, key0, mask, r0, count)
                for r0, count in _split_replicas(replicas, workers)]
        parts = _pool_map(_cross_chunk, jobs, workers)
        overlaps = np.concatenate([p_[0] for p_ in parts])
        ends = np.concatenate([p_[1] for p_ in parts])
        inside = np.concatenate([p_[2] for p_ in parts])
        weights = np.exp(overlaps)
        if pocket is not None:
            weights = weights * inside
    if u0 == "delta0":
        weights = weights * np.all(ends == box.origin_index, axis=1)
    elif u0 != "ones":
        raise ConfigError("u0 must be 'ones' or 'delta0'")
    return _finish_estimate(weights, p, T, pocket, seed, n_batches)


# -- w-equation ---------------------------------------------------------------

def unit_laplacian(box: LatticeBox) -> sp.csr_matrix:
    """Rate-1-per-edge lattice Laplacian (the environment walks' generator
    normalization: each particle jumps at total rate 2d)."""
    return field_laplacian(constant_field(box, 1.0))


def field_laplacian(field: ConductanceField) -> sp.csr_matrix:
    adj = field.adjacency()
    S = field.box.n_sites
    rows, cols, data = [], [], []
    for slot in range(adj.nbr.shape[1]):
        ok = adj.nbr[:, slot] >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(adj.nbr[ok, slot])
        data.append(adj.rate[ok, slot])
    rows = np.concatenate(rows + [np.arange(S)])
    cols = np.concatenate(cols + [np.arange(S)])
    data = np.concatenate(data + [-adj.total])
    return sp.coo_matrix((data, (rows, cols)), shape=(S, S)).tocsr()


@dataclass
class WSolveResult:
    times: np.ndarray        # macro grid
    w_origin: np.ndarray     # w(0, t) on the macro grid
    integrals: np.ndarray    # per path: integral of w along the walk
    w_final: np.ndarray
    grid: Optional[np.ndarray] = None   # full w history when requested


def solve_w_along_path(paths: Sequence[WalkPath], env_box: LatticeBox,
                       T: float, dt: float,
                       keep_grid: bool = False) -> WSolveResult:
    """Integrate dw/dt = Lap w + sum_i delta_{X_i(t)} (w + 1), w(.,0) = 0.

    The source follows the frozen paths; the per-path integrals of
    w(X_i(s), s) ds are accumulated with the same explicit stepping.
    """
    p = len(paths)
    if dt * (2 * env_box.dim + max(p, 1)) >= 0.5:
        raise StabilityError(
            f"dt={dt} unstable for the w-equation",
            suggested_dt=0.4 / (2 * env_box.dim + max(p, 1)))
    lap = unit_laplacian(env_box)
    S = env_box.n_sites
    n_steps = max(1, int(round(T / dt)))
    dt = T / n_steps if T > 0 else dt
    # walker positions resampled onto env_box indices, one lookup per step
    path_sites = [_sites_on_grid(path, env_box, n_steps, dt) for path in paths]
    w = np.zeros(S)
    w_origin = np.zeros(n_steps + 1)
    integrals = np.zeros(p)
    hist = np.zeros((n_steps + 1, S)) if keep_grid else None
    origin = env_box.origin_index
    for k in range(n_steps):
        src = np.zeros(S)
        for i in range(p):
            x = path_sites[i][k]
            integrals[i] += w[x] * dt
            src[x] += 1.0
        w = w + dt * (lap @ w + src * (w + 1.0))
        w_origin[k + 1] = w[origin]
        if keep_grid is True:
            hist[k + 1] = w
    times = np.linspace(0.0, n_steps * dt, n_steps + 1)
    return WSolveResult(times, w_origin, integrals, w, hist)


def _sites_on_grid(path: WalkPath, env_box: LatticeBox, n_steps: int,
                   dt: float) -> np.ndarray:
    """Walker's env-box site index at each step start (left endpoint)."""
    env_idx = np.array([env_box.index(path.box.coords(int(s)))
                        for s in path.sites], dtype=np.int64)
    starts = np.arange(n_steps) * dt
    seg = np.searchsorted(path.jump_times, starts, side="right")
    return env_idx[seg]


def moment_infinite_rw(field, p: int, nu: float, T: float, replicas: int,
                       *, dt: float = 0.02, env_radius: Optional[int] = None,
                       seed: int = 0, n_batches: int = 16) -> MomentEstimate:
    """E[u(0,T)^p] for the infinite particle system via the w-representation:
    e^{nu p T} times the expected exponential of nu * sum_i int w(X_i).

    The estimate carries a divergence warning when p is at or above the
    transience threshold 1/G(0) (always, in d <= 2)."""
    field = _as_effective(field)
    box = field.box
    if env_radius is None:
        env_radius = box.radius + int(math.ceil(2.0 * math.sqrt(max(T, 1.0)))) + 2
    env_box = LatticeBox(box.dim, env_radius, "absorbing")
    key0 = root_key(seed)
    logs = np.empty(replicas)
    for r in range(replicas):
        rep_key = derive_key(key0, r)
        paths = [simulate_path(field, box.origin_offset, T, 0,
                               key=derive_key(rep_key, i)) for i in range(p)]
        res = solve_w_along_path(paths, env_box, T, dt)
        logs[r] = nu * float(res.integrals.sum())
    weights = np.exp(logs + nu * p * T)
    est = _finish_estimate(weights, p, T, None, seed, n_batches)
    est.divergent = divergence_warning(box.dim, p)
    return est


_GREEN_CACHE: dict = {}


def divergence_warning(d: int, p: int, radius: int = 20) -> bool:
    """True when p >= 1/G(0) so the annealed moment grows super-exponentially
    (recurrent dimensions diverge for every p)."""
    if d <= 2:
        return True
    if (d, radius) not in _GREEN_CACHE:
        _GREEN_CACHE[(d, radius)] = green_function(d, radius)
    return p >= _GREEN_CACHE[(d, radius)].threshold


# -- Green function -----------------------------------------------------------

@dataclass
class GreenFunctionResult:
    dim: int
    value: float            # G(0), continuous-time normalization
    method: str             # "linear_solve(R)" or "divergent"
    threshold: float        # 1/G(0); 0 when divergent
    diagnostics: dict

    def wbar_limit(self, p: float) -> float:
        if not math.isfinite(self.value):
            return math.inf
        if p >= self.threshold:
            return math.inf
        return p * self.value / (1.0 - p * self.value)


def green_function(d: int, radius: int) -> GreenFunctionResult:
    """G(0) of the rate-2d walk: solve (-Lap) g = delta_0 with zero boundary.

    The rate-1-per-edge generator makes the continuous-time value equal to
    the discrete-time Green value divided by 2d.  d <= 2 is flagged
    divergent without solving.
    """
    if d < 1:
        raise ConfigError("d must be >= 1")
    if d <= 2:
        return GreenFunctionResult(d, math.inf, "divergent", 0.0, {})
    g_half = _green_solve(d, max(2, radius // 2))
    g_full = _green_solve(d, radius)
    diag = {"radius": radius, "value": g_full,
            "half_radius": max(2, radius // 2), "half_value": g_half,
            "increment": g_full - g_half}
    return GreenFunctionResult(d, g_full, f"linear_solve({radius})",
                               1.0 / g_full, diag)


def _green_solve(d: int, radius: int) -> float:
    box = LatticeBox(d, radius, "absorbing")
    nbr = box.neighbor_table()
    S = box.n_sites
    rows, cols = [], []
    for slot in range(2 * d):
        ok = nbr[:, slot] >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(nbr[ok, slot])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    A = sp.coo_matrix((-np.ones(len(rows)), (rows, cols)), shape=(S, S)).tocsr()
    A = A + sp.diags(np.full(S, 2.0 * d))   # full diagonal: killed outside
    b = np.zeros(S)
    b[box.origin_index] = 1.0
    g, info = cg(A, b, rtol=1e-12, atol=0.0, maxiter=10 * radius + 200)
    if info != 0:
        raise RuntimeError(f"Green-function CG did not converge (info={info})")
    return float(g[box.origin_index])


# -- quenched solver -----------------------------------------------------------

@dataclass(frozen=True)
class FrozenField:
    """A static potential xi(x); stands in for a frozen environment."""
    values: np.ndarray


@dataclass
class QuenchedSolution:
    box: LatticeBox
    dt: float
    initial: str
    times: np.ndarray
    fields: np.ndarray       # [len(times), S] solution snapshots (rescaled)
    log_scales: np.ndarray   # additive log factors per snapshot

    def u(self, t: float, site: Optional[int] = None) -> float:
        k = self._locate(t)
        idx = self.box.origin_index if site is None else site
        return float(self.fields[k, idx] * math.exp(self.log_scales[k]))

    def log_u(self, t: float, site: Optional[int] = None) -> float:
        k = self._locate(t)
        idx = self.box.origin_index if site is None else site
        v = self.fields[k, idx]
        if v <= 0.0:
            raise ConfigError("u(0,t) vanished; log-domain value undefined")
        return math.log(v) + float(self.log_scales[k])

    def _locate(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 + 1e-6 * max(1.0, abs(t)):
            raise ConfigError(f"t={t} is not a stored snapshot time")
        return k


def solve_quenched(field, env, initial: str, T: float, dt: float,
                   checkpoints: Optional[Sequence[float]] = None,
                   confine_to: Optional[object] = None) -> QuenchedSolution:
    """March the lattice equation du/dt = Lap_K u + xi u on the field's box.

    The diagonal factor is applied exactly (environment events subdivide the
    steps); the conductance Laplacian uses an explicit Euler step, giving a
    positivity-preserving scheme under the stability precondition
    dt * max(total rate + |xi|) < 0.5.  White noise uses Euler-Maruyama with
    Ito increments instead.

    `confine_to` (a ClusterSpec or LatticeBox) kills the walk outside the
    pocket: off-pocket couplings are dropped while the full exit rates stay
    on the diagonal.
    """
    field = _as_effective(field)
    box = field.box
    if initial not in ("delta0", "ones"):
        raise ConfigError("initial must be 'delta0' or 'ones'")
    lap = field_laplacian(field)
    if confine_to is not None:
        lap = _confine_matrix(lap, _pocket_mask(box, confine_to).astype(bool))
    S = box.n_sites

    white = isinstance(env, EnvConfig) and env.kind == "white_noise"
    traj = env if isinstance(env, EnvTrajectory) else None
    if isinstance(env, EnvConfig) and not white:
        raise ConfigError("pass an EnvTrajectory for event-driven kinds")

    xi_max = 0.0
    if isinstance(env, FrozenField):
        if len(env.values) != S:
            raise ConfigError("frozen field length must match the box")
        xi_max = float(np.max(np.abs(env.values)))
    elif traj is not None:
        xi_max = max((float(np.max(np.abs(occ))) for _, _, occ in traj.segments()),
                     default=0.0)
    kmax = float(field.adjacency().total.max()) if S > 1 else 0.0
    if dt * (kmax + xi_max) >= 0.5:
        raise StabilityError(
            f"dt={dt} violates dt*max(rate+|xi|) < 0.5",
            suggested_dt=0.4 / max(kmax + xi_max, 1e-12))

    n_steps = max(1, int(round(T / dt)))
    dt = T / n_steps if T > 0 else dt
    grid = np.arange(n_steps + 1) * dt
    check = _checkpoint_indices(grid, checkpoints, T)

    u = np.zeros(S)
    if initial == "delta0":
        u[box.origin_index] = 1.0
    else:
        u[:] = 1.0

    xi_step = _diagonal_integrals(traj, env, S, grid, box)
    noise_rng = None
    if white:
        noise_rng = np.random.Generator(np.random.Philox(
            key=derive_key(root_key(env.seed), 7)))

    log_scale = 0.0
    snaps, scales = [], []
    if 0 in check:
        snaps.append(u.copy())
        scales.append(log_scale)
    for k in range(n_steps):
        u = u + dt * (lap @ u)
        if white:
            u = u + u * noise_rng.standard_normal(S) * math.sqrt(dt)
        elif xi_step is not None:
            u = u * np.exp(xi_step[k])
        if not white:
            m = float(u.max())
            if m > 0.0 and (m > 1e100 or m < 1e-100):
                u /= m
                log_scale += math.log(m)
        if (k + 1) in check:
            snaps.append(u.copy())
            scales.append(log_scale)
    times = grid[sorted(check)]
    return QuenchedSolution(box, dt, initial, times,
                            np.array(snaps), np.array(scales))


def _checkpoint_indices(grid, checkpoints, T) -> set:
    if checkpoints is None:
        return {0, len(grid) - 1}
    out = set()
    for t in checkpoints:
        k = int(round(t / (grid[1] - grid[0]))) if len(grid) > 1 else 0
        if not (0 <= k < len(grid)) or abs(grid[k] - t) > 1e-9 * max(1.0, T):
            raise ConfigError(f"checkpoint {t} is not on the time grid")
        out.add(k)
    return out


def _confine_matrix(lap: sp.csr_matrix, inside: np.ndarray) -> sp.csr_matrix:
    """Zero all couplings that touch the outside; keep the full diagonal
    (exit rates continue to drain mass: the walk is killed, not reflected)."""
    mat = lap.tocoo()
    keep = inside[mat.row] & inside[mat.col]
    diag = mat.row == mat.col
    sel = keep | diag
    out = sp.coo_matrix((mat.data[sel], (mat.row[sel], mat.col[sel])),
                        shape=mat.shape).tocsr()
    # outside sites are irrelevant; zero their rows/cols entirely
    scale = sp.diags(inside.astype(float))
    return (scale @ out @ scale).tocsr()


def _diagonal_integrals(traj, env, S, grid, box):
    """Exact per-step integral of xi(x, s) ds for every site, or None."""
    n_steps = len(grid) - 1
    if isinstance(env, FrozenField):
        dt = grid[1] - grid[0]
        return np.tile(env.values * dt, (n_steps, 1))
    if traj is None:
        return None
    env_box = traj.config.env_box
    emap = np.array([env_box.index(box.coords(i)) for i in range(S)],
                    dtype=np.int64)
    out = np.zeros((n_steps, S))
    for t0, t1, occ in traj.segments():
        t1 = min(t1, grid[-1])
        if t1 <= t0:
            continue
        k0 = int(np.searchsorted(grid, t0, side="right")) - 1
        k1 = int(np.searchsorted(grid, t1, side="left"))
        for k in range(max(k0, 0), min(k1, n_steps)):
            lo = max(t0, grid[k])
            hi = min(t1, grid[k + 1])
            if hi > lo:
                out[k] += occ[emap] * (hi - lo)
    return out


def _quenched_chunk(args):
    field, env_config, T_grid, dt, pocket, key0, r0, count = args
    horizon = T_grid[-1]
    logs = np.empty((count, len(T_grid)))
    for r in range(count):
        env = _replica_env(env_config, derive_key(key0, r0 + r), horizon, field)
        sol = solve_quenched(field, env, "delta0", horizon, dt,
                             checkpoints=T_grid, confine_to=pocket)
        for j, t in enumerate(T_grid):
            logs[r, j] = sol.log_u(t)
    return logs


def quenched_exponent_estimate(field, env_config, T_grid: Sequence[float],
                               dt: float, pocket=None, *, replicas: int = 32,
                               seed: int = 0, n_batches: int = 8,
                               workers: int = 1):
    """(1/t) log u(0,t) per grid time, averaged over environment draws.

    One frozen environment realization per replica (mean over realizations:
    the in-mean form of the quenched limit); delta initial condition as the
    quenched theory requires.  Returns a LyapunovEstimate.
    """
    from .lyapunov import estimate_exponent  # local import breaks the cycle

    field = _as_effective(field)
    T_grid = sorted(float(t) for t in T_grid)
    key0 = root_key(seed)
    jobs = [(field, env_config, T_grid, dt, pocket, key0, r0, count)
            for r0, count in _split_replicas(replicas, workers)]
    parts = _pool_map(_quenched_chunk, jobs, workers)
    logs = np.concatenate(parts, axis=0)
    series = []
    for j, t in enumerate(T_grid):
        per_rep = logs[:, j] / t
        batches = np.array([b.mean() for b in
                            np.array_split(per_rep, n_batches) if len(b)])
        series.append({"t": t, "exponent_mean": float(per_rep.mean()),
                       "exponent_se": float(per_rep.std(ddof=1) / math.sqrt(replicas)),
                       "batch_means": batches})
    return estimate_exponent(series, p=0)


def _replica_env(env_config, rep_seed: int, horizon: float, field):
    if isinstance(env_config, FrozenField):
        return env_config
    if env_config is None:
        return None
    if not isinstance(env_config, EnvConfig):
        raise ConfigError("env_config must be an EnvConfig or FrozenField")
    if env_config.kind == "white_noise":
        raise ConfigError("quenched exponents need a pointwise environment; "
                          "white-noise solutions may change sign")
    if env_config.env_box.radius < field.box.radius or \
            env_config.env_box.dim != field.box.dim:
        raise ConfigError("env_box must contain the field box")
    return build_trajectory(replace(env_config, seed=rep_seed), horizon)


def save_estimates(estimates: Sequence[MomentEstimate], path: str) -> None:
    """CSV export `p,t,log_moment,std_error,replicas,confined_radius`."""
    with open(path, "w") as fh:
        fh.write("p,t,log_moment,std_error,replicas,confined_radius\n")
        for e in estimates:
            r = ""
            if isinstance(e.confined, ClusterSpec):
                r = str(e.confined.pocket_radius)
            elif isinstance(e.confined, LatticeBox):
                r = str(e.confined.radius)
            fh.write(f"{e.p},{e.t!r},{e.log_value!r},{e.std_error!r},"
                     f"{e.replicas},{r}\n")
