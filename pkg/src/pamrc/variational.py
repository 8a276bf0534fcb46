"""Finite truncations of the self-adjoint moment operators and their top
eigenvalues.

Each dynamics has an operator whose largest eigenvalue, divided by p, is the
p-th annealed exponent on the truncation: a coincidence potential plus p
conductance-walk generators (white noise), plus environment-walk generators
(finite system), plus a measure-weighted environment generator (infinite
system, spin flips).  Measure-weighted parts are symmetrized by the diagonal
sqrt-weight similarity so a single symmetric eigensolver serves all four.

Truncation boundary for walk coordinates follows the box geometry:
"absorbing" is the zero-outside restriction (full exit rates stay on the
diagonal, trial spaces nest, so the eigenvalue grows monotonically with the
radius); "periodic" wraps and typically approaches the infinite-volume value
from above.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BudgetError, ConfigError
from .lattice import ConductanceField, LatticeBox

DENSE_CUTOFF = 600
DEFAULT_BUDGET = 500_000


@dataclass
class OperatorSpec:
    state_space: dict
    matrix: sp.csr_matrix
    dim: int
    p: int
    weighting: Optional[np.ndarray] = None   # sqrt-measure diagonal, if any


@dataclass
class EigenResult:
    lambda_max: float
    iterations: int
    residual: float
    lambda_p: float
    converged: bool = True


FieldLike = Union[ConductanceField, float]


def _edge_rate_fn(field: FieldLike, box: LatticeBox):
    """Returns rate(a_site_coords, b_site_coords) plus the full per-site exit
    rate used on the Dirichlet diagonal."""
    if isinstance(field, ConductanceField):
        if box.dim != field.box.dim:
            raise ConfigError("truncation box dimension mismatch")
        if box.geometry == "periodic" and box != field.box:
            raise ConfigError("periodic truncation requires box == field.box")

        fbox = field.box

        def rate(ca, cb):
            return field.rate(fbox.index(ca), fbox.index(cb))

        def exit_rate(ca):
            a = fbox.index(ca)
            return field.total_rate(a)

        return rate, exit_rate
    kappa = float(field)
    if kappa < 0:
        raise ConfigError("kappa must be >= 0")
    return (lambda ca, cb: kappa), (lambda ca: 2 * box.dim * kappa)


def single_walk_matrix(field: FieldLike, box: LatticeBox) -> sp.csr_matrix:
    """Generator of one conductance walk on the truncation box.

    Off-diagonal entries are assembled once per unordered pair, so the
    matrix is exactly symmetric.
    """
    rate, exit_rate = _edge_rate_fn(field, box)
    S = box.n_sites
    nbr = box.neighbor_table()
    rows, cols, data = [], [], []
    diag = np.zeros(S)
    for a in range(S):
        ca = box.coords(a)
        if box.geometry == "periodic":
            for slot in range(2 * box.dim):
                b = int(nbr[a, slot])
                if b >= 0 and b != a:
                    diag[a] -= rate(ca, box.coords(b))
        else:
            diag[a] = -exit_rate(ca)
        for slot in range(2 * box.dim):
            b = int(nbr[a, slot])
            if b > a:
                v = rate(ca, box.coords(b))
                if v != 0.0:
                    rows.extend((a, b))
                    cols.extend((b, a))
                    data.extend((v, v))
    rows.extend(range(S))
    cols.extend(range(S))
    data.extend(diag)
    return sp.coo_matrix((data, (rows, cols)), shape=(S, S)).tocsr()


def _kron_sum(mats):
    """sum_i I x .. x mats[i] x .. x I (Kronecker), each term exact."""
    total = None
    sizes = [m.shape[0] for m in mats]
    for i, m in enumerate(mats):
        left = int(np.prod(sizes[:i])) if i else 1
        right = int(np.prod(sizes[i + 1:])) if i + 1 < len(mats) else 1
        term = sp.kron(sp.identity(left, format="csr"),
                       sp.kron(m, sp.identity(right, format="csr"), format="csr"),
                       format="csr")
        total = term if total is None else total + term
    return total


def _check_budget(dim: int, budget: int):
    if dim > budget:
        raise BudgetError(f"state space of dim {dim} exceeds the budget "
                          f"{budget}", dim=dim)


def _coincidence_diag(S: int, p: int) -> np.ndarray:
    """Number of coinciding index pairs (i<j) for every point of S^p."""
    idx = np.arange(S ** p)
    coords = np.empty((p, S ** p), dtype=np.int64)
    for i in reversed(range(p)):
        coords[i] = idx % S
        idx = idx // S
    out = np.zeros(S ** p)
    for i in range(p):
        for j in range(i + 1, p):
            out += coords[i] == coords[j]
    return out


def build_wn_operator(field: FieldLike, p: int, box: LatticeBox,
                      size_budget: int = DEFAULT_BUDGET) -> OperatorSpec:
    """White-noise moment operator on box^p: pairwise-coincidence potential
    plus p walk generators."""
    if p < 1:
        raise ConfigError("p must be >= 1")
    S = box.n_sites
    dim = S ** p
    _check_budget(dim, size_budget)
    W = single_walk_matrix(field, box)
    H = _kron_sum([W] * p) + sp.diags(_coincidence_diag(S, p))
    return OperatorSpec({"kind": "walks_p", "p": p, "box_radius": box.radius,
                         "geometry": box.geometry, "dim": dim},
                        H.tocsr(), dim, p)


def build_firw_operator(field: FieldLike, p: int, n: int, rho: float,
                        box: LatticeBox,
                        size_budget: int = DEFAULT_BUDGET) -> OperatorSpec:
    """Finite-environment operator on box^(p+n): cross-coincidence potential,
    p conductance walks, n rate-rho simple walks."""
    if p < 1 or n < 0:
        raise ConfigError("need p >= 1, n >= 0")
    S = box.n_sites
    dim = S ** (p + n)
    _check_budget(dim, size_budget)
    WK = single_walk_matrix(field, box)
    WE = single_walk_matrix(float(rho), box)
    H = _kron_sum([WK] * p + [WE] * n)
    if n > 0:
        H = H + sp.diags(_cross_coincidence_diag(S, p, n))
    return OperatorSpec({"kind": "walks_p_plus_n", "p": p, "n": n, "rho": rho,
                         "box_radius": box.radius, "geometry": box.geometry,
                         "dim": dim}, H.tocsr(), dim, p)


def _cross_coincidence_diag(S: int, p: int, n: int) -> np.ndarray:
    idx = np.arange(S ** (p + n))
    coords = np.empty((p + n, S ** (p + n)), dtype=np.int64)
    for i in reversed(range(p + n)):
        coords[i] = idx % S
        idx = idx // S
    out = np.zeros(S ** (p + n))
    for i in range(p):
        for j in range(p, p + n):
            out += coords[i] == coords[j]
    return out


# -- occupancy-weighted operator (infinite system) ----------------------------

def _enumerate_occupancies(n_sites: int, cap: int) -> np.ndarray:
    """int64[(cap+1)^n_sites, n_sites] in mixed-radix order."""
    n_cfg = (cap + 1) ** n_sites
    idx = np.arange(n_cfg)
    out = np.empty((n_cfg, n_sites), dtype=np.int64)
    for s in reversed(range(n_sites)):
        out[:, s] = idx % (cap + 1)
        idx = idx // (cap + 1)
    return out


def _truncated_poisson_logpmf(nu: float, cap: int) -> np.ndarray:
    k = np.arange(cap + 1)
    logp = k * math.log(nu) - np.array([math.lgamma(x + 1) for x in k])
    logp -= _logsumexp(logp)
    return logp


def _logsumexp(v):
    m = np.max(v)
    return m + math.log(float(np.sum(np.exp(v - m))))


def wrap_into(env_box: LatticeBox, coords) -> int:
    """Site index of `coords` wrapped onto the periodic environment box."""
    side = env_box.side
    wrapped = []
    for a in range(env_box.dim):
        rel = coords[a] - env_box.origin_offset[a] + env_box.radius
        wrapped.append(rel % side - env_box.radius + env_box.origin_offset[a])
    return env_box.index(wrapped)


def build_iirw_operator(field: FieldLike, p: int, nu: float, N: int, M: int,
                        env_box: LatticeBox, box: LatticeBox,
                        size_budget: int = DEFAULT_BUDGET) -> OperatorSpec:
    """Infinite-system operator: capped-occupancy hopping generator
    (symmetrized in the truncated product-Poisson measure), p walk
    generators, and the capped potential sum_i min(N, eta(x_i)).
    """
    if env_box.geometry != "periodic":
        raise ConfigError("the environment box must be periodic")
    if M < N:
        warnings.warn("occupancy cap M below the potential cap N: the "
                      "potential never saturates at N", stacklevel=2)
    n_env = env_box.n_sites
    n_cfg = (M + 1) ** n_env
    S = box.n_sites
    dim = n_cfg * (S ** p)
    _check_budget(dim, size_budget)

    configs = _enumerate_occupancies(n_env, M)
    logpmf = _truncated_poisson_logpmf(nu, M)
    logmu = logpmf[configs].sum(axis=1)

    env_nbr = env_box.neighbor_table()
    rows, cols, data = [], [], []
    diag = np.zeros(n_cfg)
    pow_site = (M + 1) ** np.arange(n_env - 1, -1, -1)
    for a_idx in range(n_cfg):
        eta = configs[a_idx]
        for x in range(n_env):
            if eta[x] == 0:
                continue
            for slot in range(2 * env_box.dim):
                y = int(env_nbr[x, slot])
                if y < 0 or y == x:
                    continue
                if eta[y] >= M:
                    continue  # move blocked by the occupancy cap
                rate = float(eta[x])
                diag[a_idx] -= rate
                b_idx = a_idx - pow_site[x] + pow_site[y]
                if a_idx < b_idx:
                    flow = math.exp(logmu[a_idx]) * rate
                    v = flow * math.exp(-0.5 * (logmu[a_idx] + logmu[b_idx]))
                    rows.extend((a_idx, b_idx))
                    cols.extend((b_idx, a_idx))
                    data.extend((v, v))
    rows.extend(range(n_cfg))
    cols.extend(range(n_cfg))
    data.extend(diag)
    L_env = sp.coo_matrix((data, (rows, cols)), shape=(n_cfg, n_cfg)).tocsr()

    W = single_walk_matrix(field, box)
    walk = _kron_sum([W] * p)
    H = sp.kron(L_env, sp.identity(S ** p, format="csr"), format="csr") \
        + sp.kron(sp.identity(n_cfg, format="csr"), walk, format="csr")

    emap = np.array([wrap_into(env_box, box.coords(i)) for i in range(S)])
    pot = _occupancy_potential(configs, emap, S, p, N)
    H = H + sp.diags(pot)
    weighting = np.exp(0.5 * logmu)
    return OperatorSpec({"kind": "env_occupancy", "p": p, "nu": nu, "N": N,
                         "M": M, "env_sites": n_env, "box_radius": box.radius,
                         "geometry": box.geometry, "dim": dim},
                        H.tocsr(), dim, p, weighting)


def _occupancy_potential(configs, emap, S, p, N) -> np.ndarray:
    """V(eta, x) = sum_i min(N, eta(x_i)) on the product enumeration (env
    index major, walk indices minor)."""
    n_cfg = len(configs)
    walk_dim = S ** p
    idx = np.arange(walk_dim)
    per_walk = np.zeros(walk_dim)
    capped = np.minimum(configs, N)   # [n_cfg, n_env]
    out = np.empty(n_cfg * walk_dim)
    coords = []
    for i in reversed(range(p)):
        coords.append(idx % S)
        idx = idx // S
    coords = coords[::-1]
    for a_idx in range(n_cfg):
        per_walk[:] = 0.0
        for i in range(p):
            per_walk += capped[a_idx][emap[coords[i]]]
        out[a_idx * walk_dim:(a_idx + 1) * walk_dim] = per_walk
    return out


# -- spin-flip operator --------------------------------------------------------

def build_spinflip_operator(field: FieldLike, p: int, beta: float,
                            env_box: LatticeBox, box: LatticeBox,
                            size_budget: int = DEFAULT_BUDGET,
                            drop_potential: bool = False) -> OperatorSpec:
    """Spin-flip operator: occupation potential sum_i eta(x_i), p walk
    generators, and the Glauber generator symmetrized in the exact Gibbs
    measure of the environment torus."""
    from .environments import gibbs_log_weights

    if env_box.geometry != "periodic":
        raise ConfigError("the environment box must be periodic")
    n_env = env_box.n_sites
    n_cfg = 1 << n_env
    S = box.n_sites
    dim = n_cfg * (S ** p)
    _check_budget(dim, size_budget)

    logw = gibbs_log_weights(env_box, beta)
    logmu = logw - _logsumexp(logw)
    env_nbr = env_box.neighbor_table()
    configs = np.arange(n_cfg, dtype=np.int64)

    rows, cols, data = [], [], []
    diag = np.zeros(n_cfg)
    for x in range(n_env):
        sigma_x = 2.0 * ((configs >> x) & 1) - 1.0
        h = np.zeros(n_cfg)
        for j in env_nbr[x]:
            if j >= 0:
                h += 2.0 * ((configs >> int(j)) & 1) - 1.0
        c_rate = np.exp(-beta * sigma_x * h)
        diag -= c_rate
        flipped = configs ^ (1 << x)
        up = configs < flipped
        a_idx = configs[up]
        b_idx = flipped[up]
        v = c_rate[up] * np.exp(logmu[a_idx] - 0.5 * (logmu[a_idx] + logmu[b_idx]))
        rows.extend(np.concatenate([a_idx, b_idx]))
        cols.extend(np.concatenate([b_idx, a_idx]))
        data.extend(np.concatenate([v, v]))
    rows = np.concatenate([np.asarray(rows, dtype=np.int64), np.arange(n_cfg)])
    cols = np.concatenate([np.asarray(cols, dtype=np.int64), np.arange(n_cfg)])
    data = np.concatenate([np.asarray(data), diag])
    L_env = sp.coo_matrix((data, (rows, cols)), shape=(n_cfg, n_cfg)).tocsr()

    W = single_walk_matrix(field, box)
    walk = _kron_sum([W] * p)
    H = sp.kron(L_env, sp.identity(S ** p, format="csr"), format="csr") \
        + sp.kron(sp.identity(n_cfg, format="csr"), walk, format="csr")
    if not drop_potential:
        emap = np.array([wrap_into(env_box, box.coords(i)) for i in range(S)])
        occ = np.stack([(configs >> x) & 1 for x in range(n_env)], axis=1)
        H = H + sp.diags(_occupancy_potential(occ, emap, S, p, N=1))
    weighting = np.exp(0.5 * logmu)
    return OperatorSpec({"kind": "env_spin", "p": p, "beta": beta,
                         "env_sites": n_env, "box_radius": box.radius,
                         "geometry": box.geometry, "dim": dim},
                        H.tocsr(), dim, p, weighting)


# -- eigen solve ----------------------------------------------------------------

def _start_vector(dim: int) -> np.ndarray:
    """All-ones plus a tiny deterministic wiggle; the wiggle guards against
    the (measure-zero) case of ones being orthogonal to the top eigenspace."""
    z = np.arange(dim, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(33))) * np.uint64(0xFF51AFD7ED558CCD)
        z = (z ^ (z >> np.uint64(33))) * np.uint64(0xC4CEB9FE1A85EC53)
        z = z ^ (z >> np.uint64(33))
    wiggle = z.astype(np.float64) / 2.0 ** 64 - 0.5
    v = 1.0 + 1e-4 * wiggle
    return v / np.linalg.norm(v)


def top_eigenvalue(op: OperatorSpec, tol: float = 1e-10,
                   max_iter: int = 20000) -> EigenResult:
    """Largest eigenvalue of the assembled symmetric matrix.

    Dense solve below DENSE_CUTOFF, restarted Lanczos above it, both from a
    deterministic start vector, so repeated runs agree bitwise per platform.
    """
    H = op.matrix
    if op.dim < 1:
        raise ConfigError("dim must be >= 1")
    if op.dim <= DENSE_CUTOFF:
        w, v = np.linalg.eigh(H.toarray())
        lam = float(w[-1])
        vec = v[:, -1]
        res = float(np.linalg.norm(H @ vec - lam * vec))
        return EigenResult(lam, 0, res, lam / op.p, True)
    matvecs = [0]

    def mv(x):
        matvecs[0] += 1
        return H @ x

    A = spla.LinearOperator(H.shape, matvec=mv, dtype=np.float64)
    v0 = _start_vector(op.dim)
    try:
        w, v = spla.eigsh(A, k=1, which="LA", v0=v0, maxiter=max_iter, tol=tol)
        lam = float(w[0])
        vec = v[:, 0]
        converged = True
    except spla.ArpackNoConvergence as exc:
        if len(exc.eigenvalues):
            lam = float(exc.eigenvalues[-1])
            vec = exc.eigenvectors[:, -1]
        else:  # fall back to the start vector estimate
            vec = v0
            lam = float(v0 @ (H @ v0))
        converged = False
    res = float(np.linalg.norm(H @ vec - lam * vec) / np.linalg.norm(vec))
    return EigenResult(lam, matvecs[0], res, lam / op.p, converged)


def kappa_sweep(builder, kappa_grid, p: int, box: LatticeBox, **kwargs):
    """lambda_p over an increasing grid of constant conductances, plus first
    and second finite differences of the curve."""
    grid = [float(k) for k in kappa_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("kappa grid must be strictly increasing")
    lams = []
    for kappa in grid:
        op = builder(kappa, p, box, **kwargs)
        lams.append(top_eigenvalue(op).lambda_p)
    lams = np.asarray(lams)
    first = np.diff(lams)
    second = np.diff(lams, n=2)
    return {"kappa": grid, "lambda_p": lams.tolist(),
            "first_differences": first.tolist(),
            "second_differences": second.tolist()}


def save_operator(op: OperatorSpec, path: str) -> None:
    """JSON header line, then `i j value` coordinate rows (upper storage
    included; entries appear exactly as assembled)."""
    coo = op.matrix.tocoo()
    header = {"state_space": op.state_space, "dim": op.dim, "p": op.p,
              "weighted": op.weighting is not None}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]!r}\n")
