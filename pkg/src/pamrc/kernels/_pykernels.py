"""Pure-Python kernels: reference twin of the compiled extension.

Every function here has a bit-identical counterpart in ``_ckernels.pyx``;
the two consume the same counter-based streams (see ``pamrc._rng``) in the
same order, so swapping backends never changes a sampled path.  Keep the two
files in lockstep.

Adjacency convention (produced by ``pamrc.lattice``):

* ``nbr``   int64[S, D]  neighbour site index per slot, -1 for a missing edge
* ``rate``  float64[S, D]  jump rate per slot (0 where ``nbr`` is -1)
* ``total`` float64[S]   total jump rate per site

A path is ``(times, sites, slots)``: ``sites[0]`` is the start, jump ``j``
happens at ``times[j]`` into ``sites[j+1]`` through neighbour slot
``slots[j]`` of ``sites[j]``.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15

BACKEND = "python"


def _mix64(z):
    z &= MASK64
    z = ((z ^ (z >> 33)) * 0xFF51AFD7ED558CCD) & MASK64
    z = ((z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53) & MASK64
    return z ^ (z >> 33)


def _uniform(key, counter):
    return ((_mix64((key + counter * GOLDEN) & MASK64) >> 11) + 0.5) * (2.0 ** -53)


def derive_key(key, index):
    return _mix64((key + (index + 1) * GOLDEN) & MASK64)


def simulate_path(nbr, rate, total, start, horizon, key, counter0=0):
    """Event-driven walk on the adjacency up to `horizon`.

    Returns (times, sites, slots, counter_end).  The stream cursor is
    advanced by two draws per attempted jump (holding time, direction), so
    resuming with the returned counter continues the same trajectory law.
    """
    times = []
    sites = [start]
    slots = []
    t = 0.0
    x = start
    c = counter0
    nslots = nbr.shape[1]
    while True:
        r = total[x]
        if r <= 0.0:
            break
        u = _uniform(key, c)
        c += 1
        dt = -math.log(u) / r
        if t + dt > horizon:
            c += 1  # direction draw of the censored jump, kept for stream alignment
            break
        t += dt
        target = _uniform(key, c) * r
        c += 1
        acc = 0.0
        chosen = -1
        for k in range(nslots):
            if nbr[x, k] < 0:
                continue
            acc += rate[x, k]
            chosen = k
            if target < acc:
                break
        times.append(t)
        slots.append(chosen)
        x = int(nbr[x, chosen])
        sites.append(x)
    return (np.asarray(times, dtype=np.float64),
            np.asarray(sites, dtype=np.int64),
            np.asarray(slots, dtype=np.int64),
            c)


def pair_overlap(times_a, sites_a, times_b, sites_b, horizon):
    """Total time the two piecewise-constant paths occupy the same site."""
    ia = ib = 0
    na = len(times_a)
    nb = len(times_b)
    sa = sites_a[0]
    sb = sites_b[0]
    t = 0.0
    acc = 0.0
    while t < horizon:
        ta = times_a[ia] if ia < na else horizon
        tb = times_b[ib] if ib < nb else horizon
        tn = min(ta, tb, horizon)
        if sa == sb:
            acc += tn - t
        t = tn
        if ia < na and times_a[ia] == tn:
            ia += 1
            sa = sites_a[ia]
        if ib < nb and times_b[ib] == tn:
            ib += 1
            sb = sites_b[ib]
    return acc


def girsanov_terms(times, sites, slots, rate_from, total_from,
                   rate_to, total_to, horizon):
    """Jump and compensator terms of the log change-of-measure density."""
    jump = 0.0
    for j in range(len(times)):
        s = sites[j]
        k = slots[j]
        jump += math.log(rate_to[s, k] / rate_from[s, k])
    tprev = 0.0
    comp = 0.0
    for j in range(len(times)):
        s = sites[j]
        comp += (times[j] - tprev) * (total_to[s] - total_from[s])
        tprev = times[j]
    comp += (horizon - tprev) * (total_to[sites[len(times)]] - total_from[sites[len(times)]])
    return jump, -comp


def _path_inside(sites, mask):
    for s in sites:
        if not mask[s]:
            return False
    return True


def bundle_overlap_batch(nbr, rate, total, start, horizon, p, n_rep, key0,
                         mask=None, r0=0):
    """p independent walks per replica; returns the summed pairwise overlap.

    Output: (overlaps[n_rep], ends[n_rep, p], inside[n_rep]) where `inside`
    flags replicas whose p paths all stayed in `mask` (all ones if no mask).
    """
    overlaps = np.empty(n_rep, dtype=np.float64)
    ends = np.empty((n_rep, p), dtype=np.int64)
    inside = np.ones(n_rep, dtype=np.uint8)
    for r in range(n_rep):
        rep_key = derive_key(key0, r0 + r)
        paths = []
        ok = True
        for i in range(p):
            tt, ss, _, _ = simulate_path(nbr, rate, total, start, horizon,
                                         derive_key(rep_key, i))
            paths.append((tt, ss))
            ends[r, i] = ss[-1]
            if mask is not None and ok:
                ok = _path_inside(ss, mask)
        acc = 0.0
        for i in range(p):
            for j in range(i + 1, p):
                acc += pair_overlap(paths[i][0], paths[i][1],
                                    paths[j][0], paths[j][1], horizon)
        overlaps[r] = acc
        inside[r] = 1 if ok else 0
    return overlaps, ends, inside


def cross_overlap_batch(nbr_k, rate_k, total_k, start_k,
                        nbr_e, rate_e, total_e, start_e,
                        horizon, p, n_env, n_rep, key0, mask=None, r0=0):
    """p conductance walks against n_env environment walks per replica.

    Overlap is summed over all p*n_env ordered pairs.  Environment walks use
    path indices p..p+n_env-1 of the replica stream, so the conductance
    walks are unchanged when n_env varies.
    """
    overlaps = np.empty(n_rep, dtype=np.float64)
    ends = np.empty((n_rep, p), dtype=np.int64)
    inside = np.ones(n_rep, dtype=np.uint8)
    for r in range(n_rep):
        rep_key = derive_key(key0, r0 + r)
        kpaths = []
        ok = True
        for i in range(p):
            tt, ss, _, _ = simulate_path(nbr_k, rate_k, total_k, start_k,
                                         horizon, derive_key(rep_key, i))
            kpaths.append((tt, ss))
            ends[r, i] = ss[-1]
            if mask is not None and ok:
                ok = _path_inside(ss, mask)
        acc = 0.0
        for j in range(n_env):
            te, se, _, _ = simulate_path(nbr_e, rate_e, total_e, start_e,
                                         horizon, derive_key(rep_key, p + j))
            for i in range(p):
                acc += pair_overlap(kpaths[i][0], kpaths[i][1], te, se, horizon)
        overlaps[r] = acc
        inside[r] = 1 if ok else 0
    return overlaps, ends, inside


def girsanov_batch(nbr, rate_from, total_from, rate_to, total_to,
                   start, horizon, n_rep, key0, r0=0):
    """Per-replica log weights between two rate fields on the same graph."""
    jump = np.empty(n_rep, dtype=np.float64)
    comp = np.empty(n_rep, dtype=np.float64)
    ends = np.empty(n_rep, dtype=np.int64)
    for r in range(n_rep):
        tt, ss, kk, _ = simulate_path(nbr, rate_from, total_from, start,
                                      horizon, derive_key(key0, r0 + r))
        j, c = girsanov_terms(tt, ss, kk, rate_from, total_from,
                              rate_to, total_to, horizon)
        jump[r] = j
        comp[r] = c
        ends[r] = ss[-1]
    return jump, comp, ends
