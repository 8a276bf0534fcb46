# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: hot-loop twin of ``_pykernels``.

Bit-for-bit compatible with the pure-Python backend: identical counter-based
RNG (murmur3 finalizer over key + counter * golden), identical draw order,
identical tie handling.  Any change here must be mirrored in
``_pykernels.py`` (equivalence is asserted in tests/test_kernels.py).
"""

from libc.math cimport log

import numpy as np

BACKEND = "cython"

cdef extern from *:
    """
    #include <stdint.h>
    static const uint64_t PAMRC_GOLDEN = 0x9E3779B97F4A7C15ULL;
    static inline uint64_t pamrc_mix64(uint64_t z) {
        z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDULL;
        z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ULL;
        return z ^ (z >> 33);
    }
    """
    cdef unsigned long long PAMRC_GOLDEN
    cdef unsigned long long pamrc_mix64(unsigned long long z) nogil


cdef inline double _uniform(unsigned long long key, unsigned long long counter) nogil:
    return ((pamrc_mix64(key + counter * PAMRC_GOLDEN) >> 11) + 0.5) * (2.0 ** -53)


cdef inline unsigned long long _derive(unsigned long long key, unsigned long long index) nogil:
    return pamrc_mix64(key + (index + 1) * PAMRC_GOLDEN)


def derive_key(key, index):
    return int(_derive(<unsigned long long> key, <unsigned long long> index))


cdef long _sim_into(const long long[:, ::1] nbr, const double[:, ::1] rate,
                    const double[::1] total, long long start, double horizon,
                    unsigned long long key, unsigned long long counter0,
                    double[::1] tbuf, long long[::1] sbuf, long long[::1] kbuf,
                    unsigned long long* counter_end) nogil:
    """Simulate into caller buffers; returns jump count or -1 on overflow."""
    cdef long long x = start
    cdef double t = 0.0, r, u, dt, target, acc
    cdef unsigned long long c = counter0
    cdef long m = 0
    cdef long cap = tbuf.shape[0]
    cdef int k, chosen, nslots = nbr.shape[1]
    sbuf[0] = x
    while True:
        r = total[x]
        if r <= 0.0:
            break
        u = _uniform(key, c)
        c += 1
        dt = -log(u) / r
        if t + dt > horizon:
            c += 1  # keep stream aligned with the censored direction draw
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
        if m >= cap:
            return -1
        tbuf[m] = t
        kbuf[m] = chosen
        x = nbr[x, chosen]
        sbuf[m + 1] = x
        m += 1
    counter_end[0] = c
    return m


cdef long _cap_hint(double horizon, double max_total):
    cdef double mean = horizon * max_total
    return 64 + <long> (mean + 12.0 * (mean + 1.0) ** 0.5)


cdef class _PathBuf:
    cdef public object times, sites, slots
    cdef double[::1] tv
    cdef long long[::1] sv, kv

    def __init__(self, long cap):
        self.alloc(cap)

    cdef alloc(self, long cap):
        self.times = np.empty(cap, dtype=np.float64)
        self.sites = np.empty(cap + 1, dtype=np.int64)
        self.slots = np.empty(cap, dtype=np.int64)
        self.tv = self.times
        self.sv = self.sites
        self.kv = self.slots

    cdef long run(self, const long long[:, ::1] nbr, const double[:, ::1] rate,
                  const double[::1] total, long long start, double horizon,
                  unsigned long long key, unsigned long long counter0,
                  unsigned long long* counter_end):
        cdef long m
        while True:
            m = _sim_into(nbr, rate, total, start, horizon, key, counter0,
                          self.tv, self.sv, self.kv, counter_end)
            if m >= 0:
                return m
            self.alloc(2 * self.tv.shape[0])


def simulate_path(nbr, rate, total, start, horizon, key, counter0=0):
    cdef const long long[:, ::1] nv = nbr
    cdef const double[:, ::1] rv = rate
    cdef const double[::1] tv = total
    cdef unsigned long long cend = 0
    buf = _PathBuf(_cap_hint(horizon, float(np.max(total)) if len(total) else 0.0))
    cdef long m = buf.run(nv, rv, tv, start, horizon,
                          <unsigned long long> key, <unsigned long long> counter0, &cend)
    return (np.asarray(buf.times[:m]).copy(), np.asarray(buf.sites[:m + 1]).copy(),
            np.asarray(buf.slots[:m]).copy(), int(cend))


cdef double _overlap(const double[::1] ta, const long long[::1] sa, long na,
                     const double[::1] tb, const long long[::1] sb, long nb,
                     double horizon) nogil:
    cdef long ia = 0, ib = 0
    cdef long long xa = sa[0], xb = sb[0]
    cdef double t = 0.0, acc = 0.0, tna, tnb, tn
    while t < horizon:
        tna = ta[ia] if ia < na else horizon
        tnb = tb[ib] if ib < nb else horizon
        tn = tna if tna < tnb else tnb
        if tn > horizon:
            tn = horizon
        if xa == xb:
            acc += tn - t
        t = tn
        if ia < na and ta[ia] == tn:
            ia += 1
            xa = sa[ia]
        if ib < nb and tb[ib] == tn:
            ib += 1
            xb = sb[ib]
    return acc


def pair_overlap(times_a, sites_a, times_b, sites_b, horizon):
    cdef const double[::1] ta = np.ascontiguousarray(times_a, dtype=np.float64)
    cdef const double[::1] tb = np.ascontiguousarray(times_b, dtype=np.float64)
    cdef const long long[::1] sa = np.ascontiguousarray(sites_a, dtype=np.int64)
    cdef const long long[::1] sb = np.ascontiguousarray(sites_b, dtype=np.int64)
    return _overlap(ta, sa, ta.shape[0], tb, sb, tb.shape[0], horizon)


cdef void _girsanov(const double[::1] tt, const long long[::1] ss,
                    const long long[::1] kk, long m,
                    const double[:, ::1] rate_from, const double[::1] total_from,
                    const double[:, ::1] rate_to, const double[::1] total_to,
                    double horizon, double* jump, double* comp) nogil:
    cdef long j
    cdef double tprev = 0.0, a = 0.0, b = 0.0
    for j in range(m):
        a += log(rate_to[ss[j], kk[j]] / rate_from[ss[j], kk[j]])
    for j in range(m):
        b += (tt[j] - tprev) * (total_to[ss[j]] - total_from[ss[j]])
        tprev = tt[j]
    b += (horizon - tprev) * (total_to[ss[m]] - total_from[ss[m]])
    jump[0] = a
    comp[0] = -b


def girsanov_terms(times, sites, slots, rate_from, total_from,
                   rate_to, total_to, horizon):
    cdef const double[::1] tt = np.ascontiguousarray(times, dtype=np.float64)
    cdef const long long[::1] ss = np.ascontiguousarray(sites, dtype=np.int64)
    cdef const long long[::1] kk = np.ascontiguousarray(slots, dtype=np.int64)
    cdef const double[:, ::1] rf = rate_from
    cdef const double[::1] tf = total_from
    cdef const double[:, ::1] rt = rate_to
    cdef const double[::1] tto = total_to
    cdef double jump = 0.0, comp = 0.0
    _girsanov(tt, ss, kk, tt.shape[0], rf, tf, rt, tto, horizon, &jump, &comp)
    return jump, comp


cdef int _inside(const long long[::1] sites, long n, const signed char[::1] mask) nogil:
    cdef long i
    for i in range(n):
        if not mask[sites[i]]:
            return 0
    return 1


def bundle_overlap_batch(nbr, rate, total, start, horizon, p, n_rep, key0,
                         mask=None, r0=0):
    cdef const long long[:, ::1] nv = nbr
    cdef const double[:, ::1] rv = rate
    cdef const double[::1] tv = total
    cdef bint has_mask = mask is not None
    cdef const signed char[::1] mv = (np.ascontiguousarray(mask, dtype=np.int8)
                                      if has_mask else np.zeros(1, dtype=np.int8))
    overlaps = np.empty(n_rep, dtype=np.float64)
    ends = np.empty((n_rep, p), dtype=np.int64)
    inside = np.ones(n_rep, dtype=np.uint8)
    cdef double[::1] ov = overlaps
    cdef long long[:, ::1] ev = ends
    cdef unsigned char[::1] iv = inside
    cdef long cap = _cap_hint(horizon, float(np.max(total)))
    bufs = [_PathBuf(cap) for _ in range(p)]
    counts_arr = np.zeros(p, dtype=np.int64)
    cdef long long[::1] cv = counts_arr
    cdef unsigned long long rep_key, cend
    cdef long r, i, j, ok
    cdef long pp = p
    cdef unsigned long long roff = r0
    cdef double acc
    cdef _PathBuf bi, bj
    for r in range(n_rep):
        rep_key = _derive(<unsigned long long> key0, roff + <unsigned long long> r)
        ok = 1
        for i in range(pp):
            bi = <_PathBuf> bufs[i]
            cv[i] = bi.run(nv, rv, tv, start, horizon, _derive(rep_key, i), 0, &cend)
            ev[r, i] = bi.sv[cv[i]]
            if has_mask and ok:
                ok = _inside(bi.sv, cv[i] + 1, mv)
        acc = 0.0
        for i in range(pp):
            bi = <_PathBuf> bufs[i]
            for j in range(i + 1, pp):
                bj = <_PathBuf> bufs[j]
                acc += _overlap(bi.tv, bi.sv, cv[i], bj.tv, bj.sv, cv[j], horizon)
        ov[r] = acc
        iv[r] = <unsigned char> ok
    return overlaps, ends, inside


def cross_overlap_batch(nbr_k, rate_k, total_k, start_k,
                        nbr_e, rate_e, total_e, start_e,
                        horizon, p, n_env, n_rep, key0, mask=None, r0=0):
    cdef const long long[:, ::1] nk = nbr_k
    cdef const double[:, ::1] rk = rate_k
    cdef const double[::1] tk = total_k
    cdef const long long[:, ::1] ne = nbr_e
    cdef const double[:, ::1] re = rate_e
    cdef const double[::1] te = total_e
    cdef bint has_mask = mask is not None
    cdef const signed char[::1] mv = (np.ascontiguousarray(mask, dtype=np.int8)
                                      if has_mask else np.zeros(1, dtype=np.int8))
    overlaps = np.empty(n_rep, dtype=np.float64)
    ends = np.empty((n_rep, p), dtype=np.int64)
    inside = np.ones(n_rep, dtype=np.uint8)
    cdef double[::1] ov = overlaps
    cdef long long[:, ::1] ev = ends
    cdef unsigned char[::1] iv = inside
    bufs = [_PathBuf(_cap_hint(horizon, float(np.max(total_k)))) for _ in range(p)]
    ebuf = _PathBuf(_cap_hint(horizon, float(np.max(total_e))))
    counts_arr = np.zeros(p, dtype=np.int64)
    cdef long long[::1] cv = counts_arr
    cdef unsigned long long rep_key, cend
    cdef long r, i, j, ok, me
    cdef long pp = p, nn = n_env
    cdef unsigned long long roff = r0
    cdef double acc
    cdef _PathBuf bi, be = ebuf
    for r in range(n_rep):
        rep_key = _derive(<unsigned long long> key0, roff + <unsigned long long> r)
        ok = 1
        for i in range(pp):
            bi = <_PathBuf> bufs[i]
            cv[i] = bi.run(nk, rk, tk, start_k, horizon, _derive(rep_key, i), 0, &cend)
            ev[r, i] = bi.sv[cv[i]]
            if has_mask and ok:
                ok = _inside(bi.sv, cv[i] + 1, mv)
        acc = 0.0
        for j in range(nn):
            me = be.run(ne, re, te, start_e, horizon, _derive(rep_key, pp + j), 0, &cend)
            for i in range(pp):
                bi = <_PathBuf> bufs[i]
                acc += _overlap(bi.tv, bi.sv, cv[i], be.tv, be.sv, me, horizon)
        ov[r] = acc
        iv[r] = <unsigned char> ok
    return overlaps, ends, inside


def girsanov_batch(nbr, rate_from, total_from, rate_to, total_to,
                   start, horizon, n_rep, key0, r0=0):
    cdef const long long[:, ::1] nv = nbr
    cdef const double[:, ::1] rf = rate_from
    cdef const double[::1] tf = total_from
    cdef const double[:, ::1] rt = rate_to
    cdef const double[::1] tto = total_to
    jump = np.empty(n_rep, dtype=np.float64)
    comp = np.empty(n_rep, dtype=np.float64)
    ends = np.empty(n_rep, dtype=np.int64)
    cdef double[::1] jv = jump
    cdef double[::1] cvv = comp
    cdef long long[::1] ev = ends
    buf = _PathBuf(_cap_hint(horizon, float(np.max(total_from))))
    cdef _PathBuf b = buf
    cdef unsigned long long cend
    cdef long r, m
    cdef double jterm, cterm
    cdef unsigned long long roff = r0
    for r in range(n_rep):
        m = b.run(nv, rf, tf, start, horizon,
                  _derive(<unsigned long long> key0, roff + <unsigned long long> r), 0, &cend)
        _girsanov(b.tv, b.sv, b.kv, m, rf, tf, rt, tto, horizon, &jterm, &cterm)
        jv[r] = jterm
        cvv[r] = cterm
        ev[r] = b.sv[m]
    return jump, comp, ends
