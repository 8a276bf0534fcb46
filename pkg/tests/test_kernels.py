"""Kernel backends: stream arithmetic, path mechanics, backend equivalence."""

import math

import numpy as np
import pytest

from pamrc import kernels
from pamrc._rng import derive_key, mix64, uniform_at
from pamrc.kernels import _pykernels as pure
from pamrc.lattice import LatticeBox, constant_field

compiled = kernels.compiled


def adjacency(radius=8, kappa=1.0, geometry="absorbing", dim=1):
    return constant_field(LatticeBox(dim, radius, geometry), kappa).adjacency()


def test_mix64_reference_values():
    # regression anchors for the stream arithmetic; the compiled backend
    # must reproduce these exactly
    assert mix64(0) == 0
    assert mix64(1) == 12994781566227106604
    assert mix64(0xDEADBEEF) == 15153440252345589164
    assert derive_key(0, 0) == mix64(0x9E3779B97F4A7C15) == 11286133854226296554


def test_uniform_open_interval():
    us = [uniform_at(12345, c) for c in range(2000)]
    assert all(0.0 < u < 1.0 for u in us)
    assert abs(np.mean(us) - 0.5) < 0.02


def test_derive_key_matches_backends():
    if compiled is None:
        pytest.skip("compiled backend unavailable")
    for key in (0, 7, 2**63 + 11):
        for idx in (0, 1, 999):
            assert compiled.derive_key(key, idx) == pure.derive_key(key, idx)


def test_path_stream_identical_across_backends():
    if compiled is None:
        pytest.skip("compiled backend unavailable")
    adj = adjacency(radius=12, kappa=0.7)
    for key in (3, 888, 2**60):
        a = compiled.simulate_path(adj.nbr, adj.rate, adj.total, 12, 9.0, key)
        b = pure.simulate_path(adj.nbr, adj.rate, adj.total, 12, 9.0, key)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])
        assert np.array_equal(a[2], b[2])
        assert a[3] == b[3]


def test_batch_drivers_identical_across_backends():
    if compiled is None:
        pytest.skip("compiled backend unavailable")
    adj = adjacency(radius=6)
    mask = np.zeros(adj.total.shape, dtype=np.int8)
    mask[3:10] = 1
    for backend_pair in [(compiled, pure)]:
        ca, py = backend_pair
        a = ca.bundle_overlap_batch(adj.nbr, adj.rate, adj.total, 6, 3.0,
                                    2, 50, 42, mask)
        b = py.bundle_overlap_batch(adj.nbr, adj.rate, adj.total, 6, 3.0,
                                    2, 50, 42, mask)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
        env = adjacency(radius=6, kappa=0.5)
        a = ca.cross_overlap_batch(adj.nbr, adj.rate, adj.total, 6,
                                   env.nbr, env.rate, env.total, 6,
                                   3.0, 1, 2, 40, 7, None)
        b = py.cross_overlap_batch(adj.nbr, adj.rate, adj.total, 6,
                                   env.nbr, env.rate, env.total, 6,
                                   3.0, 1, 2, 40, 7, None)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
        to = adjacency(radius=6, kappa=0.9)
        a = ca.girsanov_batch(adj.nbr, adj.rate, adj.total, to.rate, to.total,
                              6, 2.0, 40, 5)
        b = py.girsanov_batch(adj.nbr, adj.rate, adj.total, to.rate, to.total,
                              6, 2.0, 40, 5)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)


def test_replica_offset_matches_full_batch():
    adj = adjacency(radius=6)
    full = kernels.bundle_overlap_batch(adj.nbr, adj.rate, adj.total, 6, 2.0,
                                        2, 30, 11, None)
    head = kernels.bundle_overlap_batch(adj.nbr, adj.rate, adj.total, 6, 2.0,
                                        2, 10, 11, None, 0)
    tail = kernels.bundle_overlap_batch(adj.nbr, adj.rate, adj.total, 6, 2.0,
                                        2, 20, 11, None, 10)
    assert np.array_equal(full[0], np.concatenate([head[0], tail[0]]))
    assert np.array_equal(full[1], np.concatenate([head[1], tail[1]]))


def test_pair_overlap_hand_cases():
    # identical frozen paths overlap for the whole horizon
    t0 = np.array([])
    s0 = np.array([5], dtype=np.int64)
    assert kernels.pair_overlap(t0, s0, t0, s0, 4.0) == 4.0
    # b leaves site 5 at t=1 and returns at t=3: overlap = 1 + (4-3)
    tb = np.array([1.0, 3.0])
    sb = np.array([5, 6, 5], dtype=np.int64)
    assert kernels.pair_overlap(t0, s0, tb, sb, 4.0) == pytest.approx(2.0)
    # disjoint sites never overlap
    s1 = np.array([9], dtype=np.int64)
    assert kernels.pair_overlap(t0, s0, t0, s1, 4.0) == 0.0


def test_girsanov_terms_zero_jump_closed_form():
    adj_from = adjacency(radius=4, kappa=1.0)
    adj_to = adjacency(radius=4, kappa=0.25)
    times = np.array([])
    sites = np.array([4], dtype=np.int64)
    slots = np.array([], dtype=np.int64)
    jump, comp = kernels.girsanov_terms(times, sites, slots,
                                        adj_from.rate, adj_from.total,
                                        adj_to.rate, adj_to.total, 2.0)
    assert jump == 0.0
    # -T * (total_to - total_from) at the start site
    assert comp == pytest.approx(-2.0 * (0.5 - 2.0), abs=1e-14)


def test_jump_times_strictly_increasing_and_edges_exist():
    adj = adjacency(radius=5, dim=2, kappa=1.3)
    box = LatticeBox(2, 5)
    for key in range(30):
        tt, ss, kk, _ = kernels.simulate_path(adj.nbr, adj.rate, adj.total,
                                              box.origin_index, 4.0, key)
        assert np.all(np.diff(tt) > 0)
        for j in range(len(tt)):
            assert adj.nbr[ss[j], kk[j]] == ss[j + 1]


def test_zero_rate_site_never_jumps():
    box = LatticeBox(1, 0)  # single site, no edges
    adj = np.full((1, 2), -1, dtype=np.int64), np.zeros((1, 2)), np.zeros(1)
    tt, ss, kk, c = kernels.simulate_path(adj[0], adj[1], adj[2], 0, 5.0, 1)
    assert len(tt) == 0 and ss[0] == 0 and c == 0
