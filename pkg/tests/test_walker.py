"""Conductance walk: jump statistics, confinement, change of measure."""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from pamrc import kernels
from pamrc.errors import ConfigError
from pamrc.feynman_kac import field_laplacian
from pamrc.lattice import (LatticeBox, constant_decorated, constant_field,
                           decorated_to_effective, discretize_field,
                           generate_field, IidDiscrete)
from pamrc.walker import (GirsanovWeight, confinement_indicator,
                          girsanov_weight, simulate_path)


def test_jump_count_poisson_mean():
    # constant kappa: N(T) ~ Poisson(2 d kappa T)
    kappa, T = 1.2, 3.0
    field = constant_field(LatticeBox(1, 60), kappa)
    adj = field.adjacency()
    n = 100_000
    counts = np.empty(n)
    for r in range(n):
        tt, _, _, _ = kernels.simulate_path(adj.nbr, adj.rate, adj.total,
                                            field.box.origin_index, T,
                                            kernels.derive_key(1, r))
        counts[r] = len(tt)
    mean = 2 * 1 * kappa * T
    assert abs(counts.mean() - mean) / mean < 0.01
    assert abs(counts.var() / counts.mean() - 1.0) < 0.05  # Poisson index


def test_occupation_matches_matrix_exponential():
    # rates {a, b} on a 3-site path graph: compare t=1 occupation law
    box = LatticeBox(1, 1)
    field = box_field_with_rates(box, {(0, 1): 0.6, (1, 2): 1.7})
    gen = field_laplacian(field).toarray()
    probs = expm(gen.T * 1.0)[:, 1]  # start at the middle site (index 1)
    n = 100_000
    hits = np.zeros(3)
    adj = field.adjacency()
    for r in range(n):
        _, ss, _, _ = kernels.simulate_path(adj.nbr, adj.rate, adj.total, 1,
                                            1.0, kernels.derive_key(42, r))
        hits[ss[-1]] += 1
    emp = hits / n
    for x in range(3):
        se = math.sqrt(probs[x] * (1 - probs[x]) / n)
        assert abs(emp[x] - probs[x]) < 4 * se + 1e-4


def box_field_with_rates(box, rates):
    from pamrc.lattice import ConductanceField
    return ConductanceField(box, rates)


def test_confinement_indicator_trivial_cases():
    field = constant_field(LatticeBox(1, 6), 1.0)
    pocket = LatticeBox(1, 2)
    path = simulate_path(field, (0,), 1e-9, seed=0)
    assert path.n_jumps == 0
    assert confinement_indicator(path, pocket)
    # handcrafted far visit
    from pamrc.walker import WalkPath
    far = WalkPath(field.box, (0,), 1.0, np.array([0.5]),
                   np.array([field.box.index((0,)), field.box.index((3,))]),
                   np.array([0]))
    assert not confinement_indicator(far, pocket)


def test_confinement_probability_matches_dirichlet_oracle():
    # P(walk stays in B_3 through time 1) from the killed generator
    kappa, T, r = 1.0, 1.0, 3
    field = constant_field(LatticeBox(1, 8), kappa)
    pocket = LatticeBox(1, r)
    inner = constant_field(LatticeBox(1, r), kappa)
    gen = field_laplacian(inner).toarray()
    # exits are killed: subtract the out-edge rates on the pocket boundary
    gen[0, 0] -= kappa
    gen[-1, -1] -= kappa
    exact = expm(gen * T)[:, r].sum()
    n = 60_000
    stay = 0
    for i in range(n):
        path = simulate_path(field, (0,), T, seed=i)
        stay += confinement_indicator(path, pocket)
    emp = stay / n
    se = math.sqrt(exact * (1 - exact) / n)
    assert abs(emp - exact) < 4 * se + 1e-3


def test_girsanov_self_weight_zero():
    field = constant_field(LatticeBox(1, 5), 1.0)
    path = simulate_path(field, (0,), 2.0, seed=3)
    w = girsanov_weight(path, field, field)
    assert w.log_weight == 0.0 and w.jump_term == 0.0 and w.time_term == 0.0


def test_girsanov_zero_jump_closed_form():
    box = LatticeBox(1, 5)
    f_from = constant_field(box, 1.0)
    f_to = constant_field(box, 0.4)
    from pamrc.walker import WalkPath
    path = WalkPath(box, (0,), 3.0, np.array([]),
                    np.array([box.origin_index]), np.array([], dtype=np.int64))
    w = girsanov_weight(path, f_from, f_to)
    assert w.jump_term == 0.0
    assert w.time_term == pytest.approx(-3.0 * (0.8 - 2.0), abs=1e-14)
    assert w.log_weight == w.jump_term + w.time_term


def test_girsanov_discretized_bound_exact():
    # spread of the support is 0.9 <= 1, so log weight <= 2 d T / n pathwise
    box = LatticeBox(1, 6)
    field = generate_field(box, IidDiscrete((0.1, 1.0), (0.5, 0.5)), seed=13)
    T = 2.0
    for n in (1, 2, 5):
        fn = discretize_field(field, n)
        for i in range(300):
            path = simulate_path(field, (0,), T, seed=i)
            w = girsanov_weight(path, field, fn)
            assert w.jump_term <= 0.0
            assert w.time_term <= 2 * box.dim * T / n + 1e-12
            assert w.log_weight <= 2 * box.dim * T / n + 1e-12


def test_girsanov_unbiasedness_matrix_exponential():
    # E_from[weight ; X(T)=0] = P_to(X(T)=0), both on the same truncated box
    box = LatticeBox(1, 4)
    field = generate_field(box, IidDiscrete((0.4, 1.3), (0.5, 0.5)), seed=8)
    target = discretize_field(field, 2)
    T = 0.5
    exact = expm(field_laplacian(target).toarray() * T)[box.origin_index,
                                                        box.origin_index]
    adj = field.adjacency()
    tadj = target.adjacency()
    n = 200_000
    jump, comp, ends = kernels.girsanov_batch(
        adj.nbr, adj.rate, adj.total, tadj.rate, tadj.total,
        box.origin_index, T, n, 99)
    w = np.exp(jump + comp) * (ends == box.origin_index)
    se = w.std(ddof=1) / math.sqrt(n)
    assert abs(w.mean() - exact) < 3 * se


def test_mismatched_boxes_refused():
    f1 = constant_field(LatticeBox(1, 4), 1.0)
    f2 = constant_field(LatticeBox(1, 5), 1.0)
    path = simulate_path(f1, (0,), 1.0, seed=0)
    with pytest.raises(ConfigError):
        girsanov_weight(path, f1, f2)


def test_decorated_and_effective_paths_identical():
    dec = constant_decorated(LatticeBox(1, 8), 0.4, 0.6)
    eff = decorated_to_effective(dec)
    for seed in range(20):
        a = simulate_path(dec, (0,), 5.0, seed=seed)
        b = simulate_path(eff, (0,), 5.0, seed=seed)
        assert np.array_equal(a.jump_times, b.jump_times)
        assert np.array_equal(a.sites, b.sites)
        assert a.edge_labels is not None and len(a.edge_labels) == a.n_jumps
        assert b.edge_labels is None


def test_decorated_label_frequencies():
    dec = constant_decorated(LatticeBox(1, 40), 0.25, 0.75)
    labels = []
    for seed in range(400):
        path = simulate_path(dec, (0,), 4.0, seed=seed)
        labels.extend(path.edge_labels.tolist())
    frac_red = 1.0 - np.mean(labels)
    assert abs(frac_red - 0.25) < 0.03


def test_reversibility_periodic_constant():
    # symmetric generator: p_t(0, x) == p_t(x, 0) within Monte Carlo error
    field = constant_field(LatticeBox(1, 5, "periodic"), 1.0)
    box = field.box
    x = (2,)
    n = 40_000
    fwd = sum(simulate_path(field, (0,), 1.0, seed=i).end_site()
              == box.index(x) for i in range(n)) / n
    bwd = sum(simulate_path(field, x, 1.0, seed=n + i).end_site()
              == box.origin_index for i in range(n)) / n
    se = math.sqrt(fwd * (1 - fwd) / n) + math.sqrt(bwd * (1 - bwd) / n)
    assert abs(fwd - bwd) < 4 * se + 1e-3


def test_path_export(tmp_path):
    from pamrc.walker import save_path
    dec = constant_decorated(LatticeBox(1, 6), 0.5, 0.5)
    path = simulate_path(dec, (0,), 2.0, seed=7)
    out = tmp_path / "path.csv"
    save_path(path, str(out))
    lines = out.read_text().strip().splitlines()
    assert len(lines) == path.n_jumps + 1
    assert lines[0].startswith("0.0,")
    if path.n_jumps:
        assert lines[1].count(",") == 2  # time, coords, label
