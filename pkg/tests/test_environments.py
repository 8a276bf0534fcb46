"""Dynamic environments: stationary starts, exact evolution, reversibility,
attractiveness."""

import math

import numpy as np
import pytest
from scipy import stats

from pamrc.environments import (EnvConfig, build_trajectory,
                                check_detailed_balance, evolve,
                                evolve_coupled_spins, field_value, flip_rates,
                                gibbs_log_weights, sample_initial, save_events)
from pamrc.errors import ConfigError
from pamrc.lattice import LatticeBox


def ring(radius):
    return LatticeBox(1, radius, "periodic")


def test_env_box_must_be_periodic():
    with pytest.raises(ConfigError):
        EnvConfig("finite_rw", LatticeBox(1, 3, "absorbing"), n=1, rho=1.0)


def test_finite_rw_starts_at_origin():
    cfg = EnvConfig("finite_rw", ring(5), seed=1, n=3, rho=1.0)
    state = sample_initial(cfg)
    occ = state.occupancy()
    assert occ[cfg.env_box.origin_index] == 3
    assert occ.sum() == 3


def test_infinite_rw_poisson_start():
    cfg = EnvConfig("infinite_rw", ring(50), seed=3, nu=2.0)
    occ = sample_initial(cfg).occupancy()
    mean = occ.mean()
    assert abs(mean - 2.0) < 0.45          # SE ~ sqrt(2/101)
    assert 0.5 < occ.var() / mean < 1.6    # Poisson dispersion index
    # goodness of fit against the Poisson(2) pmf, tail-binned
    kmax = 7
    obs = np.bincount(np.minimum(occ, kmax), minlength=kmax + 1)
    pk = np.array([stats.poisson.pmf(k, 2.0) for k in range(kmax)]
                  + [1.0 - stats.poisson.cdf(kmax - 1, 2.0)])
    chi2 = stats.chisquare(obs, pk * occ.size)
    assert chi2.pvalue > 0.01


def test_spin_flip_beta_zero_is_fair_coin():
    cfg = EnvConfig("spin_flip", ring(4), seed=5, beta=0.0)
    assert np.all(gibbs_log_weights(cfg.env_box, 0.0) == 0.0)
    means = [sample_initial(EnvConfig("spin_flip", ring(4), seed=s, beta=0.0))
             .eta.mean() for s in range(300)]
    assert abs(np.mean(means) - 0.5) < 0.03


def test_spin_flip_exact_sampler_size_cap():
    with pytest.raises(ConfigError):
        sample_initial(EnvConfig("spin_flip", ring(12), seed=0, beta=0.5,
                                 sampler="exact"))


def test_finite_rw_jump_rate():
    # one walker jumps at rate 2 d rho: mean event count over [0,1] = 2 rho
    rho = 0.8
    counts = []
    for s in range(4000):
        cfg = EnvConfig("finite_rw", ring(10), seed=s, n=1, rho=rho)
        _, events = evolve(sample_initial(cfg), 1.0)
        counts.append(len(events))
    mean = np.mean(counts)
    se = np.std(counts) / math.sqrt(len(counts))
    assert abs(mean - 2 * rho) < 4 * se + 0.01


def test_all_plus_flip_rates():
    # all-plus configuration on a 1d ring: both neighbours agree, so every
    # site flips at exp(-2 beta)
    beta = 0.7
    box = ring(4)
    rates = flip_rates(np.ones(box.n_sites, dtype=np.int8), box, beta)
    assert np.allclose(rates, math.exp(-2 * beta), rtol=0, atol=1e-15)


def test_conservation_and_sorted_events():
    for cfg in (EnvConfig("finite_rw", ring(6), seed=2, n=4, rho=0.7),
                EnvConfig("infinite_rw", ring(6), seed=2, nu=1.5)):
        state = sample_initial(cfg)
        total0 = state.occupancy().sum()
        new, events = evolve(state, 3.0)
        assert new.occupancy().sum() == total0
        times = [e[1] for e in events]
        assert times == sorted(times)


def test_field_value_replay():
    cfg = EnvConfig("finite_rw", ring(8), seed=4, n=2, rho=1.0)
    traj = build_trajectory(cfg, 2.0)
    assert field_value(traj, (0,), 0.0) == 2.0
    totals = {t: sum(field_value(traj, (x,), t) for x in range(-8, 9))
              for t in (0.0, 0.7, 1.4, 2.0)}
    assert set(totals.values()) == {2.0}


def test_spin_flip_replay_differs_at_flipped_site():
    cfg = EnvConfig("spin_flip", ring(6), seed=9, beta=0.5)
    traj = build_trajectory(cfg, 5.0)
    assert traj.events, "expected at least one flip over [0, 5]"
    t0, site = traj.events[0][1], traj.events[0][2]
    before = np.array([field_value(traj, (x,), t0 / 2) for x in range(-6, 7)])
    after = np.array([field_value(traj, (x,), t0) for x in range(-6, 7)])
    diff = np.nonzero(before != after)[0]
    assert len(diff) == 1
    assert diff[0] == site  # ring coords run -6..6 <-> indices 0..12


def test_white_noise_has_no_pointwise_value():
    cfg = EnvConfig("white_noise", ring(4), seed=0)
    traj = build_trajectory(cfg, 1.0)
    with pytest.raises(ConfigError):
        field_value(traj, (0,), 0.5)
    with pytest.raises(ConfigError):
        evolve(sample_initial(cfg), 1.0)


def test_white_noise_increments_shape_and_determinism():
    cfg = EnvConfig("white_noise", ring(4), seed=12)
    traj = build_trajectory(cfg, 1.0)
    grid = np.linspace(0.0, 1.0, 11)
    a = traj.brownian_increments(grid, 9)
    b = build_trajectory(cfg, 1.0).brownian_increments(grid, 9)
    assert a.shape == (10, 9)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("radius,beta", [(2, 0.5), (3, 0.25), (9, 1.0)])
def test_detailed_balance_residual(radius, beta):
    assert check_detailed_balance(beta, ring(radius)) < 1e-12


def test_detailed_balance_beta_zero_exact():
    assert check_detailed_balance(0.0, ring(2)) == 0.0


def test_detailed_balance_single_site():
    assert check_detailed_balance(0.9, LatticeBox(1, 0, "periodic")) == 0.0


def test_detailed_balance_2d():
    assert check_detailed_balance(0.4, LatticeBox(2, 1, "periodic")) < 1e-12


def test_monotone_coupling_preserves_order():
    box = ring(4)
    n = box.n_sites
    for trial in range(200):
        rng = np.random.Generator(np.random.Philox(key=trial))
        hi = (rng.random(n) < 0.6).astype(np.int8)
        lo = (hi & (rng.random(n) < 0.5)).astype(np.int8)
        lo_t, hi_t, rings = evolve_coupled_spins(lo, hi, box, 0.8, 1.5,
                                                 key=trial)
        assert np.all(lo_t <= hi_t)


def test_coupling_marginal_law():
    # the uniformized coupled chain must match the Gillespie chain in law:
    # compare mean magnetization at t=1 from the stationary start
    box = ring(3)
    beta = 0.6
    mags_gillespie, mags_coupled = [], []
    for s in range(1500):
        cfg = EnvConfig("spin_flip", box, seed=s, beta=beta)
        st = sample_initial(cfg)
        out, _ = evolve(st, 1.0)
        mags_gillespie.append(out.eta.mean())
        lo, hi, _ = evolve_coupled_spins(st.eta, st.eta, box, beta, 1.0,
                                         key=10_000 + s)
        mags_coupled.append(lo.mean())
    dm = np.mean(mags_gillespie) - np.mean(mags_coupled)
    se = (np.std(mags_gillespie) + np.std(mags_coupled)) / math.sqrt(1500)
    assert abs(dm) < 4 * se + 0.01


def test_event_log_deterministic_and_exportable(tmp_path):
    cfg = EnvConfig("spin_flip", ring(5), seed=21, beta=0.5)
    t1 = build_trajectory(cfg, 2.0)
    t2 = build_trajectory(cfg, 2.0)
    assert t1.events == t2.events
    out = tmp_path / "events.csv"
    save_events(t1, str(out))
    text = out.read_text()
    assert text == (lambda: (save_events(t2, str(out)), out.read_text())[1])()
    for line in text.strip().splitlines():
        assert line.split(",")[1] in ("jump", "flip")


def test_stationarity_chi2_small():
    # the full 1e4-replica test runs in the acceptance suite; smoke here
    nu = 1.5
    box = ring(6)
    vals = []
    for s in range(2000):
        cfg = EnvConfig("infinite_rw", box, seed=s, nu=nu)
        out, _ = evolve(sample_initial(cfg), 1.0)
        vals.append(out.occupancy()[box.origin_index])
    vals = np.asarray(vals)
    kmax = 6
    obs = np.bincount(np.minimum(vals, kmax), minlength=kmax + 1)
    pk = np.array([stats.poisson.pmf(k, nu) for k in range(kmax)]
                  + [1.0 - stats.poisson.cdf(kmax - 1, nu)])
    assert stats.chisquare(obs, pk * len(vals)).pvalue > 0.01
