"""Command-line front end: experiment configuration, seeding, worker pools,
and file output for every subcommand.

Seeding contract: the master ``--seed`` is hashed to a root stream; each
estimator derives per-replica streams by replica index, so outputs are
byte-identical for a fixed (config, seed) regardless of worker count, and
any replica can be regenerated in isolation.

Config files are flat ``key = value`` lines matching the long option names;
command-line flags win over config values.

Exit codes: 0 ok, 2 invalid configuration, 3 size budget exceeded,
4 invariant failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict

import numpy as np

from . import kernels
from .errors import BudgetError, ConfigError, InvariantError
from . import lattice as lat
from . import environments as envs
from . import feynman_kac as fk
from . import variational as var
from . import lyapunov as lyap
from . import walker


def _parse_floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _parse_pockets(text):
    out = []
    for part in text.split(";"):
        if not part.strip():
            continue
        center, radius, value = part.split("@")
        out.append(lat.Pocket(tuple(int(c) for c in center.split(",")),
                              int(radius), float(value)))
    return tuple(out)


def _load_field_arg(args):
    if getattr(args, "field", None):
        return lat.load_field(args.field)
    if getattr(args, "kappa", None) is not None:
        box = lat.LatticeBox(args.dim, args.radius, args.geometry)
        return lat.constant_field(box, args.kappa)
    raise ConfigError("provide --field FILE or --kappa with --dim/--radius")


def _env_config(args, dim):
    kind = args.env_kind
    radius = args.env_radius if args.env_radius is not None else args.radius
    box = lat.LatticeBox(dim, radius, "periodic")
    return envs.EnvConfig(kind, box, seed=args.seed, n=args.env_n,
                          rho=args.env_rho, nu=args.env_nu, beta=args.env_beta)


def _write(path, text):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_coerce) + "\n"


def _coerce(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not serializable: {type(obj)}")


# -- subcommands ----------------------------------------------------------------


def cmd_gen_field(args):
    box = lat.LatticeBox(args.dim, args.radius, args.geometry)
    if args.law == "constant":
        law = lat.Constant(args.kappa)
    elif args.law == "iid":
        law = lat.IidDiscrete(tuple(_parse_floats(args.values)),
                              tuple(_parse_floats(args.probs)))
    elif args.law == "clustered":
        law = lat.Clustered(tuple(_parse_floats(args.values)),
                            tuple(_parse_floats(args.probs)),
                            _parse_pockets(args.pockets))
    else:
        raise ConfigError(f"unknown law {args.law}")
    field = lat.generate_field(box, law, args.seed)
    lat.save_field(field, args.out)
    print(f"wrote {field.n_edges} edges to {args.out} "
          f"(support {list(field.support)})")
    return 0


def cmd_verify_cluster(args):
    field = lat.load_field(args.field)
    spec = lat.verify_clustering(field, args.kappa, args.delta,
                                 args.pocket_radius)
    payload = {"found": spec is not None, "kappa": args.kappa,
               "delta": args.delta, "pocket_radius": args.pocket_radius}
    if spec is not None:
        payload["center"] = list(spec.pocket_center)
    _write(args.out, _json(payload))
    return 0


def cmd_simulate_u(args):
    field = _load_field_arg(args)
    t_grid = _parse_floats(args.t_grid)
    horizon = max(t_grid)
    env = None
    if args.env_kind == "white_noise":
        env = _env_config(args, field.box.dim)
    elif args.env_kind != "none":
        env = envs.build_trajectory(_env_config(args, field.box.dim), horizon)
    sol = fk.solve_quenched(field, env, args.initial, horizon, args.dt,
                            checkpoints=t_grid)
    rows = [{"t": t, "u_origin": sol.u(t)} for t in t_grid]
    payload = {"initial": args.initial, "dt": args.dt, "seed": args.seed,
               "env_kind": args.env_kind, "values": rows}
    _write(args.out, _json(payload))
    return 0


def cmd_moment(args):
    field = _load_field_arg(args)
    t_grid = _parse_floats(args.t_grid)
    pocket = None
    if args.confine_radius is not None:
        center = tuple(int(c) for c in args.confine_center.split(","))
        pocket = lat.LatticeBox(field.box.dim, args.confine_radius,
                                "absorbing", center)
    ests = []
    for t in t_grid:
        if args.dynamics == "white_noise":
            e = fk.moment_white_noise(field, args.p, t, args.replicas, pocket,
                                      u0=args.u0, seed=args.seed,
                                      workers=args.workers)
        elif args.dynamics == "finite_rw":
            e = fk.moment_finite_rw(field, args.p, args.env_n, args.env_rho,
                                    t, args.replicas, pocket, u0=args.u0,
                                    seed=args.seed, workers=args.workers)
        elif args.dynamics == "infinite_rw":
            e = fk.moment_infinite_rw(field, args.p, args.env_nu, t,
                                      args.replicas, dt=args.dt,
                                      seed=args.seed)
        else:
            raise ConfigError(f"unknown dynamics {args.dynamics}")
        ests.append(e)
    fk.save_estimates(ests, args.out)
    summary = {"dynamics": args.dynamics, "p": args.p, "seed": args.seed,
               "replicas": args.replicas, "u0": args.u0,
               "t_grid": t_grid, "backend": kernels.BACKEND,
               "rows": [{"t": e.t, "log_moment": e.log_value,
                         "std_error": e.std_error,
                         "divergence_warning": e.divergent} for e in ests]}
    _write(args.out + ".json", _json(summary))
    print(f"wrote {args.out} and {args.out}.json")
    return 0


def _variational_builder(args, field):
    dyn = args.dynamics
    if dyn == "white_noise":
        return lambda f, p, box: var.build_wn_operator(
            f, p, box, size_budget=args.size_budget)
    if dyn == "finite_rw":
        return lambda f, p, box: var.build_firw_operator(
            f, p, args.env_n, args.env_rho, box, size_budget=args.size_budget)
    if dyn == "infinite_rw":
        env_box = lat.LatticeBox(args.dim, args.env_radius or 1, "periodic")
        return lambda f, p, box: var.build_iirw_operator(
            f, p, args.env_nu, args.N, args.M, env_box, box,
            size_budget=args.size_budget)
    if dyn == "spin_flip":
        env_box = lat.LatticeBox(args.dim, args.env_radius or 1, "periodic")
        return lambda f, p, box: var.build_spinflip_operator(
            f, p, args.env_beta, env_box, box, size_budget=args.size_budget)
    raise ConfigError(f"unknown dynamics {dyn}")


def cmd_variational(args):
    box = lat.LatticeBox(args.dim, args.box_radius, args.geometry)
    field = lat.load_field(args.field) if args.field else args.kappa
    build = _variational_builder(args, field)
    if args.sweep:
        grid = _parse_floats(args.sweep)
        rows = var.kappa_sweep(lambda k, p, b: build(k, p, b), grid, args.p, box)
        lines = ["kappa,lambda_p"]
        for k, lam in zip(rows["kappa"], rows["lambda_p"]):
            lines.append(f"{k!r},{lam!r}")
        _write(args.out, "\n".join(lines) + "\n")
        _write(args.out + ".json", _json(rows))
        print(f"wrote {args.out}")
        return 0
    op = build(field, args.p, box)
    res = var.top_eigenvalue(op, tol=args.tol)
    payload = {"eigen": asdict(res), "state_space": op.state_space,
               "weighted": op.weighting is not None}
    _write(args.out, _json(payload))
    if args.operator_out:
        var.save_operator(op, args.operator_out)
    return 0


def cmd_green(args):
    g = fk.green_function(args.dim, args.radius)
    payload = {"dim": g.dim, "G0": g.value if math.isfinite(g.value) else "inf",
               "method": g.method, "threshold": g.threshold,
               "diagnostics": g.diagnostics,
               "wbar_limit": {str(p): (g.wbar_limit(p)
                                       if math.isfinite(g.wbar_limit(p))
                                       else "inf")
                              for p in (1, 2, 3)}}
    _write(args.out, _json(payload))
    return 0


def cmd_quenched(args):
    field = _load_field_arg(args)
    t_grid = _parse_floats(args.t_grid)
    env = _env_config(args, field.box.dim) if args.env_kind != "none" else None
    pocket = None
    if args.confine_radius is not None:
        center = tuple(int(c) for c in args.confine_center.split(","))
        pocket = lat.LatticeBox(field.box.dim, args.confine_radius,
                                "absorbing", center)
    est = fk.quenched_exponent_estimate(field, env, t_grid, args.dt, pocket,
                                        replicas=args.replicas,
                                        seed=args.seed, workers=args.workers)
    payload = {"estimate": asdict(est), "seed": args.seed,
               "replicas": args.replicas, "dt": args.dt,
               "env_kind": args.env_kind, "backend": kernels.BACKEND}
    _write(args.out, _json(payload))
    return 0


def cmd_probe(args):
    t_grid = _parse_floats(args.t_grid)
    if args.statement == "annealed_sup":
        field = _load_field_arg(args)
        dyn = (args.dynamics,) if args.dynamics == "white_noise" else \
            (args.dynamics, args.env_n, args.env_rho)
        probe = lyap.probe_annealed_sup(field, args.p, dyn, t_grid,
                                        args.replicas, seed=args.seed,
                                        pocket_radius=args.confine_radius or 4,
                                        workers=args.workers)
    elif args.statement == "quenched_lower":
        field = _load_field_arg(args)
        env = _env_config(args, field.box.dim)
        probe = lyap.probe_quenched_lower(field, env, t_grid, args.dt,
                                          args.replicas, seed=args.seed,
                                          workers=args.workers)
    elif args.statement == "decorated_gap":
        env = _env_config(args, args.dim)
        probe = lyap.probe_decorated_gap(args.kbar1, args.kbar2, env, t_grid,
                                         args.dt, args.replicas,
                                         args.radius, seed=args.seed,
                                         workers=args.workers)
    elif args.statement == "init_invariance":
        field = _load_field_arg(args)
        dyn = (args.dynamics,) if args.dynamics == "white_noise" else \
            (args.dynamics, args.env_n, args.env_rho)
        probe = lyap.probe_init_invariance(field, args.p, dyn, t_grid,
                                           args.replicas, seed=args.seed,
                                           workers=args.workers)
    else:
        raise ConfigError(f"unknown statement {args.statement}")
    _write(args.out, probe.to_json() + "\n")
    print(f"verdict: {probe.verdict}")
    return 0


# -- invariant suite --------------------------------------------------------------


def _invariant_checks():
    yield "discretize_idempotent", _check_discretize
    yield "cluster_scan_exhaustive", _check_cluster_scan
    yield "event_conservation", _check_conservation
    yield "detailed_balance", _check_detailed_balance
    yield "monotone_coupling", _check_coupling
    yield "girsanov_bound", _check_girsanov
    yield "operator_symmetry", _check_operator
    yield "path_validity", _check_paths
    yield "backend_equivalence", _check_backends
    yield "quenched_positivity", _check_quenched


def _check_discretize():
    box = lat.LatticeBox(1, 40)
    field = lat.generate_field(box, lat.IidDiscrete((0.3, 0.7, 1.3),
                                                    (0.4, 0.3, 0.3)), seed=11)
    for n in (1, 3, 7):
        fn = lat.discretize_field(field, n)
        again = lat.discretize_field(fn, n)
        assert np.array_equal(fn.values, again.values), "not idempotent"
        err = np.max(np.abs(field.values - fn.values))
        assert err <= (field.upper - field.lower) / n + 1e-15, "bound violated"


def _check_cluster_scan():
    box = lat.LatticeBox(1, 60)
    field = lat.generate_field(box, lat.IidDiscrete((0.5, 2.0), (0.5, 0.5)),
                               seed=5)
    for kappa in (0.5, 2.0):
        fast = lat.verify_clustering(field, kappa, 0.01, 2)
        slow = _naive_scan(field, kappa, 0.01, 2)
        assert (fast is None) == (slow is None), "scan disagreement"
        if fast is not None:
            assert fast.pocket_center == slow, "different first center"


def _naive_scan(field, kappa, delta, r):
    box = field.box
    for c in range(-(box.radius - r), box.radius - r + 1):
        ok = True
        for a in range(c - r, c + r):
            v = field.rate(box.index((a,)), box.index((a + 1,)))
            if not (kappa - delta < v < kappa + delta):
                ok = False
                break
        if ok:
            return (c,)
    return None


def _check_conservation():
    box = lat.LatticeBox(1, 6, "periodic")
    for cfg in (envs.EnvConfig("finite_rw", box, seed=2, n=4, rho=0.7),
                envs.EnvConfig("infinite_rw", box, seed=2, nu=1.5)):
        state = envs.sample_initial(cfg)
        total0 = state.occupancy().sum()
        out, events = envs.evolve(state, 2.0)
        assert out.occupancy().sum() == total0, "mass not conserved"
        assert all(e1[1] <= e2[1] for e1, e2 in zip(events, events[1:])), \
            "event log not sorted"


def _check_detailed_balance():
    res = envs.check_detailed_balance(0.5, lat.LatticeBox(1, 2, "periodic"))
    assert res < 1e-12, f"detailed balance residual {res}"
    res0 = envs.check_detailed_balance(1e-12, lat.LatticeBox(1, 2, "periodic"))
    assert res0 < 1e-12


def _check_coupling():
    box = lat.LatticeBox(1, 3, "periodic")
    n = box.n_sites
    for trial in range(20):
        rng = np.random.Generator(np.random.Philox(key=trial))
        hi = (rng.random(n) < 0.7).astype(np.int8)
        low = (hi & (rng.random(n) < 0.6)).astype(np.int8)
        lo_t, hi_t, _ = envs.evolve_coupled_spins(low, hi, box, 0.8, 2.0,
                                                  key=trial)
        assert np.all(lo_t <= hi_t), "monotone coupling violated order"


def _check_girsanov():
    box = lat.LatticeBox(1, 4)
    field = lat.generate_field(box, lat.IidDiscrete((0.1, 1.0), (0.5, 0.5)),
                               seed=9)
    fn = lat.discretize_field(field, 2)
    bound = 2 * box.dim * 1.5 / 2
    for i in range(200):
        path = walker.simulate_path(field, (0,), 1.5, seed=100 + i)
        w = walker.girsanov_weight(path, field, fn)
        assert w.log_weight == w.jump_term + w.time_term
        assert w.jump_term <= 1e-12, "jump term must be <= 0"
        assert w.log_weight <= bound + 1e-12, "weight bound violated"
    path = walker.simulate_path(field, (0,), 1.5, seed=1)
    w = walker.girsanov_weight(path, field, field)
    assert w.log_weight == 0.0, "self-weight must vanish"


def _check_operator():
    box = lat.LatticeBox(1, 4)
    op = var.build_wn_operator(1.0, 2, box)
    d = (op.matrix - op.matrix.T).tocoo()
    assert len(d.data) == 0 or np.max(np.abs(d.data)) == 0.0, "asymmetry"
    lam = var.top_eigenvalue(op).lambda_max
    dense = float(np.linalg.eigvalsh(op.matrix.toarray())[-1])
    assert abs(lam - dense) <= 1e-8, "dense oracle mismatch"


def _check_paths():
    box = lat.LatticeBox(2, 3)
    field = lat.constant_field(box, 0.8)
    for i in range(50):
        path = walker.simulate_path(field, (0, 0), 3.0, seed=i)
        assert np.all(np.diff(path.jump_times) > 0), "times not increasing"
        for a, b in zip(path.sites, path.sites[1:]):
            field.rate(int(a), int(b))  # raises if the edge does not exist


def _check_backends():
    if kernels.compiled is None:
        return
    box = lat.LatticeBox(1, 10)
    adj = lat.constant_field(box, 1.0).adjacency()
    for key in (1, 99, 12345):
        a = kernels.compiled.simulate_path(adj.nbr, adj.rate, adj.total,
                                           box.origin_index, 5.0, key)
        b = kernels.pure.simulate_path(adj.nbr, adj.rate, adj.total,
                                       box.origin_index, 5.0, key)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]), \
            "kernel backends diverged"


def _check_quenched():
    box = lat.LatticeBox(1, 4)
    field = lat.constant_field(box, 1.0)
    env_box = lat.LatticeBox(1, 6, "periodic")
    traj = envs.build_trajectory(
        envs.EnvConfig("spin_flip", env_box, seed=3, beta=0.5), 1.0)
    sol = fk.solve_quenched(field, traj, "delta0", 1.0, 0.01,
                            checkpoints=[0.5, 1.0])
    assert np.all(sol.fields >= 0.0), "negative solution"
    assert sol.u(1.0) > 0.0


def cmd_verify(args):
    failures = 0
    for name, check in _invariant_checks():
        try:
            check()
            print(f"OK   {name}")
        except AssertionError as exc:
            failures += 1
            print(f"FAIL {name}: {exc}")
    if failures:
        raise InvariantError(f"{failures} invariant check(s) failed")
    return 0


# -- parser ------------------------------------------------------------------------


def _add_common(sp):
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default=None)
    sp.add_argument("--config", default=None, help="flat key=value file; "
                    "command-line flags win")


def _add_field_args(sp):
    sp.add_argument("--field", default=None, help="field CSV produced by gen-field")
    sp.add_argument("--kappa", type=float, default=None)
    sp.add_argument("--dim", type=int, default=1)
    sp.add_argument("--radius", type=int, default=20)
    sp.add_argument("--geometry", default="absorbing", choices=lat.GEOMETRIES)


def _add_env_args(sp):
    sp.add_argument("--env-kind", default="none",
                    choices=("none",) + envs.KINDS)
    sp.add_argument("--env-radius", type=int, default=None)
    sp.add_argument("--env-n", type=int, default=1)
    sp.add_argument("--env-rho", type=float, default=1.0)
    sp.add_argument("--env-nu", type=float, default=1.0)
    sp.add_argument("--env-beta", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pamrc",
        description="Random-conductance parabolic Anderson model: Monte "
                    "Carlo and spectral Lyapunov-exponent estimation")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-field", help="sample and save a conductance field")
    _add_common(sp)
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--radius", type=int, required=True)
    sp.add_argument("--geometry", default="absorbing", choices=lat.GEOMETRIES)
    sp.add_argument("--law", required=True,
                    choices=("constant", "iid", "clustered"))
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--values", default="")
    sp.add_argument("--probs", default="")
    sp.add_argument("--pockets", default="",
                    help="center@radius@value;... (center coords comma-joined)")
    sp.set_defaults(func=cmd_gen_field)

    sp = sub.add_parser("verify-cluster", help="scan a field for a pocket")
    _add_common(sp)
    sp.add_argument("--field", required=True)
    sp.add_argument("--kappa", type=float, required=True)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--pocket-radius", type=int, required=True)
    sp.set_defaults(func=cmd_verify_cluster)

    sp = sub.add_parser("simulate-u", help="integrate the lattice equation "
                        "for one environment draw")
    _add_common(sp)
    _add_field_args(sp)
    _add_env_args(sp)
    sp.add_argument("--initial", default="delta0", choices=("delta0", "ones"))
    sp.add_argument("--t-grid", required=True)
    sp.add_argument("--dt", type=float, default=1e-2)
    sp.set_defaults(func=cmd_simulate_u)

    sp = sub.add_parser("moment", help="Monte Carlo annealed moments")
    _add_common(sp)
    _add_field_args(sp)
    _add_env_args(sp)
    sp.add_argument("--dynamics", required=True,
                    choices=("white_noise", "finite_rw", "infinite_rw"))
    sp.add_argument("--p", type=int, default=2)
    sp.add_argument("--t-grid", required=True)
    sp.add_argument("--replicas", type=int, default=10000)
    sp.add_argument("--u0", default="ones", choices=("ones", "delta0"))
    sp.add_argument("--dt", type=float, default=0.02)
    sp.add_argument("--confine-center", default="0")
    sp.add_argument("--confine-radius", type=int, default=None)
    sp.set_defaults(func=cmd_moment)

    sp = sub.add_parser("variational", help="largest eigenvalue of a moment "
                        "operator, optionally over a kappa grid")
    _add_common(sp)
    sp.add_argument("--dynamics", required=True,
                    choices=("white_noise", "finite_rw", "infinite_rw",
                             "spin_flip"))
    sp.add_argument("--p", type=int, default=2)
    sp.add_argument("--dim", type=int, default=1)
    sp.add_argument("--box-radius", type=int, required=True)
    sp.add_argument("--geometry", default="absorbing", choices=lat.GEOMETRIES)
    sp.add_argument("--field", default=None)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--sweep", default=None, help="comma-separated kappa grid")
    sp.add_argument("--env-radius", type=int, default=1)
    sp.add_argument("--env-n", type=int, default=1)
    sp.add_argument("--env-rho", type=float, default=1.0)
    sp.add_argument("--env-nu", type=float, default=1.0)
    sp.add_argument("--env-beta", type=float, default=0.5)
    sp.add_argument("--N", type=int, default=2)
    sp.add_argument("--M", type=int, default=3)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--size-budget", type=int, default=var.DEFAULT_BUDGET)
    sp.add_argument("--operator-out", default=None)
    sp.set_defaults(func=cmd_variational)

    sp = sub.add_parser("green", help="lattice Green function at the origin")
    _add_common(sp)
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--radius", type=int, required=True)
    sp.set_defaults(func=cmd_green)

    sp = sub.add_parser("quenched", help="quenched exponent estimate")
    _add_common(sp)
    _add_field_args(sp)
    _add_env_args(sp)
    sp.add_argument("--t-grid", required=True)
    sp.add_argument("--dt", type=float, default=1e-2)
    sp.add_argument("--replicas", type=int, default=32)
    sp.add_argument("--confine-center", default="0")
    sp.add_argument("--confine-radius", type=int, default=None)
    sp.set_defaults(func=cmd_quenched)

    sp = sub.add_parser("probe", help="run a theorem probe")
    _add_common(sp)
    _add_field_args(sp)
    _add_env_args(sp)
    sp.add_argument("--statement", required=True,
                    choices=("annealed_sup", "quenched_lower",
                             "decorated_gap", "init_invariance"))
    sp.add_argument("--dynamics", default="white_noise",
                    choices=("white_noise", "finite_rw"))
    sp.add_argument("--p", type=int, default=2)
    sp.add_argument("--t-grid", required=True)
    sp.add_argument("--dt", type=float, default=1e-2)
    sp.add_argument("--replicas", type=int, default=10000)
    sp.add_argument("--kbar1", type=float, default=0.5)
    sp.add_argument("--kbar2", type=float, default=4.0)
    sp.add_argument("--confine-radius", type=int, default=None)
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("verify", help="run the runtime invariant suite")
    _add_common(sp)
    sp.set_defaults(func=cmd_verify)
    return ap


def _apply_config(argv):
    """Insert config-file pairs as flags right after the subcommand; explicit
    flags appear later and therefore win."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    path = argv[at + 1]
    flags = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            flags += [f"--{key.strip().replace('_', '-')}", value.strip()]
    return argv[:1] + flags + argv[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and not argv[0].startswith("-"):
        argv = _apply_config(argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except BudgetError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
