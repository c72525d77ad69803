"""Seeded experiment drivers behind the command-line interface.

Every driver is deterministic given its configuration: trial ``t`` draws
from a generator seeded by :func:`trial_seed` and results are reduced in
trial order, so reruns reproduce CSV files byte for byte.
"""

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (GainInfeasibleError, InfeasibleConstraintsError, PersistencyError,
                     StructuralError)
from .estimation import (default_horizon, estimate_G_constant_noise, estimate_G_exact,
                         estimate_G_minnorm)
from .feedback_opt import ControllerConfig, ConvexSet, QuadraticCost, closed_loop_run, gain_feasibility
from .hankel import read_signal_csv, write_signal_csv
from .lti_core import (DisturbanceProcess, LtiSystem, LyapunovCertificate, random_system,
                       simulate, solve_discrete_lyapunov, structural_indices,
                       transfer_closed_form)
from .rideshare import DemandProfile, RegionGraph, RideScenario, run_policy_comparison, write_comparison_csv
from .tracking_analysis import (compute_tracking_constants, empirical_tracking_error,
                                expected_gradient_error_norm, stable_optimizer_quadratic,
                                tracking_bound_sequence, write_tracking_csv)


def trial_seed(seed, trial):
    """Integer seed for one trial.

    ``seed ^ trial`` alone maps the trials of base seeds below the trial
    count onto the same set, so the base seed is mixed in as well.
    """
    ss = np.random.SeedSequence([int(seed) ^ int(trial), int(seed)])
    return int(ss.generate_state(1)[0])


def trial_rng(seed, trial, tag=0):
    return np.random.default_rng([trial_seed(seed, trial), int(tag)])


def _ordered_map(fn, items, workers=1):
    if workers is None or workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# Monte Carlo accuracy of the exact estimator

def steady_state_by_simulation(sys, u, tol=1e-14, max_steps=200_000):
    """Run ``x <- A x + B u`` from zero until it stops moving; return ``C x``."""
    x = np.zeros(sys.n)
    Bu = sys.B @ u
    for _ in range(max_steps):
        x_new = sys.A @ x + Bu
        if np.linalg.norm(x_new - x) <= tol * (1.0 + np.linalg.norm(x_new)):
            return sys.C @ x_new
        x = x_new
    raise RuntimeError("simulation did not settle")


def montecarlo_trial(args):
    """One system: ``(G error, prediction error)`` or ``None`` when skipped."""
    n, trial, cfg = args
    rng = trial_rng(cfg["seed"], trial, n)
    m, p, r = cfg["m"], cfg["p"], cfg["r"]
    try:
        sys = random_system(n, m, p, r, rng, rho_range=tuple(cfg["rho_range"]))
        nu, _ = structural_indices(sys)
    except StructuralError:
        return None
    T = default_horizon(n, nu, m, r)
    u = rng.uniform(-1.0, 1.0, size=(T + 1, m))
    w = cfg["noise"] * rng.uniform(-1.0, 1.0, size=(T + 1, r))
    traj = simulate(sys, None, u, w, T + 1)
    try:
        if cfg["noise"] > 0:
            est = estimate_G_exact(traj.u[:T], traj.w, traj.y, nu, state_dim=n)
        else:
            # no disturbance to excite: the W blocks vanish and min-norm is exact
            est = estimate_G_minnorm(traj.u, traj.y, nu, state_dim=n)
    except (PersistencyError, InfeasibleConstraintsError):
        return None
    G, _ = transfer_closed_form(sys)
    u_eq = rng.normal(size=m)
    y_eq = steady_state_by_simulation(sys, u_eq)
    return (float(np.linalg.norm(est.G_hat - G)),
            float(np.linalg.norm(est.G_hat @ u_eq - y_eq)))


MONTECARLO_DEFAULTS = {"seed": 0, "trials": 100, "sizes": [2, 5, 10], "m": 1, "p": 1, "r": 1,
                       "noise": 1.0, "rho_range": [0.3, 0.9], "workers": 1}


@dataclass(frozen=True)
class MonteCarloRow:
    n: int
    mean_G_error: float
    mean_prediction_error: float
    trials_used: int
    skipped: int


def run_montecarlo_g(config=None, out=None):
    """Mean estimation and steady-state prediction error per system size."""
    cfg = {**MONTECARLO_DEFAULTS, **(config or {})}
    rows = []
    for n in cfg["sizes"]:
        results = _ordered_map(montecarlo_trial, [(n, t, cfg) for t in range(cfg["trials"])],
                               cfg["workers"])
        ok = [r for r in results if r is not None]
        g_err = float(np.mean([r[0] for r in ok])) if ok else float("nan")
        y_err = float(np.mean([r[1] for r in ok])) if ok else float("nan")
        rows.append(MonteCarloRow(n, g_err, y_err, len(ok), len(results) - len(ok)))
    if out is not None:
        with open(out, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["n", "mean_G_error", "mean_prediction_error", "trials_used", "skipped"])
            for r in rows:
                wr.writerow([r.n, repr(r.mean_G_error), repr(r.mean_prediction_error),
                             r.trials_used, r.skipped])
    return rows


# --------------------------------------------------------------------------
# Tracking of the stable optimizer

TRACKING_DEFAULTS = {"seed": 0, "trials": 100, "horizon": 150, "noise": 0.2,
                     "levels": [[0.0, 0.0], [0.5, -0.3], [0.2, 0.4]], "dwell": 50,
                     "y_ref": [1.0, -0.5], "eta_fraction": 0.8, "kappa": 0.5,
                     "training_noise": 0.01, "system_seed": 3}


@dataclass(frozen=True)
class TrackingScenario:
    sys: LtiSystem
    G: np.ndarray
    H: np.ndarray
    cost: QuadraticCost
    cert: LyapunovCertificate
    cfg: ControllerConfig
    disturbance: DisturbanceProcess


def default_tracking_system(system_seed=3):
    """Three states, two inputs/outputs/disturbances, symmetric ``A`` with norm 0.5.

    ``B`` is scaled so the steady-state gain has unit norm and ``C`` so it
    has unit norm.
    """
    rng = np.random.default_rng(system_seed)
    n, m, p, r = 3, 2, 2, 2
    V, _ = np.linalg.qr(rng.normal(size=(n, n)))
    A = V @ np.diag([0.5, 0.3, -0.2]) @ V.T
    B = rng.normal(size=(n, m))
    C = rng.normal(size=(p, n))
    C /= np.linalg.norm(C, 2)
    D = 0.1 * rng.normal(size=(p, r))
    E = 0.5 * rng.normal(size=(n, r))
    B /= np.linalg.norm(C @ np.linalg.solve(np.eye(n) - A, B), 2)
    return LtiSystem(A, B, C, D, E)


def build_tracking_scenario(config=None):
    """Plant, learned gain, cost, certificate and a feasible controller."""
    cfg = {**TRACKING_DEFAULTS, **(config or {})}
    sys = default_tracking_system(cfg["system_seed"])
    G, H = transfer_closed_form(sys)
    ctrl = cfg.get("controller")
    if ctrl is not None and "G_hat" in ctrl:
        G_hat = np.asarray(ctrl["G_hat"], dtype=float)
    else:
        rng = np.random.default_rng(cfg["system_seed"] + 1)
        nu, _ = structural_indices(sys)
        T = default_horizon(sys.n, nu, sys.m, sys.r) * 4
        traj = simulate(sys, None, rng.normal(size=(T, sys.m)),
                        cfg["training_noise"] * rng.normal(size=(T, sys.r)), T)
        G_hat = estimate_G_minnorm(traj.u, traj.y, nu).G_hat
    # Q = I - A'A makes P = I for the symmetric A used here
    Q = np.eye(sys.n) - sys.A.T @ sys.A
    cert = solve_discrete_lyapunov(sys.A, Q)
    y_box = (-5.0 * np.ones(sys.p), 5.0 * np.ones(sys.p))
    cost = QuadraticCost(np.eye(sys.m), np.asarray(cfg["y_ref"], dtype=float), y_box=y_box)
    mismatch = float(np.linalg.norm(G - G_hat, 2))
    gi = gain_feasibility(cost, G_hat, mismatch, np.linalg.norm(sys.C, 2), cert, cfg["kappa"])
    if ctrl is not None and "eta" in ctrl:
        eta = float(ctrl["eta"])
        if not gi.contains(eta):
            reasons = "; ".join(gi.violations) or (
                f"eta = {eta:.6g} outside ({gi.lower:.6g}, {gi.upper:.6g}"
                + ("]" if gi.upper_inclusive else ")"))
            raise GainInfeasibleError(reasons)
    else:
        if not gi.feasible:
            raise GainInfeasibleError("; ".join(gi.violations))
        eta = cfg["eta_fraction"] * gi.upper
    constraint = ConvexSet.from_dict(ctrl["constraint"]) if ctrl and "constraint" in ctrl else ConvexSet()
    ccfg = ControllerConfig(eta=eta, G_hat=G_hat, constraint=constraint, horizon=cfg["horizon"])
    levels = np.atleast_2d(np.asarray(cfg["levels"], dtype=float))
    dist = DisturbanceProcess.piecewise(levels, cfg["dwell"], seed=cfg["seed"], noise=cfg["noise"])
    return TrackingScenario(sys, G, H, cost, cert, ccfg, dist)


@dataclass(frozen=True)
class TrackingResult:
    empirical: np.ndarray
    bounds: object
    constants: object
    scenario: TrackingScenario


def _tracking_trial(args):
    sc, seed, K = args
    w = sc.disturbance.with_seed(seed)
    run = closed_loop_run(sc.sys, w, sc.cfg, sc.cost, horizon=K + 1,
                          project=sc.cfg.constraint.kind != "whole-space")
    w_bar = w.mean_path(K + 1)
    recs = [stable_optimizer_quadratic(sc.cost.Q_u, sc.cost.ref(k), sc.cfg.G_hat, sc.G, sc.H,
                                       w_bar[k], sc.sys, run.trajectory.w[k], k)
            for k in range(K + 1)]
    return run, recs


def run_tracking(config=None, out=None):
    """Mean tracking error against the iterated tracking bound."""
    cfg = {**TRACKING_DEFAULTS, **(config or {})}
    sc = build_tracking_scenario(cfg)
    K = cfg["horizon"]
    seeds = [trial_seed(cfg["seed"], t) for t in range(cfg["trials"])]
    trials = _ordered_map(_tracking_trial, [(sc, s, K) for s in seeds], cfg.get("workers", 1))
    runs = [t[0] for t in trials]
    recs = [t[1] for t in trials]
    empirical = empirical_tracking_error(runs, recs)
    consts = compute_tracking_constants(sc.cfg, sc.cost, sc.sys, sc.G, sc.cert, cfg["kappa"])
    # stable inputs only depend on the mean path, so they agree across seeds
    u_so = np.array([r.u_so for r in recs[0]])
    u_drift = np.linalg.norm(np.diff(u_so, axis=0), axis=1)
    sup_x = float(np.mean([max(np.linalg.norm(rr[k + 1].x_so - rr[k].x_so) for k in range(K))
                           for rr in recs]))
    eps, _ = sc.disturbance.noise_outcomes()
    grad_err = expected_gradient_error_norm(sc.cfg.G_hat, sc.H, sc.cost, eps)
    x0 = runs[0].x[0]
    u0 = runs[0].u[0]
    e_u0 = float(np.linalg.norm(u0 - recs[0][0].u_so))
    e_x0 = float(np.mean([np.linalg.norm(x0 - rr[0].x_so) for rr in recs]))
    bounds = tracking_bound_sequence(consts, e_u0, e_x0, u_drift[:K], grad_err, sup_x)
    if out is not None:
        write_tracking_csv(out, empirical[:K + 1], bounds.bound, consts, bounds)
    return TrackingResult(empirical=empirical[:K + 1], bounds=bounds, constants=consts, scenario=sc)


# --------------------------------------------------------------------------
# Ride-service pricing

RIDESHARE_DEFAULTS = {"seed": 0, "trials": 100, "regions": 4, "max_travel": 3, "rho": 0.05,
                      "markup": 0.25, "demand_noise": 0.15, "peak_total": 1.5,
                      "rebalance": 0.03, "price_cap_ratio": 1.4, "theta": 1.0}


def build_ride_scenario(config=None):
    cfg = {**RIDESHARE_DEFAULTS, **(config or {})}
    if isinstance(cfg.get("graph"), str):
        with open(cfg["graph"]) as fh:
            graph = RegionGraph.from_json(fh.read())
    elif "graph" in cfg:
        graph = RegionGraph.from_dict(cfg["graph"])
    else:
        graph = RegionGraph.complete(cfg["regions"], rebalance=cfg["rebalance"],
                                     markup_cap=cfg["price_cap_ratio"], theta=cfg["theta"])
    demand = DemandProfile.from_csv(cfg["demand"], graph) if "demand" in cfg else None
    return RideScenario(graph=graph, max_travel=cfg["max_travel"], rho=cfg["rho"],
                        markup=cfg["markup"], eta=cfg.get("eta"),
                        demand_noise=cfg["demand_noise"], peak_total=cfg["peak_total"],
                        horizon=cfg.get("horizon"), demand=demand)


def run_rideshare(config=None, out=None):
    cfg = {**RIDESHARE_DEFAULTS, **(config or {})}
    scenario = build_ride_scenario(cfg)
    seeds = [trial_seed(cfg["seed"], t) for t in range(cfg["trials"])]
    result = run_policy_comparison(scenario, seeds)
    if out is not None:
        write_comparison_csv(out, result)
    return result


# --------------------------------------------------------------------------
# File-based estimation and simulation

ESTIMATORS = {"exact": "exact-known-noise", "constant-noise": "constant-noise",
              "min-norm": "min-norm-unknown-noise"}


def run_estimate(u_path, y_path, method, nu, w_path=None, block=1, state_dim=None, out=None):
    """Estimate the steady-state gain from signal CSV files."""
    if method not in ESTIMATORS:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(ESTIMATORS)}")
    u = read_signal_csv(u_path)
    y = read_signal_csv(y_path)
    w = read_signal_csv(w_path) if w_path else None
    if method == "exact":
        if w is None:
            raise ValueError("the exact method needs the disturbance signal (--w)")
        est = estimate_G_exact(u, w, y, nu, i=block, state_dim=state_dim)
    elif method == "constant-noise":
        est = estimate_G_constant_noise(u, y, nu, i=block, state_dim=state_dim)
    else:
        est = estimate_G_minnorm(u, y, nu, i=block, audit_w=w, state_dim=state_dim)
    if out is not None:
        with open(out, "w") as fh:
            fh.write(est.to_json(indent=2) + "\n")
    return est


SIMULATE_DEFAULTS = {"seed": 0, "horizon": 50, "input": "gaussian", "input_scale": 1.0}


def run_simulate(config, out_dir):
    """Simulate a plant from a JSON config and write ``u``, ``w``, ``x``, ``y`` CSVs.

    ``config["system"]`` holds the matrices; ``config["disturbance"]`` is
    ``{"kind": ..., ...}`` as accepted by the disturbance process; the input
    is Gaussian (``"gaussian"``) or a constant vector (``"constant"`` with
    ``"u"``).
    """
    cfg = {**SIMULATE_DEFAULTS, **config}
    sys = LtiSystem.from_dict(cfg["system"])
    T = int(cfg["horizon"])
    rng = np.random.default_rng(cfg["seed"])
    if cfg["input"] == "constant":
        u = np.tile(np.asarray(cfg["u"], dtype=float), (T, 1))
    else:
        u = cfg["input_scale"] * rng.normal(size=(T, sys.m))
    dist = cfg.get("disturbance")
    if dist is None:
        w = None
    else:
        d = dict(dist)
        for key in ("value", "low", "high", "levels", "sequence"):
            if key in d:
                v = d[key]
                d[key] = tuple(map(tuple, v)) if key in ("levels", "sequence") else tuple(v)
        w = DisturbanceProcess(dim=sys.r, seed=cfg["seed"], **d)
    x0 = cfg.get("x0")
    traj = simulate(sys, None if x0 is None else np.asarray(x0, float), u, w, T)
    os.makedirs(out_dir, exist_ok=True)
    for name in ("u", "w", "x", "y"):
        write_signal_csv(os.path.join(out_dir, f"{name}.csv"), getattr(traj, name))
    G, H = transfer_closed_form(sys)
    nu, _ = structural_indices(sys)
    with open(os.path.join(out_dir, "system.json"), "w") as fh:
        json.dump({**sys.to_dict(), "G": G.tolist(), "H": H.tolist(), "nu": nu}, fh, indent=2)
        fh.write("\n")
    return traj
