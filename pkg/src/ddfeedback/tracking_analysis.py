"""Stable optimizers, optimizer-gap bounds and tracking certificates.

These are audit computations: they need the true gains ``G``, ``H`` and the
disturbance law, which the controller itself never sees.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import GainInfeasibleError, MissingGroundTruthError
from .feedback_opt import composite_gradient, open_loop_factor
from .lti_core import LyapunovCertificate, _solve_I_minus_A, solve_discrete_lyapunov

FIXED_POINT_TOL = 1e-9
FIXED_POINT_MAXITER = 10_000


@dataclass(frozen=True)
class StableOptimizerRecord:
    u_so: np.ndarray
    x_so: np.ndarray
    k: int
    residual: float


def _quadratic_parts(Q_u, y_ref, G, H, w_bar):
    Q_u = np.atleast_2d(np.asarray(Q_u, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    y_ref = np.atleast_1d(np.asarray(y_ref, dtype=float))
    w_bar = np.atleast_1d(np.asarray(w_bar, dtype=float))
    return Q_u, y_ref, G, H, w_bar


def stable_optimizer_quadratic(Q_u, y_ref, G_hat, G, H, w_bar, sys=None, w_state=None, k=0):
    """Stable optimizer of ``0.5 u'Q_u u + 0.5 ||y - y_ref||^2``.

    Stationarity of the frozen-distribution problem at its own solution is
    ``(Q_u + G_hat'G_hat) u + G_hat'((G - G_hat) u + H w_bar - y_ref) = 0``,
    i.e. ``(Q_u + G_hat'G) u = G_hat'(y_ref - H w_bar)``.

    With ``sys`` given, the matching state ``(I - A)^-1 (B u + E w)`` is
    filled in, using ``w_state`` (the realized disturbance) when provided
    and ``w_bar`` otherwise.
    """
    Q_u, y_ref, G, H, w_bar = _quadratic_parts(Q_u, y_ref, G, H, w_bar)
    G_hat = np.atleast_2d(np.asarray(G_hat, dtype=float))
    K = Q_u + G_hat.T @ G
    rhs = G_hat.T @ (y_ref - H @ w_bar)
    if np.linalg.cond(K) > 1e12:
        raise np.linalg.LinAlgError("stable-optimizer system matrix Q_u + G_hat^T G is singular")
    u = np.linalg.solve(K, rhs)
    res = (Q_u + G_hat.T @ G_hat) @ u + G_hat.T @ ((G - G_hat) @ u + H @ w_bar - y_ref)
    x = None
    if sys is not None:
        w = w_bar if w_state is None else np.atleast_1d(np.asarray(w_state, dtype=float))
        x = _solve_I_minus_A(sys.A, sys.B @ u + sys.E @ w)
    return StableOptimizerRecord(u_so=u, x_so=x, k=k, residual=float(np.linalg.norm(res)))


def true_optimizer_quadratic(Q_u, y_ref, G, H, w_bar):
    """``argmin 0.5 u'Q_u u + 0.5 ||G u + H w_bar - y_ref||^2``."""
    Q_u, y_ref, G, H, w_bar = _quadratic_parts(Q_u, y_ref, G, H, w_bar)
    return np.linalg.solve(Q_u + G.T @ G, G.T @ (y_ref - H @ w_bar))


def linear_induced_outcomes(G, G_hat, H, w_outcomes, weights=None):
    """Outcome map ``u -> {(G - G_hat) u + H w_j}`` of the induced distribution."""
    Delta = np.atleast_2d(G) - np.atleast_2d(G_hat)
    HW = np.atleast_2d(w_outcomes) @ np.atleast_2d(H).T
    wts = np.full(HW.shape[0], 1.0 / HW.shape[0]) if weights is None else np.asarray(weights)

    def outcomes(u):
        return HW + Delta @ u, wts

    return outcomes


def stable_optimizer_fixed_point(cost, G_hat, outcomes, u0, k=0, tol=FIXED_POINT_TOL,
                                 max_iter=FIXED_POINT_MAXITER):
    """Repeated retraining for general costs.

    Freeze the distribution at the current iterate, minimize the expected
    cost ``E phi(u, G_hat u + z)`` over ``u``, refreeze, repeat until the
    iterate moves less than ``tol``.  ``outcomes(u)`` returns the support
    ``(N, p)`` and weights of the induced distribution.

    Returns ``(u, iterations)``; raises ``RuntimeError`` without convergence.
    """
    G_hat = np.atleast_2d(G_hat)
    theta = np.asarray(u0, dtype=float)
    for it in range(1, max_iter + 1):
        Z, wts = outcomes(theta)

        def f(u):
            Y = Z + G_hat @ u
            val = sum(wt * cost.value(u, y, k) for wt, y in zip(wts, Y))
            grad = sum(wt * composite_gradient(u, y, G_hat, cost, k) for wt, y in zip(wts, Y))
            return val, grad

        sol = optimize.minimize(f, theta, jac=True, method="L-BFGS-B",
                                options={"gtol": 1e-13, "ftol": 1e-15, "maxiter": 1000})
        step = np.linalg.norm(sol.x - theta)
        theta = sol.x
        if step <= tol:
            return theta, it
    raise RuntimeError(f"retraining iteration did not converge in {max_iter} steps")


def output_box(gains, offset, u_low, u_high):
    """Interval hull of ``{M u + offset : u in [u_low, u_high]}`` over several ``M``."""
    u_low, u_high = np.asarray(u_low, float), np.asarray(u_high, float)
    c, r = (u_low + u_high) / 2.0, (u_high - u_low) / 2.0
    offset = np.asarray(offset, dtype=float)
    lo = hi = None
    for M in gains:
        M = np.atleast_2d(M)
        mid, rad = M @ c + offset, np.abs(M) @ r
        lo = mid - rad if lo is None else np.minimum(lo, mid - rad)
        hi = mid + rad if hi is None else np.maximum(hi, mid + rad)
    return lo, hi


def optimizer_gap_bound(lip_y, mu, G, G_hat):
    """``2 l ||G - G_hat|| / (mu sigma_min(G_hat)^2)``."""
    G_hat = np.atleast_2d(G_hat)
    smin = np.linalg.svd(G_hat, compute_uv=False)
    smin = smin[-1] if G_hat.shape[0] >= G_hat.shape[1] else 0.0
    if smin <= 1e-14 * max(1.0, np.linalg.norm(G_hat, 2)):
        raise ValueError("G_hat is not full column rank; the optimizer-gap bound is undefined")
    return 2.0 * lip_y * np.linalg.norm(np.atleast_2d(G) - G_hat, 2) / (mu * smin ** 2)


def wasserstein_shift_bound(G, G_hat, u, u_prime):
    """Upper bound ``||G - G_hat|| ||u - u'||`` on the induced W1 shift."""
    d = np.linalg.norm(np.atleast_2d(G) - np.atleast_2d(G_hat), 2)
    return float(d * np.linalg.norm(np.asarray(u, float) - np.asarray(u_prime, float)))


@dataclass(frozen=True)
class TrackingConstants:
    beta1: float
    beta2: float
    gamma1: float
    gamma2: float
    gamma3: float
    kappa: float
    lip_grad_hat: float
    certificate: LyapunovCertificate = field(repr=False)

    @property
    def rate(self):
        return max(self.beta1, self.beta2)


def compute_tracking_constants(cfg, cost, sys, G=None, cert=None, kappa=0.5):
    """Contraction and drift constants of the closed loop.

    ``G`` is the true steady-state gain (needed for the mismatch);
    ``cert`` defaults to the Lyapunov pair with ``Q = I``.
    """
    if G is None:
        raise MissingGroundTruthError("tracking constants need the true gain G")
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    eta, mu = cfg.eta, cost.mu
    if eta * mu > 1.0 + 1e-15:
        raise GainInfeasibleError(f"eta = {eta:.6g} > 1/mu = {1 / mu:.6g}: first factor is not real")
    if cert is None:
        cert = solve_discrete_lyapunov(sys)
    lhat = cost.lip_grad_hat(cfg.G_hat)
    mismatch = np.linalg.norm(np.atleast_2d(G) - cfg.G_hat, 2)
    beta1 = math.sqrt(max(1.0 - eta * mu, 0.0)) + eta * lhat * mismatch
    beta2 = math.sqrt(max(open_loop_factor(cert, kappa), 0.0)) + eta * lhat * np.linalg.norm(sys.C, 2)
    lq = cert.lam_min_Q
    gamma3 = max(math.sqrt(2.0 * cert.lam_max_P / (kappa * lq)),
                 4.0 * np.linalg.norm(sys.A.T @ cert.P, 2) / (kappa * lq))
    return TrackingConstants(beta1=float(beta1), beta2=float(beta2), gamma1=float(eta),
                             gamma2=1.0, gamma3=float(gamma3), kappa=kappa,
                             lip_grad_hat=float(lhat), certificate=cert)


@dataclass(frozen=True)
class BoundSequence:
    """Tracking bound ``b_k`` and the per-step contributions that build it."""

    bound: np.ndarray
    contraction: np.ndarray
    gradient_error: np.ndarray
    optimizer_drift: np.ndarray
    state_drift: np.ndarray


def tracking_bound_sequence(constants, e_u0, e_x0, u_drift, grad_error, sup_x_drift):
    """Iterate the one-step tracking inequality from the initial errors.

    ``u_drift[k] = ||u_so_{k+1} - u_so_k||`` for ``k = 0..K-1``;
    ``grad_error`` is ``E||e_k||`` (scalar or length ``K``);
    ``sup_x_drift`` is ``E[sup_t ||x_so_{t+1} - x_so_t||]`` over the horizon.

    The first step uses the two initial errors separately.  Afterwards only
    their sum is known, so it is contracted by ``max(beta1, beta2)``.
    Returns a :class:`BoundSequence` of length ``K + 1``.
    """
    c = constants
    u_drift = np.asarray(u_drift, dtype=float)
    K = u_drift.shape[0]
    ge = np.broadcast_to(np.asarray(grad_error, dtype=float), (K,))
    b = np.empty(K + 1)
    contr = np.zeros(K + 1)
    b[0] = e_u0 + e_x0
    t_grad = c.gamma1 * ge
    t_u = c.gamma2 * u_drift
    t_x = np.full(K, c.gamma3 * float(sup_x_drift))
    for k in range(K):
        contr[k + 1] = c.beta1 * e_u0 + c.beta2 * e_x0 if k == 0 else c.rate * b[k]
        b[k + 1] = contr[k + 1] + t_grad[k] + t_u[k] + t_x[k]
    pad = lambda a: np.concatenate([[0.0], a])
    return BoundSequence(bound=b, contraction=contr, gradient_error=pad(t_grad),
                         optimizer_drift=pad(t_u), state_drift=pad(t_x))


def tracking_errors(run, records):
    """Per-step ``||u_k - u_so_k|| + ||x_k - x_so_k||`` of one run."""
    U, X = run.u, run.x[:-1]
    return np.array([np.linalg.norm(U[k] - rec.u_so) + np.linalg.norm(X[k] - rec.x_so)
                     for k, rec in enumerate(records[:U.shape[0]])])


def empirical_tracking_error(runs, records):
    """Mean tracking error over runs, reduced in run order.

    ``records`` is either one list of per-step stable optimizers shared by
    all runs, or one list per run (the state part depends on the realized
    disturbance).
    """
    runs = list(runs)
    if not runs:
        raise ValueError("empirical tracking error needs at least one run")
    per_run = records if isinstance(records[0], (list, tuple)) else [records] * len(runs)
    total = None
    for run, recs in zip(runs, per_run):
        e = tracking_errors(run, recs)
        total = e if total is None else total + e
    return total / len(runs)


def gradient_error_sample(u, y, G_hat, cost, y_outcomes, weights=None, k=0):
    """Sampled composite gradient minus its expectation over ``y_outcomes``.

    ``y_outcomes`` lists the outputs the disturbance could have produced at
    this step (a single row for a deterministic disturbance).
    """
    G_hat = np.atleast_2d(G_hat)
    Y = np.atleast_2d(y_outcomes)
    wts = np.full(Y.shape[0], 1.0 / Y.shape[0]) if weights is None else np.asarray(weights)
    mean = sum(wt * composite_gradient(u, yj, G_hat, cost, k) for wt, yj in zip(wts, Y))
    return composite_gradient(u, y, G_hat, cost, k) - mean


def expected_gradient_error_norm(G_hat, H, cost, noise_outcomes, u=None, y=None, k=0):
    """``E||e_k||`` for an additive output noise ``H eps``.

    The realized output is ``y + H eps_j`` and the expectation runs over all
    noise outcomes; the returned value averages ``||e||`` over those
    realizations.  Exact for point masses.
    """
    G_hat = np.atleast_2d(G_hat)
    eps = np.atleast_2d(noise_outcomes)
    if not np.any(eps):
        return 0.0
    m = G_hat.shape[1]
    u = np.zeros(m) if u is None else u
    y = np.zeros(G_hat.shape[0]) if y is None else y
    Y = y + eps @ np.atleast_2d(H).T
    grads = np.array([composite_gradient(u, yj, G_hat, cost, k) for yj in Y])
    return float(np.mean(np.linalg.norm(grads - grads.mean(axis=0), axis=1)))


def write_tracking_csv(path, empirical, bound, constants, breakdown=None):
    """Per-step CSV ``k,empirical_error,bound,beta1,beta2`` (plus breakdown columns)."""
    cols = ["k", "empirical_error", "bound", "beta1", "beta2"]
    extra = ["contraction", "gradient_error", "optimizer_drift", "state_drift"]
    if breakdown is not None:
        cols += extra
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for k in range(len(empirical)):
            row = [k, repr(float(empirical[k])), repr(float(bound[k])),
                   repr(constants.beta1), repr(constants.beta2)]
            if breakdown is not None:
                row += [repr(float(getattr(breakdown, name)[k])) for name in extra]
            wr.writerow(row)
