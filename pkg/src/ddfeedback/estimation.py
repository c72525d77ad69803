"""Steady-state transfer function ``G`` from input-output data.

Three estimators share one engine: stack Hankel blocks of the training
signals, solve ``K M = rhs`` for the Frobenius-minimum-norm ``M`` and read
``G_hat = [Y]_i M``.

* ``estimate_G_exact``: disturbance samples known; ``G_hat == G``.
* ``estimate_G_constant_noise``: unknown but constant disturbance, handled
  by differencing the data once more.
* ``estimate_G_minnorm``: unknown, time-varying disturbance; ``G_hat`` is
  inexact and :func:`error_decomposition` explains the error.

Signals are arrays with one row per time step.  With ``T`` training steps
the estimators expect ``y_0..y_T`` (one extra sample for the difference
signal) and use ``q = T - nu + 1`` Hankel columns.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (DimensionError, InfeasibleConstraintsError,
                     MissingGroundTruthError, PersistencyError)
from .hankel import as_signal, block_row, build_hankel, difference_signal, is_persistently_exciting
from .lti_core import RANK_RTOL, transfer_closed_form

TAU_SOLVE = 1e-8

METHODS = ("exact-known-noise", "constant-noise", "min-norm-unknown-noise")


@dataclass(frozen=True)
class RegressorSystem:
    """Stacked constraints ``K M = rhs`` with labelled row blocks."""

    blocks: tuple          # ((label, matrix, rhs), ...) in stacking order
    nu: int
    m: int

    @property
    def K(self):
        return np.vstack([b[1] for b in self.blocks])

    @property
    def rhs(self):
        return np.vstack([b[2] for b in self.blocks])

    @property
    def width(self):
        return self.blocks[0][1].shape[1]

    def residuals(self, M):
        """Frobenius residual of each labelled block."""
        return {label: float(np.linalg.norm(K @ M - R)) for label, K, R in self.blocks}

    def solve(self, tol=TAU_SOLVE, rcond=RANK_RTOL):
        """Minimum-norm solution via SVD; raises if any block is violated."""
        K, R = self.K, self.rhs
        U, s, Vt = np.linalg.svd(K, full_matrices=False)
        keep = s > rcond * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
        M = Vt[keep].T @ ((U[:, keep].T @ R) / s[keep][:, None])
        scale = tol * (np.linalg.norm(K) * np.linalg.norm(M) + np.linalg.norm(R))
        for label, Kb, Rb in self.blocks:
            res = float(np.linalg.norm(Kb @ M - Rb))
            if res > scale:
                raise InfeasibleConstraintsError(
                    f"constraint block {label!r} inconsistent: residual {res:.3e} "
                    f"exceeds tolerance {scale:.3e}", block=label, residual=res)
        return M


def ones_kron_identity(nu, m):
    """``1_nu (x) I_m``: ``nu`` stacked copies of the identity."""
    return np.kron(np.ones((nu, 1)), np.eye(m))


@dataclass(frozen=True)
class TransferEstimate:
    """Estimated steady-state gain and diagnostics."""

    G_hat: np.ndarray
    method: str
    block_index: int = 1
    M: np.ndarray = field(default=None, repr=False)
    residuals: dict = field(default_factory=dict)

    def to_dict(self):
        return {"G_hat": np.asarray(self.G_hat).tolist(), "method": self.method,
                "block_index": self.block_index,
                "residuals": {k: float(v) for k, v in self.residuals.items()}}

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _check_nu(nu):
    if int(nu) != nu or nu < 1:
        raise ValueError("nu must be a positive integer")
    return int(nu)


def _check_pe(z, order, what):
    ok, rank, diag = is_persistently_exciting(z, order)
    if not ok:
        raise PersistencyError(f"{what} not persistently exciting of order {order}: {diag}",
                               rank=rank, required=as_signal(z).shape[1] * order)


def _split_known_noise(u, w, y, nu):
    u, w, y = as_signal(u, "u"), as_signal(w, "w"), as_signal(y, "y")
    T = y.shape[0] - 1
    if T < nu:
        raise DimensionError("y", f"need more than nu={nu} output samples")
    if u.shape[0] < T:
        raise DimensionError("u", f"need at least {T} input samples, got {u.shape[0]}")
    if w.shape[0] < T + 1:
        raise DimensionError("w", f"need at least {T + 1} disturbance samples, got {w.shape[0]}")
    return u[:T], w[:T + 1], y[:T + 1], T


def known_noise_regressor(u, w, y, nu):
    """Constraint blocks ``Ydiff M = 0, Wdiff M = 0, U M = 1(x)I, W M = 0``."""
    nu = _check_nu(nu)
    u, w, y, T = _split_known_noise(u, w, y, nu)
    q = T - nu + 1
    m = u.shape[1]
    Yd = build_hankel(difference_signal(y), nu, q).matrix
    Wd = build_hankel(difference_signal(w), nu, q).matrix
    U = build_hankel(u, nu, q).matrix
    W = build_hankel(w[:T], nu, q).matrix
    blocks = (("Y-diff", Yd, np.zeros((Yd.shape[0], m))),
              ("W-diff", Wd, np.zeros((Wd.shape[0], m))),
              ("U", U, ones_kron_identity(nu, m)),
              ("W", W, np.zeros((W.shape[0], m))))
    return RegressorSystem(blocks=blocks, nu=nu, m=m)


def minnorm_regressor(u, y, nu):
    """Constraint blocks ``Ydiff M = 0, U M = 1(x)I`` (noise unknown)."""
    nu = _check_nu(nu)
    u, y = as_signal(u, "u"), as_signal(y, "y")
    T = y.shape[0] - 1
    if u.shape[0] < T:
        raise DimensionError("u", f"need at least {T} input samples, got {u.shape[0]}")
    u = u[:T]
    q = T - nu + 1
    m = u.shape[1]
    Yd = build_hankel(difference_signal(y), nu, q).matrix
    U = build_hankel(u, nu, q).matrix
    blocks = (("Y-diff", Yd, np.zeros((Yd.shape[0], m))),
              ("U", U, ones_kron_identity(nu, m)))
    return RegressorSystem(blocks=blocks, nu=nu, m=m)


def solve_M_exact(u, w, y, nu, state_dim=None):
    """Minimum-norm ``M`` satisfying all four known-noise constraint blocks.

    When ``state_dim`` is given, ``(u, w)`` is first checked for persistency
    of excitation of order ``state_dim + nu``.
    """
    reg = known_noise_regressor(u, w, y, nu)
    if state_dim is not None:
        T = as_signal(y).shape[0] - 1
        uw = np.hstack([as_signal(u)[:T], as_signal(w)[:T]])
        _check_pe(uw, state_dim + reg.nu, "stacked (u, w)")
    return reg.solve()


def _output_block(y, nu, T, i):
    q = T - nu + 1
    return block_row(build_hankel(as_signal(y)[:T], nu, q), i)


def block_spread(y, M, nu, T=None):
    """Largest deviation of ``[Y]_i M`` from ``[Y]_1 M`` over block rows."""
    y = as_signal(y)
    T = y.shape[0] - 1 if T is None else T
    ref = _output_block(y, nu, T, 1) @ M
    return max(float(np.linalg.norm(_output_block(y, nu, T, i) @ M - ref))
               for i in range(1, nu + 1))


def estimate_G_exact(u, w, y, nu, i=1, state_dim=None):
    """``G_hat = [Y]_i M`` with ``M`` from the known-noise constraints."""
    nu = _check_nu(nu)
    if not 1 <= i <= nu:
        raise IndexError(f"block index {i} outside 1..{nu}")
    reg = known_noise_regressor(u, w, y, nu)
    M = solve_M_exact(u, w, y, nu, state_dim=state_dim)
    T = as_signal(y).shape[0] - 1
    G_hat = _output_block(y, nu, T, i) @ M
    res = reg.residuals(M)
    res["block_spread"] = block_spread(y, M, nu)
    return TransferEstimate(G_hat=G_hat, method="exact-known-noise", block_index=i,
                            M=M, residuals=res)


def estimate_G_constant_noise(u, y, nu, i=1, state_dim=None):
    """Estimate under an unknown constant disturbance.

    Needs ``u_0..u_T`` and ``y_0..y_{T+1}``.  Works on the increments
    ``v = diff(u)`` and ``r = diff(y)``, whose dynamics are disturbance-free.
    """
    nu = _check_nu(nu)
    if not 1 <= i <= nu:
        raise IndexError(f"block index {i} outside 1..{nu}")
    u, y = as_signal(u, "u"), as_signal(y, "y")
    T = y.shape[0] - 2
    if T < nu:
        raise DimensionError("y", f"need at least nu+2={nu + 2} output samples")
    if u.shape[0] < T + 1:
        raise DimensionError("u", f"need at least {T + 1} input samples, got {u.shape[0]}")
    v = difference_signal(u[:T + 1])        # T samples
    r = difference_signal(y[:T + 2])        # T + 1 samples
    if state_dim is not None:
        _check_pe(u[:T + 1], state_dim + nu, "u")
    reg = minnorm_regressor(v, r, nu)
    M = reg.solve()
    G_hat = _output_block(r, nu, T, i) @ M
    res = reg.residuals(M)
    res["block_spread"] = block_spread(r, M, nu)
    return TransferEstimate(G_hat=G_hat, method="constant-noise", block_index=i,
                            M=M, residuals=res)


def _pseudo_inverse_split(reg):
    """Columns of ``pinv([Ydiff; U])`` acting on the ``U`` rows (``U^+``)."""
    pinv = np.linalg.pinv(reg.K, rcond=RANK_RTOL)
    n_yd = reg.blocks[0][1].shape[0]
    return pinv[:, n_yd:]


def estimate_G_minnorm(u, y, nu, i=1, audit_w=None, state_dim=None):
    """Inexact estimate with unknown, possibly time-varying disturbance.

    ``audit_w`` (the true disturbance samples, audit mode only) fills the
    residual diagnostics ``||[W]_i M||``, ``||[Wdiff]_i M||`` and
    ``||[W]_i U^+||``.
    """
    nu = _check_nu(nu)
    if not 1 <= i <= nu:
        raise IndexError(f"block index {i} outside 1..{nu}")
    u, y = as_signal(u, "u"), as_signal(y, "y")
    T = y.shape[0] - 1
    if state_dim is not None:
        _check_pe(u[:T], state_dim + nu, "u")
    reg = minnorm_regressor(u, y, nu)
    M = reg.solve()
    G_hat = _output_block(y, nu, T, i) @ M
    res = reg.residuals(M)
    res["block_spread"] = block_spread(y, M, nu)
    if audit_w is not None:
        w = as_signal(audit_w, "audit_w")
        if w.shape[0] < T + 1:
            raise DimensionError("audit_w", f"need at least {T + 1} samples")
        q = T - nu + 1
        Wi = block_row(build_hankel(w[:T], nu, q), i)
        Wdi = block_row(build_hankel(difference_signal(w[:T + 1]), nu, q), i)
        res["W_i_M"] = float(np.linalg.norm(Wi @ M))
        res["Wdiff_i_M"] = float(np.linalg.norm(Wdi @ M))
        res["W_i_Uplus"] = float(np.linalg.norm(Wi @ _pseudo_inverse_split(reg)))
    return TransferEstimate(G_hat=G_hat, method="min-norm-unknown-noise", block_index=i,
                            M=M, residuals=res)


@dataclass(frozen=True)
class ErrorDecomposition:
    """Three addends whose sum is ``G_hat - G``."""

    state_term: np.ndarray
    noise_term: np.ndarray
    noise_diff_term: np.ndarray
    G_hat: np.ndarray
    G: np.ndarray

    @property
    def total(self):
        return self.state_term + self.noise_term + self.noise_diff_term

    @property
    def discrepancy(self):
        """``||sum of terms - (G_hat - G)||``; zero up to round-off."""
        return float(np.linalg.norm(self.total - (self.G_hat - self.G)))


def _audit_blocks(trajectory, nu, i):
    x, w, y = trajectory.x, trajectory.w, trajectory.y
    T = y.shape[0] - 1
    if x.shape[0] < T or w.shape[0] < T + 1:
        raise DimensionError("trajectory", "audit needs x_0..x_{T-1} and w_0..w_T")
    q = T - nu + 1
    Xi = block_row(build_hankel(x[:T], nu, q), i)
    Wi = block_row(build_hankel(w[:T], nu, q), i)
    Wdi = block_row(build_hankel(difference_signal(w[:T + 1]), nu, q), i)
    Yi = block_row(build_hankel(y[:T], nu, q), i)
    return Xi, Wi, Wdi, Yi


def error_decomposition(sys, M_hat, trajectory, nu, i=1):
    """Split ``G_hat - G`` into state, noise and noise-increment terms.

    ``trajectory`` is the training :class:`~ddfeedback.lti_core.Trajectory`
    (states and disturbances are needed, so this is audit-only).
    """
    if sys is None:
        raise MissingGroundTruthError("error decomposition needs the true system")
    Xi, Wi, Wdi, Yi = _audit_blocks(trajectory, nu, i)
    A, B, C, D, E = sys.A, sys.B, sys.C, sys.D, sys.E
    G, _ = transfer_closed_form(sys)
    x_eq = np.linalg.solve(np.eye(sys.n) - A, B)
    return ErrorDecomposition(state_term=C @ A @ (Xi @ M_hat - x_eq),
                              noise_term=(C @ E + D) @ (Wi @ M_hat),
                              noise_diff_term=D @ (Wdi @ M_hat),
                              G_hat=Yi @ M_hat, G=G)


@dataclass(frozen=True)
class FullRankBound:
    predicted_error: np.ndarray   # right-hand side of the nu = 1 identity
    bound: float                  # norm bound on ||G_hat - G||
    actual_error: float

    @property
    def holds(self):
        return self.actual_error <= self.bound * (1 + 1e-9) + 1e-12


def error_bound_full_rank_C(sys, M_hat, trajectory, nu=1, i=1):
    """Error identity and norm bound when ``C`` has full column rank.

    Only defined for ``nu == 1``.  Spectral norms are used throughout.
    """
    if nu != 1:
        raise ValueError(f"full-column-rank error bound needs nu = 1, got nu = {nu}")
    if sys is None:
        raise MissingGroundTruthError("error bound needs the true system")
    Xi, Wi, Wdi, Yi = _audit_blocks(trajectory, nu, i)
    A, C, D, E = sys.A, sys.C, sys.D, sys.E
    G, _ = transfer_closed_form(sys)
    inv = np.linalg.solve(np.eye(sys.n) - A, np.hstack([E, np.linalg.pinv(C) @ D]))
    F_w = C @ inv[:, :sys.r] + D                  # C (I-A)^-1 E + D
    F_wd = C @ inv[:, sys.r:]                     # C (I-A)^-1 C^+ D
    WM, WdM = Wi @ M_hat, Wdi @ M_hat
    predicted = F_w @ WM + F_wd @ WdM
    bound = (np.linalg.norm(F_w, 2) * np.linalg.norm(WM, 2)
             + np.linalg.norm(F_wd, 2) * np.linalg.norm(WdM, 2))
    actual = float(np.linalg.norm(Yi @ M_hat - G, 2))
    return FullRankBound(predicted_error=predicted, bound=float(bound), actual_error=actual)


def default_horizon(n, nu, m, r):
    """Training length ``(m + r + 1)(n + nu) + 4``."""
    return (m + r + 1) * (n + nu) + 4
