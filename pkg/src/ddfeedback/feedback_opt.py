"""Online stochastic gradient controller and its projected variant.

The controller only needs the measured output ``y_k`` and an estimate
``G_hat`` of the steady-state gain::

    u_{k+1} = Pi_U( u_k - eta * (grad_u phi(u_k, y_k) + G_hat^T grad_y phi(u_k, y_k)) )
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .lti_core import DisturbanceProcess, Trajectory, _disturbance_array


class CostModel:
    """Cost ``phi(u, y)`` with gradient oracles and regularity constants.

    Subclasses implement :meth:`value`, :meth:`grad_u`, :meth:`grad_y` and
    set ``mu`` (strong convexity in ``u``), ``lip_grad_u`` and
    ``lip_grad_y`` (Lipschitz constants of the gradient in ``u`` and ``y``).
    ``lipschitz_y`` is the Lipschitz constant of ``y -> phi(u, y)``; for
    costs that are not globally Lipschitz (quadratics) it is taken over the
    declared compact operating box ``y_box``.

    Time-varying costs accept the slot index ``k``.
    """

    mu = None
    lip_grad_u = None
    lip_grad_y = None

    def value(self, u, y, k=0):
        raise NotImplementedError

    def grad_u(self, u, y, k=0):
        raise NotImplementedError

    def grad_y(self, u, y, k=0):
        raise NotImplementedError

    def lipschitz_y(self, y_box=None):
        raise NotImplementedError

    def lip_grad_hat(self, G_hat):
        """Combined gradient Lipschitz constant ``l_u + ||G_hat|| l_y``."""
        return self.lip_grad_u + np.linalg.norm(G_hat, 2) * self.lip_grad_y

    def check_constants(self):
        if not self.mu > 0:
            raise ValueError(f"strong convexity constant mu must be > 0, got {self.mu}")
        if self.lip_grad_u < 0 or self.lip_grad_y < 0:
            raise ValueError("Lipschitz constants must be nonnegative")


class QuadraticCost(CostModel):
    """``phi_k(u, y) = 0.5 u^T Q_u u + 0.5 ||y - y_ref_k||^2``.

    ``y_ref`` is a vector or a ``(K, p)`` sequence indexed by ``k`` (the
    last entry is held beyond the end).  ``y_box = (lo, hi)`` declares the
    operating range of ``y`` used for ``lipschitz_y``.
    """

    def __init__(self, Q_u, y_ref, y_box=None):
        Q_u = np.atleast_2d(np.asarray(Q_u, dtype=float))
        if Q_u.shape[0] != Q_u.shape[1] or not np.allclose(Q_u, Q_u.T):
            raise DimensionError("Q_u", "must be a symmetric square matrix")
        eig = np.linalg.eigvalsh(Q_u)
        if eig[0] <= 0:
            raise ValueError("Q_u must be positive definite")
        y_ref = np.asarray(y_ref, dtype=float)
        self.Q_u = Q_u
        self.y_ref = y_ref
        self.time_varying = y_ref.ndim == 2
        self.y_box = y_box
        self.mu = float(eig[0])
        self.lip_grad_u = float(eig[-1])
        self.lip_grad_y = 1.0
        self.check_constants()

    @property
    def m(self):
        return self.Q_u.shape[0]

    @property
    def p(self):
        return self.y_ref.shape[-1]

    def ref(self, k=0):
        if self.time_varying:
            return self.y_ref[min(k, self.y_ref.shape[0] - 1)]
        return self.y_ref

    def value(self, u, y, k=0):
        d = np.asarray(y) - self.ref(k)
        return 0.5 * float(u @ self.Q_u @ u) + 0.5 * float(d @ d)

    def grad_u(self, u, y, k=0):
        return self.Q_u @ u

    def grad_y(self, u, y, k=0):
        return np.asarray(y, dtype=float) - self.ref(k)

    def lipschitz_y(self, y_box=None):
        """``sup ||y - y_ref||`` over the box (and over all references)."""
        box = self.y_box if y_box is None else y_box
        if box is None:
            raise ValueError("quadratic costs need a declared y_box for the Lipschitz constant")
        lo, hi = (np.asarray(b, dtype=float) for b in box)
        refs = np.atleast_2d(self.y_ref)
        worst = np.maximum(np.abs(lo[None, :] - refs), np.abs(hi[None, :] - refs))
        return float(np.max(np.linalg.norm(worst, axis=1)))


@dataclass(frozen=True)
class ConvexSet:
    """Closed convex set with a closed-form projection.

    ``kind`` is one of ``"whole-space"``, ``"box"`` (``low``, ``high``),
    ``"nonnegative-orthant"`` or ``"halfspaces"`` (``normals``, ``offsets``:
    ``{u : a_j^T u <= b_j}``; projected exactly when there is a single
    halfspace or the normals are mutually orthogonal).
    """

    kind: str = "whole-space"
    low: np.ndarray = None
    high: np.ndarray = None
    normals: np.ndarray = None
    offsets: np.ndarray = None

    def __post_init__(self):
        kinds = ("whole-space", "box", "nonnegative-orthant", "halfspaces")
        if self.kind not in kinds:
            raise ValueError(f"unknown set kind {self.kind!r}")
        if self.kind == "box":
            lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
            if lo.shape != hi.shape or np.any(hi < lo):
                raise ValueError("box needs low <= high with equal shapes")
            object.__setattr__(self, "low", lo)
            object.__setattr__(self, "high", hi)
        if self.kind == "halfspaces":
            N = np.atleast_2d(np.asarray(self.normals, float))
            b = np.atleast_1d(np.asarray(self.offsets, float))
            if N.shape[0] != b.shape[0]:
                raise DimensionError("offsets", "one offset per normal")
            G = N @ N.T
            if not np.allclose(G, np.diag(np.diag(G))):
                raise ValueError("halfspace normals must be mutually orthogonal "
                                 "(general polyhedra need an iterative projection)")
            if np.any(np.diag(G) == 0):
                raise ValueError("zero halfspace normal")
            object.__setattr__(self, "normals", N)
            object.__setattr__(self, "offsets", b)

    @classmethod
    def box(cls, low, high):
        return cls("box", low=low, high=high)

    def project(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "whole-space":
            return z.copy()
        if self.kind == "box":
            return np.clip(z, self.low, self.high)
        if self.kind == "nonnegative-orthant":
            return np.maximum(z, 0.0)
        N, b = self.normals, self.offsets
        viol = np.maximum(N @ z - b, 0.0)
        return z - N.T @ (viol / np.sum(N * N, axis=1))

    def contains(self, z, tol=1e-12):
        return bool(np.linalg.norm(self.project(z) - np.asarray(z)) <= tol)

    def to_dict(self):
        d = {"kind": self.kind}
        for name in ("low", "high", "normals", "offsets"):
            v = getattr(self, name)
            if v is not None:
                d[name] = np.asarray(v).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ControllerConfig:
    eta: float
    G_hat: np.ndarray
    constraint: ConvexSet = field(default_factory=ConvexSet)
    horizon: int = 100

    def __post_init__(self):
        if not self.eta >= 0 or not math.isfinite(self.eta):
            raise ValueError(f"step size eta must be a finite nonnegative number, got {self.eta}")
        object.__setattr__(self, "G_hat", np.atleast_2d(np.asarray(self.G_hat, dtype=float)))

    def to_dict(self):
        return {"eta": self.eta, "G_hat": self.G_hat.tolist(),
                "constraint": self.constraint.to_dict(), "horizon": self.horizon}

    @classmethod
    def from_dict(cls, d):
        return cls(eta=float(d["eta"]), G_hat=np.asarray(d["G_hat"], dtype=float),
                   constraint=ConvexSet.from_dict(d.get("constraint", {"kind": "whole-space"})),
                   horizon=int(d.get("horizon", 100)))


def composite_gradient(u, y, G_hat, cost, k=0):
    """``grad_u phi(u, y) + G_hat^T grad_y phi(u, y)``."""
    return cost.grad_u(u, y, k) + G_hat.T @ cost.grad_y(u, y, k)


def controller_step(u, y, cfg, cost, k=0):
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if cfg.G_hat.shape != (y.shape[0], u.shape[0]):
        raise DimensionError("G_hat", f"expected {(y.shape[0], u.shape[0])}, got {cfg.G_hat.shape}")
    return u - cfg.eta * composite_gradient(u, y, cfg.G_hat, cost, k)


def projected_step(u, y, cfg, cost, k=0):
    return cfg.constraint.project(controller_step(u, y, cfg, cost, k))


def expected_gradient_step(u, G, H, G_hat, cost, w_outcomes, weights=None, eta=None, k=0):
    """Reference update with the exact expected gradient at the steady-state output.

    Averages the composite gradient over ``y = G u + H w`` for the listed
    disturbance outcomes.  Used only as a test oracle: it needs ``G``,
    ``H`` and the disturbance law.
    """
    w_outcomes = np.atleast_2d(w_outcomes)
    weights = np.full(len(w_outcomes), 1.0 / len(w_outcomes)) if weights is None else weights
    g = sum(wt * composite_gradient(u, G @ u + H @ w, G_hat, cost, k)
            for wt, w in zip(weights, w_outcomes))
    return u - (1.0 if eta is None else eta) * g


@dataclass(frozen=True)
class ClosedLoopRun:
    trajectory: Trajectory
    u_next: np.ndarray           # input computed after the last measurement

    @property
    def u(self):
        return self.trajectory.u

    @property
    def x(self):
        return self.trajectory.x


def closed_loop_run(sys, w, cfg, cost, x0=None, u0=None, horizon=None, project=True):
    """Interconnect plant and controller for ``horizon`` steps.

    At step ``k`` the plant emits ``y_k = C x_k + D w_k``, advances with
    ``u_k``, and the controller produces ``u_{k+1}`` from ``(u_k, y_k)``.
    """
    T = cfg.horizon if horizon is None else horizon
    x = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
    u = np.zeros(sys.m) if u0 is None else np.asarray(u0, dtype=float)
    if x.shape != (sys.n,):
        raise DimensionError("x0", f"expected length {sys.n}")
    if u.shape != (sys.m,):
        raise DimensionError("u0", f"expected length {sys.m}")
    W = _disturbance_array(w, T, sys.r)
    step = projected_step if project else controller_step
    X = np.empty((T + 1, sys.n))
    U = np.empty((T, sys.m))
    Y = np.empty((T, sys.p))
    X[0] = x
    for k in range(T):
        Y[k] = sys.C @ X[k] + sys.D @ W[k]
        U[k] = u
        X[k + 1] = sys.A @ X[k] + sys.B @ u + sys.E @ W[k]
        u = step(u, Y[k], cfg, cost, k)
    return ClosedLoopRun(trajectory=Trajectory(u=U, w=W.copy(), x=X, y=Y), u_next=u)


@dataclass(frozen=True)
class GainInterval:
    """Feasible step sizes ``lower < eta <= upper`` (``<`` if not inclusive)."""

    lower: float
    upper: float
    upper_inclusive: bool
    beta1_lower: float
    beta1_upper: float
    beta2_cap: float
    lip_grad_hat: float
    violations: tuple = ()

    @property
    def feasible(self):
        return not self.violations and self.lower < self.upper

    def contains(self, eta):
        if not self.feasible or eta <= self.lower:
            return False
        return eta <= self.upper if self.upper_inclusive else eta < self.upper

    def midpoint(self):
        if not self.feasible:
            raise ValueError("empty gain interval: " + "; ".join(self.violations))
        hi = self.upper if math.isfinite(self.upper) else self.lower + 1.0
        return 0.5 * (self.lower + hi)


def open_loop_factor(cert, kappa):
    """``(lmax(P)/lmin(P)) (1 - (1 - kappa) lmin(Q)/lmax(P))`` (before the root)."""
    return (cert.lam_max_P / cert.lam_min_P) * (1.0 - (1.0 - kappa) * cert.lam_min_Q / cert.lam_max_P)


def gain_feasibility(cost, G_hat, mismatch, C_norm, cert, kappa=0.5):
    """Step sizes that make both contraction factors smaller than one.

    ``mismatch`` is ``||G - G_hat||`` (spectral norm, or an upper estimate).
    The first factor ``sqrt(1 - eta mu) + eta l ||G - G_hat||`` is below one
    iff ``l ||G - G_hat|| < mu`` and ``eta`` lies above the nonzero root of
    the factor minus one and at most ``1/mu``.  The second factor
    additionally caps ``eta`` from above.
    """
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    mu = cost.mu
    lhat = cost.lip_grad_hat(G_hat)
    eps = lhat * mismatch
    violations = []
    if eps >= mu or mismatch >= mu / lhat:
        violations.append(
            f"||G - G_hat|| = {mismatch:.6g} >= mu / l_hat = {mu / lhat:.6g}")
    root = (2.0 * eps - mu) / eps ** 2 if eps > 0 else -math.inf
    b1_lo = max(root, 0.0)
    b1_hi = 1.0 / mu
    rho = open_loop_factor(cert, kappa)
    if rho >= 1.0:
        violations.append(f"open-loop contraction factor {math.sqrt(rho):.6g} >= 1")
        cap = 0.0
    elif lhat * C_norm == 0:
        cap = math.inf
    else:
        cap = (1.0 - math.sqrt(rho)) / (lhat * C_norm)
    upper = min(b1_hi, cap)
    inclusive = b1_hi < cap
    if not violations and not b1_lo < upper:
        violations.append(f"empty interval: lower {b1_lo:.6g} >= upper {upper:.6g}")
    return GainInterval(lower=b1_lo, upper=upper, upper_inclusive=inclusive,
                        beta1_lower=b1_lo, beta1_upper=b1_hi, beta2_cap=cap,
                        lip_grad_hat=lhat, violations=tuple(violations))
