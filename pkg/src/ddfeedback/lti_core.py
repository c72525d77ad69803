"""Stochastic discrete-time LTI plant.

The plant is

    x[k+1] = A x[k] + B u[k] + E w[k]
    y[k]   = C x[k] + D w[k]

with ``A`` Schur stable.  Everything here is a plain value object; simulation
is deterministic given the disturbance seed.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (DimensionError, IllConditionedWarning, StabilityError,
                     StructuralError)

RANK_RTOL = 1e-9
COND_LIMIT = 1e12


def _as_matrix(a, name):
    a = np.array(a, dtype=float, ndmin=2)
    if a.ndim != 2:
        raise DimensionError(name, f"expected a 2-D array, got shape {a.shape}")
    a.setflags(write=False)
    return a


def numerical_rank(a, rtol=RANK_RTOL):
    """Rank with singular values below ``rtol * sigma_max`` treated as zero."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def spectral_radius(a):
    return float(np.max(np.abs(np.linalg.eigvals(a))))


@dataclass(frozen=True)
class LtiSystem:
    """Plant matrices ``(A, B, C, D, E)``.

    Dimensions ``n, m, p, r`` are inferred from the matrices.  Schur
    stability of ``A`` is checked on construction unless
    ``check_stability=False`` (used for marginal models that are reduced
    before use).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    check_stability: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        for name in "ABCDE":
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        A, B, C, D, E = self.A, self.B, self.C, self.D, self.E
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError("A", f"must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionError("B", f"needs {n} rows, got {B.shape[0]}")
        if C.shape[1] != n:
            raise DimensionError("C", f"needs {n} columns, got {C.shape[1]}")
        if E.shape[0] != n:
            raise DimensionError("E", f"needs {n} rows, got {E.shape[0]}")
        if D.shape != (C.shape[0], E.shape[1]):
            raise DimensionError(
                "D", f"must be {C.shape[0]}x{E.shape[1]} (p x r), got {D.shape}")
        if self.check_stability:
            rho = spectral_radius(A)
            if not rho < 1.0:
                raise StabilityError(
                    f"A has spectral radius {rho:.6g} >= 1 (not Schur stable)")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def r(self):
        return self.E.shape[1]

    @property
    def spectral_radius(self):
        return spectral_radius(self.A)

    def to_dict(self):
        return {name: getattr(self, name).tolist() for name in "ABCDE"}

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data, check_stability=True):
        missing = [k for k in "ABCDE" if k not in data]
        if missing:
            raise DimensionError(missing[0], "missing from system document")
        return cls(*(np.asarray(data[k], dtype=float) for k in "ABCDE"),
                   check_stability=check_stability)

    @classmethod
    def from_json(cls, text, check_stability=True):
        return cls.from_dict(json.loads(text), check_stability=check_stability)


@dataclass(frozen=True)
class DisturbanceProcess:
    """Disturbance law: a deterministic mean path plus i.i.d. box noise.

    ``kind`` selects the mean path:

    * ``"constant"``: ``value`` at every step.
    * ``"iid"``: center of the box ``[low, high]``; the noise half-width is
      taken from the box, so samples stay inside it.
    * ``"piecewise"``: ``levels[j]`` held for ``dwell`` steps, cycling.
    * ``"scripted"``: the explicit ``sequence`` (must cover the horizon).

    ``noise`` is the half-width of the uniform noise added on top (ignored
    for ``"iid"``, which derives it from the box).  Support is always a
    compact box.
    """

    kind: str
    dim: int
    seed: int = 0
    value: tuple = None
    low: tuple = None
    high: tuple = None
    levels: tuple = None
    dwell: int = None
    sequence: tuple = None
    noise: float = 0.0

    def __post_init__(self):
        kinds = ("constant", "iid", "piecewise", "scripted")
        if self.kind not in kinds:
            raise ValueError(f"unknown disturbance kind {self.kind!r}; expected one of {kinds}")
        if self.kind == "constant":
            if self.value is None:
                object.__setattr__(self, "value", (0.0,) * self.dim)
            self._check_vec("value", self.value)
        elif self.kind == "iid":
            self._check_vec("low", self.low)
            self._check_vec("high", self.high)
            if np.any(np.asarray(self.high) < np.asarray(self.low)):
                raise ValueError("iid disturbance needs high >= low")
        elif self.kind == "piecewise":
            lv = np.asarray(self.levels, dtype=float)
            if lv.ndim != 2 or lv.shape[1] != self.dim:
                raise DimensionError("levels", f"expected (k, {self.dim}), got {lv.shape}")
            if self.dwell is None or self.dwell < 1:
                raise ValueError("piecewise disturbance needs dwell >= 1")
        else:
            sq = np.asarray(self.sequence, dtype=float)
            if sq.ndim != 2 or sq.shape[1] != self.dim:
                raise DimensionError("sequence", f"expected (T, {self.dim}), got {sq.shape}")
        if self.noise < 0:
            raise ValueError("noise half-width must be nonnegative")

    def _check_vec(self, name, v):
        if v is None or np.asarray(v).shape != (self.dim,):
            raise DimensionError(name, f"expected length {self.dim}")

    # convenience constructors
    @classmethod
    def constant(cls, value, seed=0, noise=0.0):
        value = tuple(np.atleast_1d(np.asarray(value, dtype=float)).tolist())
        return cls("constant", len(value), seed=seed, value=value, noise=noise)

    @classmethod
    def zero(cls, dim):
        return cls.constant(np.zeros(dim))

    @classmethod
    def iid(cls, low, high, seed=0):
        low = tuple(np.atleast_1d(np.asarray(low, dtype=float)).tolist())
        high = tuple(np.atleast_1d(np.asarray(high, dtype=float)).tolist())
        return cls("iid", len(low), seed=seed, low=low, high=high)

    @classmethod
    def piecewise(cls, levels, dwell, seed=0, noise=0.0):
        levels = np.atleast_2d(np.asarray(levels, dtype=float))
        return cls("piecewise", levels.shape[1], seed=seed,
                   levels=tuple(map(tuple, levels.tolist())), dwell=int(dwell), noise=noise)

    @classmethod
    def scripted(cls, sequence):
        sq = np.asarray(sequence, dtype=float)
        if sq.ndim == 1:
            sq = sq[:, None]
        return cls("scripted", sq.shape[1], sequence=tuple(map(tuple, sq.tolist())))

    def with_seed(self, seed):
        return DisturbanceProcess(**{**self.__dict__, "seed": int(seed)})

    @property
    def noise_halfwidth(self):
        if self.kind == "iid":
            return (np.asarray(self.high) - np.asarray(self.low)) / 2.0
        return np.full(self.dim, float(self.noise))

    def mean_path(self, horizon):
        """Mean ``E[w_k]`` for ``k = 0..horizon-1``, shape ``(horizon, dim)``."""
        if self.kind == "constant":
            return np.tile(np.asarray(self.value, dtype=float), (horizon, 1))
        if self.kind == "iid":
            center = (np.asarray(self.low) + np.asarray(self.high)) / 2.0
            return np.tile(center, (horizon, 1))
        if self.kind == "piecewise":
            lv = np.asarray(self.levels, dtype=float)
            idx = (np.arange(horizon) // self.dwell) % lv.shape[0]
            return lv[idx]
        sq = np.asarray(self.sequence, dtype=float)
        if sq.shape[0] < horizon:
            raise DimensionError(
                "sequence", f"scripted length {sq.shape[0]} < requested horizon {horizon}")
        return sq[:horizon].copy()

    def sample(self, horizon):
        """Realization ``w_0..w_{horizon-1}``; deterministic given ``seed``."""
        mean = self.mean_path(horizon)
        hw = self.noise_halfwidth
        if not np.any(hw > 0):
            return mean
        rng = np.random.default_rng(self.seed)
        return mean + rng.uniform(-1.0, 1.0, size=mean.shape) * hw

    def noise_outcomes(self, n_samples=10_000, seed=None):
        """Centered noise outcomes and weights for expectation oracles.

        Zero noise is a point mass (exact); otherwise an ``n_samples``
        Monte Carlo sample with equal weights.
        """
        hw = self.noise_halfwidth
        if not np.any(hw > 0):
            return np.zeros((1, self.dim)), np.ones(1)
        rng = np.random.default_rng(self.seed + 7919 if seed is None else seed)
        z = rng.uniform(-1.0, 1.0, size=(n_samples, self.dim)) * hw
        return z, np.full(n_samples, 1.0 / n_samples)


@dataclass(frozen=True)
class Trajectory:
    """Time-aligned plant signals; ``len(x) == len(u) + 1``."""

    u: np.ndarray
    w: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        T = self.u.shape[0]
        if self.w.shape[0] != T or self.y.shape[0] != T or self.x.shape[0] != T + 1:
            raise DimensionError(
                "trajectory", f"lengths u={T}, w={self.w.shape[0]}, "
                              f"y={self.y.shape[0]}, x={self.x.shape[0]} are not aligned")

    @property
    def horizon(self):
        return self.u.shape[0]

    def replay_residual(self, sys):
        """Largest violation of the plant equations over the trajectory."""
        dx = self.x[1:] - (self.x[:-1] @ sys.A.T + self.u @ sys.B.T + self.w @ sys.E.T)
        dy = self.y - (self.x[:-1] @ sys.C.T + self.w @ sys.D.T)
        return float(max(np.max(np.abs(dx), initial=0.0), np.max(np.abs(dy), initial=0.0)))


@dataclass(frozen=True)
class LyapunovCertificate:
    """Solution ``P`` of ``A^T P A - P = -Q`` with cached eigen-extremes."""

    P: np.ndarray
    Q: np.ndarray

    @property
    def lam_min_P(self):
        return float(np.linalg.eigvalsh(self.P)[0])

    @property
    def lam_max_P(self):
        return float(np.linalg.eigvalsh(self.P)[-1])

    @property
    def lam_min_Q(self):
        return float(np.linalg.eigvalsh(self.Q)[0])

    def residual(self, A):
        return float(np.linalg.norm(A.T @ self.P @ A - self.P + self.Q, 2))


def _input_array(u, horizon, m):
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        if u.shape[0] != m:
            raise DimensionError("u", f"constant input must have length {m}, got {u.shape[0]}")
        return np.tile(u, (horizon, 1))
    if u.ndim != 2 or u.shape[1] != m:
        raise DimensionError("u", f"expected shape (horizon, {m}), got {u.shape}")
    if u.shape[0] < horizon:
        raise DimensionError("u", f"input sequence length {u.shape[0]} < horizon {horizon}")
    return u[:horizon]


def _disturbance_array(w, horizon, r):
    if isinstance(w, DisturbanceProcess):
        if w.dim != r:
            raise DimensionError("w", f"disturbance dimension {w.dim} != r={r}")
        return w.sample(horizon)
    if w is None:
        return np.zeros((horizon, r))
    return _input_array(w, horizon, r) if np.ndim(w) else np.full((horizon, r), float(w))


def simulate(sys, x0, u, w, horizon):
    """Run the plant for ``horizon`` steps.

    ``u`` is an array ``(horizon, m)`` or a constant vector; ``w`` is a
    :class:`DisturbanceProcess`, an array, or ``None`` for zero.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise DimensionError("x0", f"expected length {sys.n}, got shape {x0.shape}")
    U = _input_array(u, horizon, sys.m)
    W = _disturbance_array(w, horizon, sys.r)
    X = np.empty((horizon + 1, sys.n))
    X[0] = x0
    A, B, E = sys.A, sys.B, sys.E
    for k in range(horizon):
        X[k + 1] = A @ X[k] + B @ U[k] + E @ W[k]
    Y = X[:-1] @ sys.C.T + W @ sys.D.T
    return Trajectory(u=U.copy(), w=W.copy(), x=X, y=Y)


def _solve_I_minus_A(A, rhs):
    M = np.eye(A.shape[0]) - A
    lu = sla.lu_factor(M)
    rcond = 1.0 / np.linalg.cond(M, 1) if np.any(M) else 0.0
    if rcond == 0.0 or 1.0 / rcond > COND_LIMIT:
        warnings.warn(f"(I - A) condition number exceeds {COND_LIMIT:.0e}",
                      IllConditionedWarning, stacklevel=3)
    return sla.lu_solve(lu, rhs)


def equilibrium_state(sys, u_bar, w_bar):
    """Equilibrium ``(x_bar, y_bar)`` for constant input and disturbance."""
    u_bar = np.atleast_1d(np.asarray(u_bar, dtype=float))
    w_bar = np.atleast_1d(np.asarray(w_bar, dtype=float))
    if u_bar.shape != (sys.m,):
        raise DimensionError("u_bar", f"expected length {sys.m}")
    if w_bar.shape != (sys.r,):
        raise DimensionError("w_bar", f"expected length {sys.r}")
    x_bar = _solve_I_minus_A(sys.A, sys.B @ u_bar + sys.E @ w_bar)
    return x_bar, sys.C @ x_bar + sys.D @ w_bar


def transfer_closed_form(sys):
    """Steady-state gains ``G = C (I-A)^-1 B`` and ``H = D + C (I-A)^-1 E``."""
    sol = _solve_I_minus_A(sys.A, np.hstack([sys.B, sys.E]))
    G = sys.C @ sol[:, :sys.m]
    H = sys.D + sys.C @ sol[:, sys.m:]
    return G, H


def _check_spd(Q, name="Q"):
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DimensionError(name, "must be square")
    if not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(Q)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")


def solve_discrete_lyapunov(sys, Q=None):
    """Certificate ``P`` with ``A^T P A - P = -Q`` (``Q = I`` by default)."""
    A = sys.A if isinstance(sys, LtiSystem) else np.atleast_2d(np.asarray(sys, dtype=float))
    Q = np.eye(A.shape[0]) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape != A.shape:
        raise DimensionError("Q", f"expected {A.shape}, got {Q.shape}")
    _check_spd(Q)
    # scipy solves a X a^H - X + q = 0, so pass a = A^T
    P = sla.solve_discrete_lyapunov(A.T, Q)
    P = 0.5 * (P + P.T)
    cert = LyapunovCertificate(P=P, Q=Q.copy())
    if cert.residual(A) > 1e-9 * max(1.0, np.linalg.norm(Q, 2)):
        raise ArithmeticError("Lyapunov residual too large; is A Schur stable?")
    return cert


def controllability_matrix(A, B, k):
    blocks, M = [], B
    for _ in range(k):
        blocks.append(M)
        M = A @ M
    return np.hstack(blocks)


def observability_matrix(A, C, k):
    blocks, M = [], C
    for _ in range(k):
        blocks.append(M)
        M = M @ A
    return np.vstack(blocks)


def observability_index(A, C):
    n = A.shape[0]
    for k in range(1, n + 1):
        if numerical_rank(observability_matrix(A, C, k)) == n:
            return k
    raise StructuralError("system is not observable")


def controllability_index(A, B):
    n = A.shape[0]
    for k in range(1, n + 1):
        if numerical_rank(controllability_matrix(A, B, k)) == n:
            return k
    raise StructuralError("system is not controllable")


def structural_indices(sys):
    """Observability index ``nu`` and controllability index ``theta``."""
    return observability_index(sys.A, sys.C), controllability_index(sys.A, sys.B)


def random_system(n, m, p, r, rng=None, rho_range=(0.3, 0.9), feedthrough=True):
    """Random controllable/observable plant with spectral radius in ``rho_range``.

    Entries are i.i.d. standard normal; ``A`` is rescaled so its spectral
    radius is uniform in ``rho_range``.  Redraws until the pair is
    controllable and observable.
    """
    rng = np.random.default_rng(rng)
    for _ in range(100):
        A = rng.standard_normal((n, n))
        A *= rng.uniform(*rho_range) / spectral_radius(A)
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        E = rng.standard_normal((n, r))
        D = rng.standard_normal((p, r)) if feedthrough else np.zeros((p, r))
        sys = LtiSystem(A, B, C, D, E)
        try:
            structural_indices(sys)
        except StructuralError:
            continue
        return sys
    raise RuntimeError("could not draw a controllable and observable system")
