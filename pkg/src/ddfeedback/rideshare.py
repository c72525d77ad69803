"""Ride-service pricing on a region graph.

Idle vehicles ``x^i`` (normalized by fleet size) rebalance along fixed
fractions ``a_ij``, leave with accepted rides and reappear at the
destination after a random travel time.  The provider sets one price per
ordered region pair; customers accept a ride with probability falling
linearly in the price.

The controller sees only the idle vector.  Its gradient uses the
steady-state sensitivity of the idle vector to prices, computed from the
difference-coordinate model in :func:`reduced_system`.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, SignalFormatError, StabilityError
from .feedback_opt import ConvexSet, CostModel
from .lti_core import LtiSystem, spectral_radius, transfer_closed_form

MU_FLOOR = 1e-6


@dataclass(frozen=True)
class RegionGraph:
    """Rebalancing fractions, routing costs, price caps and elasticities.

    All fields are ``(n, n)`` arrays; the diagonal of ``c``, ``p_max`` and
    ``theta`` is ignored (no rides within a region).
    """

    a: np.ndarray
    c: np.ndarray
    p_max: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        arrs = {}
        for name in ("a", "c", "p_max", "theta"):
            v = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if v.ndim != 2 or v.shape[0] != v.shape[1]:
                raise DimensionError(name, f"must be square, got shape {v.shape}")
            arrs[name] = v
            object.__setattr__(self, name, v)
        n = arrs["a"].shape[0]
        for name, v in arrs.items():
            if v.shape != (n, n):
                raise DimensionError(name, f"expected ({n}, {n}), got {v.shape}")
        a = arrs["a"]
        if np.any(a < 0) or np.any(np.diag(a) != 0):
            raise ValueError("rebalancing fractions must be >= 0 with a_ii = 0")
        if np.any(a.sum(axis=1) > 1 + 1e-12):
            raise ValueError("rebalancing outflow fractions must sum to <= 1 per region")
        off = ~np.eye(n, dtype=bool)
        if np.any(arrs["c"][off] <= 0) or np.any(arrs["p_max"][off] <= 0):
            raise ValueError("routing costs and price caps must be positive")
        th = arrs["theta"][off]
        if np.any(th < 0) or np.any(th > 1):
            raise ValueError("elasticity steepness must lie in [0, 1]")

    @property
    def n_regions(self):
        return self.a.shape[0]

    @property
    def pairs(self):
        """Ordered pairs ``(i, j)``, ``i != j``, in row-major order."""
        n = self.n_regions
        return [(i, j) for i in range(n) for j in range(n) if i != j]

    def pair_values(self, mat):
        """Flatten the off-diagonal of an ``(n, n)`` array to pair order."""
        mat = np.asarray(mat)
        return mat[~np.eye(self.n_regions, dtype=bool)]

    def rebalancing_matrix(self):
        """Column-stochastic ``I - diag(sum_j a_ij) + a^T``."""
        return np.eye(self.n_regions) - np.diag(self.a.sum(axis=1)) + self.a.T

    def departure_matrix(self):
        n = self.n_regions
        M = np.zeros((n, n * (n - 1)))
        for k, (i, _) in enumerate(self.pairs):
            M[i, k] = 1.0
        return M

    def arrival_matrix(self):
        n = self.n_regions
        M = np.zeros((n, n * (n - 1)))
        for k, (_, j) in enumerate(self.pairs):
            M[j, k] = 1.0
        return M

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("a", "c", "p_max", "theta")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(d[k], dtype=float) for k in ("a", "c", "p_max", "theta")})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def complete(cls, n, rebalance=0.03, markup_cap=1.4, theta=1.0, rng=None):
        """Complete graph with routing cost growing with index distance."""
        idx = np.arange(n)
        dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
        c = 1.0 + 0.5 * dist
        if rng is not None:
            c = c * rng.uniform(0.9, 1.1, size=(n, n))
        np.fill_diagonal(c, 1.0)
        a = np.full((n, n), rebalance)
        np.fill_diagonal(a, 0.0)
        return cls(a=a, c=c, p_max=markup_cap * c, theta=np.full((n, n), theta))

    @classmethod
    def chain(cls, n, rebalance=0.05, markup_cap=1.4, theta=1.0):
        """Regions on a line; vehicles rebalance only to their neighbours."""
        idx = np.arange(n)
        dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
        c = 1.0 + 0.5 * dist
        np.fill_diagonal(c, 1.0)
        a = np.where(dist == 1, rebalance, 0.0)
        return cls(a=a, c=c, p_max=markup_cap * c, theta=np.full((n, n), theta))


def difference_matrix(n):
    """``(n-1, n)`` matrix with rows ``e_i - e_{i+1}``."""
    S = np.zeros((n - 1, n))
    S[np.arange(n - 1), np.arange(n - 1)] = 1.0
    S[np.arange(n - 1), np.arange(1, n)] = -1.0
    return S


def reduced_system(graph):
    """Difference-coordinate model of the idle-vehicle dynamics.

    State ``x~ = S x`` with ``S`` the difference matrix; input the accepted
    demand per pair with arrivals counted in the same slot (the steady-state
    view of delayed arrivals); disturbance ``(e, s)`` where ``e`` is the
    per-region disturbance and ``s`` the total idle mass, which the
    differences cannot see.  The output reconstructs the idle vector
    ``x = S^+ x~ + (s/n) 1``.

    Raises :class:`StabilityError` when the reduced matrix is not Schur
    (for instance when some regions never exchange vehicles).
    """
    n = graph.n_regions
    if n < 2:
        raise DimensionError("a", "need at least two regions")
    S = difference_matrix(n)
    Sp = np.linalg.pinv(S)
    Af = graph.rebalancing_matrix()
    A = S @ Af @ Sp
    rho = spectral_radius(A)
    if rho >= 1.0 - 1e-12:
        raise StabilityError(f"reduced rebalancing matrix has spectral radius {rho:.6g} >= 1")
    B = S @ (graph.arrival_matrix() - graph.departure_matrix())
    coupling = S @ Af @ np.ones(n) / n
    E = np.hstack([S, coupling[:, None]])
    C = Sp
    D = np.hstack([np.zeros((n, n)), np.full((n, 1), 1.0 / n)])
    return LtiSystem(A, B, C, D, E)


def full_system(graph):
    """Idle-vehicle model in region coordinates with same-slot arrivals.

    ``x+ = A_f x + (arrivals - departures) d + e``; marginally stable, so
    it is only used to cross-check :func:`reduced_system`.
    """
    n = graph.n_regions
    B = graph.arrival_matrix() - graph.departure_matrix()
    return LtiSystem(graph.rebalancing_matrix(), B, np.eye(n), np.zeros((n, n)), np.eye(n),
                     check_stability=False)


def full_to_reduced(x):
    """Map idle vectors (rows) to ``(differences, total mass)``."""
    x = np.atleast_2d(x)
    return x @ difference_matrix(x.shape[1]).T, x.sum(axis=1)


def idle_sensitivity(graph, mean_travel):
    """Steady-state ``d x / d d``: idle vector response to accepted demand.

    A sustained ride flow keeps ``mean_travel`` slots of it in transit,
    which lowers the total idle mass; the reduced model distributes the
    rest.
    """
    sysr = reduced_system(graph)
    G, H = transfer_closed_form(sysr)
    H_mass = H[:, -1]
    return G - mean_travel * np.outer(H_mass, np.ones(G.shape[1]))


@dataclass(frozen=True)
class DemandProfile:
    """Potential demand ``delta[k, pair]`` per slot and ordered pair."""

    delta: np.ndarray
    slot_minutes: float = 5.0

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=float)
        if d.ndim != 2:
            raise DimensionError("delta", f"expected (slots, pairs), got {d.shape}")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("potential demand must be finite and nonnegative")
        object.__setattr__(self, "delta", d)

    @property
    def horizon(self):
        return self.delta.shape[0]

    @classmethod
    def synthetic(cls, graph, seed=0, start_hour=6.0, end_hour=21.0, slot_minutes=5.0,
                  peaks=((8.0, 1.0), (17.5, 1.0)), width_hours=1.2, base=0.25,
                  noise=0.15, peak_total=1.5, pair_weights=None):
        """Two rush-hour bumps over a working day.

        ``peak_total`` is the largest noiseless total potential demand per
        slot, in fleet units.
        Pair weights are fixed by the graph size; ``seed`` only drives the
        multiplicative per-slot noise of half-width ``noise``.
        """
        K = int(round((end_hour - start_hour) * 60 / slot_minutes))
        hours = start_hour + np.arange(K) * slot_minutes / 60.0
        shape = np.full(K, base)
        for center, height in peaks:
            shape = shape + height * np.exp(-0.5 * ((hours - center) / width_hours) ** 2)
        n_pairs = len(graph.pairs)
        if pair_weights is None:
            pair_weights = np.random.default_rng(12345 + n_pairs).uniform(0.5, 1.5, n_pairs)
        pair_weights = np.asarray(pair_weights, float) / np.sum(pair_weights)
        delta = peak_total / shape.max() * np.outer(shape, pair_weights)
        if noise > 0:
            rng = np.random.default_rng(seed)
            delta = delta * rng.uniform(1 - noise, 1 + noise, size=delta.shape)
        return cls(delta=delta, slot_minutes=slot_minutes)

    @classmethod
    def from_csv(cls, path, graph):
        """Read ``slot,origin,dest,delta`` rows (regions 0-based)."""
        index = {pair: k for k, pair in enumerate(graph.pairs)}
        entries = []
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [h.strip() for h in rows[0]] != ["slot", "origin", "dest", "delta"]:
            raise SignalFormatError(f"{path}: line 1: header must be 'slot,origin,dest,delta'")
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            try:
                k, i, j, v = int(row[0]), int(row[1]), int(row[2]), float(row[3])
            except (ValueError, IndexError) as exc:
                raise SignalFormatError(f"{path}: line {lineno}: {exc}") from None
            if (i, j) not in index or k < 0 or v < 0:
                raise SignalFormatError(f"{path}: line {lineno}: invalid entry {row}")
            entries.append((k, index[(i, j)], v))
        if not entries:
            raise SignalFormatError(f"{path}: line 2: no demand rows")
        delta = np.zeros((max(e[0] for e in entries) + 1, len(index)))
        for k, col, v in entries:
            delta[k, col] = v
        return cls(delta=delta)

    def to_csv(self, path, graph):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["slot", "origin", "dest", "delta"])
            for k in range(self.horizon):
                for col, (i, j) in enumerate(graph.pairs):
                    wr.writerow([k, i, j, repr(float(self.delta[k, col]))])


def accepted_demand(delta, theta, p, p_max):
    """``delta (1 - theta p / p_max)``, clamped at zero."""
    delta, theta, p, p_max = (np.asarray(v, dtype=float) for v in (delta, theta, p, p_max))
    if np.any(p > p_max * (1 + 1e-12)) or np.any(p < -1e-12):
        raise ValueError("prices must lie in [0, p_max]")
    return np.maximum(delta * (1.0 - theta * p / p_max), 0.0)


@dataclass
class FleetState:
    """Idle vehicles per region plus vehicles on their way.

    ``pending[t, i]`` is the mass that rejoins region ``i`` ``t + 1``
    slots after the current one.
    """

    idle: np.ndarray
    pending: np.ndarray
    slot: int = 0
    shortfall: float = 0.0
    clipped: float = 0.0

    @classmethod
    def initial(cls, n, max_travel, idle=None):
        idle = np.full(n, 1.0 / n) if idle is None else np.asarray(idle, dtype=float)
        return cls(idle=idle.copy(), pending=np.zeros((max_travel, n)))

    @property
    def total_mass(self):
        return float(self.idle.sum() + self.pending.sum())

    def ledger(self):
        """In-transit entries ``(destination, arrival slot, volume)``."""
        t, i = np.nonzero(self.pending)
        return [(int(d), self.slot + 1 + int(s), float(self.pending[s, d])) for s, d in zip(t, i)]


def fleet_step(state, graph, demand, travel_times, e=None):
    """Advance the fleet by one slot.

    ``demand`` is the accepted demand per pair; it is served out of the
    vehicles that stay idle after rebalancing, proportionally when they do
    not suffice (the unserved part is added to ``shortfall``).  A trip
    with travel time ``tau`` leaves now and rejoins its destination
    ``tau + 1`` states later.  Returns ``(new_state, served)``.
    """
    n = graph.n_regions
    T = state.pending.shape[0]
    demand = np.asarray(demand, dtype=float)
    tt = np.asarray(travel_times)
    if np.any(tt < 1) or np.any(tt > T):
        raise ValueError(f"travel times must lie in 1..{T}")
    dep = graph.departure_matrix()
    arr_idx = np.array([j for (_, j) in graph.pairs])
    x = state.idle
    outflow = graph.a.sum(axis=1)
    available = np.maximum(x * (1.0 - outflow), 0.0)
    wanted = dep @ demand
    scale = np.where(wanted > available, available / np.maximum(wanted, 1e-300), 1.0)
    served = demand * (dep.T @ scale)
    shortfall = float(np.sum(demand - served))
    x_new = graph.rebalancing_matrix() @ x - dep @ served + state.pending[0]
    if e is not None:
        x_new = x_new + np.asarray(e, dtype=float)
    pending = np.zeros_like(state.pending)
    pending[:-1] = state.pending[1:]
    np.add.at(pending, (tt - 1, arr_idx), served)
    clipped = float(-np.sum(np.minimum(x_new, 0.0)))
    x_new = np.maximum(x_new, 0.0)
    new = FleetState(idle=x_new, pending=pending, slot=state.slot + 1,
                     shortfall=state.shortfall + shortfall, clipped=state.clipped + clipped)
    return new, served


class PricingCost(CostModel):
    """Negative profit plus an idle-vehicle penalty, for one slot.

    ``phi(p, x) = -sum (p - c) d(p) + rho ||x||^2`` with ``d`` affine in
    ``p``.  The demand ``delta`` may be swapped per slot with
    :meth:`at_demand`.
    """

    def __init__(self, graph, delta, rho, mu_floor=MU_FLOOR):
        if not rho > 0:
            raise ValueError("utilization weight rho must be positive")
        self.graph = graph
        self.rho = float(rho)
        self.c = graph.pair_values(graph.c)
        self.p_max = graph.pair_values(graph.p_max)
        self.theta = graph.pair_values(graph.theta)
        self.mu_floor = mu_floor
        self.diagnostics = []
        self.at_demand(delta)

    def at_demand(self, delta):
        self.delta = np.asarray(delta, dtype=float)
        self.slope = self.delta * self.theta / self.p_max         # -d d / d p
        curv = 2.0 * self.slope
        if np.any(curv <= 0):
            self.diagnostics.append(
                f"{int(np.sum(curv <= 0))} pairs without price sensitivity; "
                f"curvature floored at {self.mu_floor}")
        self.curvature = np.maximum(curv, self.mu_floor)
        self.mu = float(self.curvature.min())
        self.lip_grad_u = float(self.curvature.max())
        self.lip_grad_y = 2.0 * self.rho
        return self

    def demand(self, p):
        return np.maximum(self.delta - self.slope * p, 0.0)

    def value(self, p, y, k=0):
        reg = 0.5 * (self.curvature - 2.0 * self.slope) * p * p
        return float(-np.sum((p - self.c) * (self.delta - self.slope * p)) + np.sum(reg)
                     + self.rho * np.dot(y, y))

    def grad_u(self, p, y, k=0):
        return -self.delta + self.slope * (2.0 * p - self.c) + (self.curvature - 2.0 * self.slope) * p

    def grad_y(self, p, y, k=0):
        return 2.0 * self.rho * np.asarray(y, dtype=float)

    def lipschitz_y(self, y_box=None):
        # idle vector lies in the simplex scaled by the fleet
        return 2.0 * self.rho


def build_pricing_cost(graph, delta, rho):
    """Cost model and price box ``[0, p_max]`` for one slot."""
    cost = PricingCost(graph, delta, rho)
    box = ConvexSet.box(np.zeros_like(cost.p_max), cost.p_max)
    return cost, box


@dataclass(frozen=True)
class PricingPolicy:
    kind: str                      # "adaptive" or "fixed"
    markup: float = 0.25
    eta: float = None
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in ("adaptive", "fixed"):
            raise ValueError(f"unknown pricing policy {self.kind!r}")


@dataclass(frozen=True)
class RideScenario:
    graph: RegionGraph
    max_travel: int = 3
    rho: float = 0.05
    markup: float = 0.25
    eta: float = None
    demand_noise: float = 0.15
    peak_total: float = 1.5            # fixed-markup policy just serves the peak
    disturbance: float = 0.0           # half-width of the uniform e_k per region
    horizon: int = None
    demand: DemandProfile = None       # fixed profile; synthetic per seed otherwise

    def demand_for_seed(self, seed):
        if self.demand is not None:
            return self.demand
        return DemandProfile.synthetic(self.graph, seed=seed, noise=self.demand_noise,
                                       peak_total=self.peak_total)


@dataclass
class PolicySeries:
    accepted: np.ndarray
    profit: np.ndarray
    mean_price: np.ndarray
    utilization: np.ndarray
    max_mass_drift: float = 0.0
    shortfall: float = 0.0
    prices: np.ndarray = field(default=None, repr=False)


def simulate_policy(scenario, policy, seed, G_idle=None):
    """One seeded day under a pricing policy."""
    graph = scenario.graph
    n = graph.n_regions
    prof = scenario.demand_for_seed(seed)
    K = prof.horizon if scenario.horizon is None else min(scenario.horizon, prof.horizon)
    cost, box = build_pricing_cost(graph, prof.delta[0], policy.rho)
    if G_idle is None:
        G_idle = idle_sensitivity(graph, (scenario.max_travel + 1) / 2.0)
    rng = np.random.default_rng(seed)
    state = FleetState.initial(n, scenario.max_travel)
    fixed = box.project((1.0 + policy.markup) * cost.c)
    p = fixed.copy()
    out = {k: np.zeros(K) for k in ("accepted", "profit", "mean_price", "utilization")}
    prices = np.zeros((K, len(cost.c)))
    mass0 = state.total_mass
    drift = 0.0
    for k in range(K):
        cost.at_demand(prof.delta[k])
        if policy.kind == "adaptive":
            eta = policy.eta if policy.eta is not None else 0.5 / cost.lip_grad_u
            G_hat = -G_idle * cost.slope[None, :]
            p = box.project(p - eta * (cost.grad_u(p, state.idle) + G_hat.T @ cost.grad_y(p, state.idle)))
        else:
            p = fixed
        d = accepted_demand(prof.delta[k], cost.theta, p, cost.p_max)
        tt = rng.integers(1, scenario.max_travel + 1, size=len(d))
        e = None
        if scenario.disturbance > 0:
            e = rng.uniform(-scenario.disturbance, scenario.disturbance, n)
        state, served = fleet_step(state, graph, d, tt, e)
        if e is None:
            drift = max(drift, abs(state.total_mass - mass0))
        prices[k] = p
        out["accepted"][k] = served.sum()
        out["profit"][k] = float(np.sum((p - cost.c) * served))
        out["mean_price"][k] = float(np.mean(p / cost.p_max))
        out["utilization"][k] = 1.0 - state.idle.sum()
    return PolicySeries(**out, max_mass_drift=drift, shortfall=state.shortfall, prices=prices)


def run_policy_comparison(scenario, seeds):
    """Seed-averaged per-slot series for the adaptive and fixed policies."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    G_idle = idle_sensitivity(scenario.graph, (scenario.max_travel + 1) / 2.0)
    policies = {
        "adaptive": PricingPolicy("adaptive", eta=scenario.eta, rho=scenario.rho),
        "fixed": PricingPolicy("fixed", markup=scenario.markup, rho=scenario.rho),
    }
    result = {}
    for name, pol in policies.items():
        acc = None
        drift = 0.0
        for s in seeds:
            ser = simulate_policy(scenario, pol, s, G_idle)
            drift = max(drift, ser.max_mass_drift)
            vals = np.vstack([ser.accepted, ser.profit, ser.mean_price, ser.utilization])
            acc = vals if acc is None else acc + vals
        acc = acc / len(seeds)
        result[name] = PolicySeries(accepted=acc[0], profit=acc[1], mean_price=acc[2],
                                    utilization=acc[3], max_mass_drift=drift)
    return result


def write_comparison_csv(path, result):
    """``slot,policy,accepted,profit,mean_price,utilization`` rows."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["slot", "policy", "accepted", "profit", "mean_price", "utilization"])
        for name in ("adaptive", "fixed"):
            s = result[name]
            for k in range(len(s.accepted)):
                wr.writerow([k, name, repr(float(s.accepted[k])), repr(float(s.profit[k])),
                             repr(float(s.mean_price[k])), repr(float(s.utilization[k]))])
