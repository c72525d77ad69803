import json

import numpy as np
import pytest

from ddfeedback.errors import SignalFormatError, StabilityError
from ddfeedback.lti_core import simulate, spectral_radius
from ddfeedback.rideshare import (DemandProfile, FleetState, PricingPolicy, RegionGraph,
                                  RideScenario, accepted_demand, build_pricing_cost, difference_matrix,
                                  fleet_step, full_system, full_to_reduced, reduced_system,
                                  run_policy_comparison, simulate_policy, write_comparison_csv)


def two_regions(a=0.1, markup_cap=1.4, c=1.0):
    off = np.array([[0.0, 1.0], [1.0, 0.0]])
    cm = np.where(off > 0, c, 1.0)
    return RegionGraph(a=a * off, c=cm, p_max=markup_cap * cm, theta=np.ones((2, 2)))


class TestAcceptedDemand:
    def test_cap(self):
        assert accepted_demand(3.0, 1.0, 2.0, 2.0) == 0.0

    def test_inelastic(self):
        assert accepted_demand(3.0, 0.0, 1.7, 2.0) == 3.0

    def test_arithmetic(self):
        assert accepted_demand(2.0, 0.5, 1.0, 2.0) == pytest.approx(1.5)

    def test_rejects_above_cap(self):
        with pytest.raises(ValueError):
            accepted_demand(1.0, 1.0, 2.5, 2.0)

    def test_bounds(self, rng):
        delta = rng.uniform(0, 2, 50)
        p_max = rng.uniform(0.5, 3, 50)
        d = accepted_demand(delta, rng.uniform(0, 1, 50), rng.uniform(0, 1, 50) * p_max, p_max)
        assert np.all(d >= 0) and np.all(d <= delta)


class TestRegionGraph:
    def test_validation(self):
        g = two_regions()
        with pytest.raises(ValueError):
            RegionGraph(a=np.eye(2) * 0.1, c=g.c, p_max=g.p_max, theta=g.theta)
        with pytest.raises(ValueError):
            RegionGraph(a=g.a * 20, c=g.c, p_max=g.p_max, theta=g.theta)
        with pytest.raises(ValueError):
            RegionGraph(a=g.a, c=g.c, p_max=g.p_max, theta=g.theta * 2)

    def test_json_roundtrip(self):
        g = RegionGraph.complete(3)
        back = RegionGraph.from_json(json.dumps(g.to_dict()))
        np.testing.assert_array_equal(back.c, g.c)

    def test_rebalancing_conserves_mass(self):
        g = RegionGraph.complete(5, rebalance=0.07)
        np.testing.assert_allclose(g.rebalancing_matrix().sum(axis=0), 1.0)


class TestFleetStep:
    def test_idle_fleet_unchanged(self):
        g = two_regions(a=0.0)
        s = FleetState.initial(2, 3, idle=[0.3, 0.7])
        new, served = fleet_step(s, g, np.zeros(2), np.ones(2, dtype=int))
        np.testing.assert_array_equal(new.idle, s.idle)
        assert np.all(served == 0)

    def test_conservation(self, rng):
        g = RegionGraph.complete(4, rebalance=0.05)
        s = FleetState.initial(4, 3)
        m0 = s.total_mass
        for _ in range(200):
            d = rng.uniform(0, 0.05, len(g.pairs))
            s, _ = fleet_step(s, g, d, rng.integers(1, 4, len(g.pairs)))
            assert abs(s.total_mass - m0) <= 1e-12
        assert s.clipped == 0.0

    def test_two_slot_trip(self):
        g = two_regions(a=0.0)
        s = FleetState.initial(2, 2, idle=[0.5, 0.5])
        s, served = fleet_step(s, g, [0.2, 0.0], np.array([2, 1]))
        np.testing.assert_allclose(s.idle, [0.3, 0.5])
        assert s.ledger() == [(1, 3, pytest.approx(0.2))]
        s, _ = fleet_step(s, g, [0.0, 0.0], np.array([1, 1]))
        np.testing.assert_allclose(s.idle, [0.3, 0.5])
        s, _ = fleet_step(s, g, [0.0, 0.0], np.array([1, 1]))
        np.testing.assert_allclose(s.idle, [0.3, 0.7])
        assert s.slot == 3 and s.ledger() == []

    def test_proportional_rationing(self):
        g = RegionGraph.complete(3, rebalance=0.0)
        s = FleetState.initial(3, 1, idle=[0.2, 0.4, 0.4])
        d = np.array([0.3, 0.1, 0.0, 0.0, 0.0, 0.0])
        s, served = fleet_step(s, g, d, np.ones(6, dtype=int))
        np.testing.assert_allclose(served[:2], [0.15, 0.05])
        assert s.shortfall == pytest.approx(0.2)
        assert s.idle[0] == pytest.approx(0.0)

    def test_disturbance_clipping(self):
        g = two_regions(a=0.0)
        s = FleetState.initial(2, 1, idle=[0.1, 0.9])
        s, _ = fleet_step(s, g, np.zeros(2), np.ones(2, dtype=int), e=[-0.3, 0.0])
        assert s.idle[0] == 0.0 and s.clipped == pytest.approx(0.2)

    def test_travel_time_range(self):
        g = two_regions()
        with pytest.raises(ValueError):
            fleet_step(FleetState.initial(2, 2), g, np.zeros(2), np.array([3, 1]))


class TestReducedSystem:
    @pytest.mark.parametrize("a", [0.05, 0.2, 0.45])
    def test_two_region_scalar(self, a):
        assert reduced_system(two_regions(a)).A[0, 0] == pytest.approx(1 - 2 * a)

    def test_no_mixing_rejected(self):
        with pytest.raises(StabilityError):
            reduced_system(two_regions(0.0))

    def test_eighteen_region_chain(self):
        sysr = reduced_system(RegionGraph.chain(18))
        assert sysr.n == 17 and spectral_radius(sysr.A) < 1

    def test_equivalence_with_full_model(self, rng):
        g = RegionGraph.complete(4, rebalance=0.06, rng=rng)
        full, red = full_system(g), reduced_system(g)
        K = 60
        d = rng.uniform(0, 0.01, size=(K, len(g.pairs)))
        e = rng.normal(scale=0.01, size=(K, 4))
        x0 = rng.dirichlet(np.ones(4))
        tr_full = simulate(full, x0, d, e, K)
        diffs, mass = full_to_reduced(tr_full.x)
        w_red = np.hstack([e, mass[:-1, None]])
        tr_red = simulate(red, diffs[0], d, w_red, K)
        np.testing.assert_allclose(tr_red.x, diffs, atol=1e-10)
        np.testing.assert_allclose(tr_red.y, tr_full.x[:-1], atol=1e-10)

    def test_difference_matrix(self):
        np.testing.assert_array_equal(difference_matrix(3), [[1, -1, 0], [0, 1, -1]])


class TestPricingCost:
    def test_single_pair_optimum(self):
        base = two_regions()
        g = RegionGraph(a=base.a, c=np.full((2, 2), 1e-9), p_max=np.full((2, 2), 2.0), theta=base.theta)
        cost, box = build_pricing_cost(g, [1.0, 1.0], rho=1e-12)
        grid = np.linspace(0, cost.p_max[0], 20001)
        profit = grid * (1 - grid / cost.p_max[0])
        p_grid = grid[np.argmax(profit)]
        # stationary point of the cost with y = 0
        p = cost.delta / cost.slope / 2 + cost.c / 2
        np.testing.assert_allclose(cost.grad_u(p, np.zeros(2)), 0, atol=1e-12)
        assert p[0] == pytest.approx(1.0)
        assert abs(p_grid - p[0]) <= grid[1]

    def test_cost_at_cap(self):
        g = two_regions(markup_cap=1.0)
        cost, box = build_pricing_cost(g, [1.0, 1.0], rho=1e-6)
        grid = np.linspace(0, 1, 101)
        profits = [-cost.value(np.full(2, p), np.zeros(2)) for p in grid]
        assert max(profits) <= 1e-12 and np.argmax(profits) == len(grid) - 1
        p = np.zeros(2)
        for _ in range(500):
            p = box.project(p - 0.2 * cost.grad_u(p, np.zeros(2)))
        np.testing.assert_allclose(p, cost.p_max, atol=1e-8)

    def test_gradient_finite_difference(self, rng):
        g = RegionGraph.complete(3)
        cost, _ = build_pricing_cost(g, rng.uniform(0.1, 1, 6), rho=0.3)
        p, y = rng.uniform(0, 1, 6), rng.uniform(0, 1, 3)
        h = 1e-6
        fd = [(cost.value(p + h * e, y) - cost.value(p - h * e, y)) / (2 * h) for e in np.eye(6)]
        np.testing.assert_allclose(cost.grad_u(p, y), fd, rtol=1e-6, atol=1e-8)
        fd_y = [(cost.value(p, y + h * e) - cost.value(p, y - h * e)) / (2 * h) for e in np.eye(3)]
        np.testing.assert_allclose(cost.grad_y(p, y), fd_y, rtol=1e-6, atol=1e-8)

    def test_zero_demand_floor(self):
        cost, _ = build_pricing_cost(two_regions(), [0.0, 1.0], rho=1.0)
        assert cost.mu == pytest.approx(1e-6) and cost.diagnostics

    def test_rho_positive(self):
        with pytest.raises(ValueError):
            build_pricing_cost(two_regions(), [1.0, 1.0], rho=0.0)


def constant_demand(graph, level, K=120):
    return DemandProfile(np.full((K, len(graph.pairs)), level))


class TestPolicies:
    def test_larger_rho_lowers_prices(self):
        g = two_regions(a=0.1)
        prof = constant_demand(g, 0.2)
        prices = []
        for rho in (0.5, 5.0):
            sc = RideScenario(g, rho=rho, demand=prof)
            ser = simulate_policy(sc, PricingPolicy("adaptive", rho=rho), seed=0)
            prices.append(ser.mean_price[-20:].mean())
        assert prices[1] < prices[0]

    def test_zero_demand(self):
        g = RegionGraph.complete(3)
        sc = RideScenario(g, demand=constant_demand(g, 0.0, K=30))
        res = run_policy_comparison(sc, [0, 1])
        assert np.all(res["adaptive"].profit == 0) and np.all(res["fixed"].profit == 0)

    def test_fixed_price_beyond_cap(self):
        g = RegionGraph.complete(3, markup_cap=1.2)
        sc = RideScenario(g, markup=0.25, demand=constant_demand(g, 0.05, K=60))
        res = run_policy_comparison(sc, [0])
        assert np.all(res["fixed"].accepted == 0) and np.all(res["fixed"].profit == 0)
        assert res["adaptive"].profit.sum() > 0

    def test_prices_in_box_and_mass_conserved(self):
        g = RegionGraph.complete(4)
        sc = RideScenario(g)
        ser = simulate_policy(sc, PricingPolicy("adaptive", rho=sc.rho), seed=3)
        p_max = g.pair_values(g.p_max)
        assert np.all(ser.prices >= 0) and np.all(ser.prices <= p_max)
        assert ser.max_mass_drift <= 1e-12

    def test_comparison_csv(self, tmp_path):
        g = RegionGraph.complete(3)
        res = run_policy_comparison(RideScenario(g, horizon=10), [0])
        path = tmp_path / "r.csv"
        write_comparison_csv(path, res)
        lines = path.read_text().splitlines()
        assert lines[0] == "slot,policy,accepted,profit,mean_price,utilization"
        assert len(lines) == 21 and lines[11].startswith("0,fixed,")

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            PricingPolicy("surge")


class TestDemandProfile:
    def test_synthetic_shape(self):
        g = RegionGraph.complete(4)
        prof = DemandProfile.synthetic(g, seed=1, noise=0.0)
        assert prof.horizon == 180
        total = prof.delta.sum(axis=1)
        assert total.max() == pytest.approx(1.5)
        hours = 6 + np.arange(180) / 12
        morning, evening = hours < 12, hours >= 12
        assert abs(hours[morning][np.argmax(total[morning])] - 8.0) < 0.1
        assert abs(hours[evening][np.argmax(total[evening])] - 17.5) < 0.1

    def test_seed_changes_noise_only(self):
        g = RegionGraph.complete(3)
        a = DemandProfile.synthetic(g, seed=1).delta
        b = DemandProfile.synthetic(g, seed=2).delta
        assert not np.allclose(a, b)
        np.testing.assert_array_equal(a, DemandProfile.synthetic(g, seed=1).delta)

    def test_csv_roundtrip(self, tmp_path):
        g = RegionGraph.complete(3)
        prof = DemandProfile.synthetic(g, seed=4)
        path = tmp_path / "d.csv"
        prof.to_csv(path, g)
        np.testing.assert_array_equal(DemandProfile.from_csv(path, g).delta, prof.delta)

    def test_csv_errors(self, tmp_path):
        g = RegionGraph.complete(3)
        path = tmp_path / "d.csv"
        path.write_text("slot,origin,dest,delta\n0,0,1,0.5\n1,0,0,0.2\n")
        with pytest.raises(SignalFormatError, match="line 3"):
            DemandProfile.from_csv(path, g)
        path.write_text("k,i,j,v\n")
        with pytest.raises(SignalFormatError, match="line 1"):
            DemandProfile.from_csv(path, g)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            DemandProfile(-np.ones((2, 2)))
