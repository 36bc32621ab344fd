import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from margin_active.budget import BudgetMeter
from margin_active.dist import (ConstantSpec, LinearSpec, LowerBoundParams, LowerBoundSpec, Oracle, Region,
                                RegionSpec, ZSigmaAssignment, check_holder, check_rmc, check_strong_density,
                                check_theta_beta, check_tmc, lb_density, lb_eta, query, sample_zsigma,
                                sharp_margin, sharp_margin_of, soft_margin, soft_margin_of, spec_from_config,
                                theta_beta_probability_bound)
from margin_active.dist.construction import bump_profile
from margin_active.dyadic import DyadicPartition, barycenters
from margin_active.errors import BudgetError, ConfigError, DomainError, UnsupportedSpecError

TAUS = [0.01, 0.02, 0.05, 0.1, 0.2, 0.4]


def lb_spec(level=2, z=1, sigma=-1, d=1, alpha=1.0, lam=1.0, beta=1.0):
    params = LowerBoundParams.at_level(level, alpha=alpha, lam=lam, beta=beta, d=d)
    return LowerBoundSpec(params, ZSigmaAssignment.constant(params, z, sigma))


prob_vectors = st.lists(st.integers(0, 20), min_size=2, max_size=6).filter(lambda v: sum(v) > 0).map(
    lambda v: np.asarray(v, dtype=float) / sum(v))


class TestMargins:
    def test_soft_top_two_tied(self):
        assert soft_margin_of([0.5, 0.5, 0.1]) == pytest.approx(0.4)

    def test_soft_all_tied_is_infinite(self):
        assert soft_margin_of([1 / 3, 1 / 3, 1 / 3]) == math.inf

    def test_soft_binary(self):
        assert soft_margin_of([0.7, 0.3]) == pytest.approx(0.4)

    def test_sharp_top_two_tied(self):
        assert sharp_margin_of([0.5, 0.5, 0.1]) == 0

    def test_sharp_separated(self):
        assert sharp_margin_of([0.6, 0.3, 0.1]) == pytest.approx(0.3)

    @given(prob_vectors)
    def test_sharp_below_soft(self, eta):
        soft, sharp = soft_margin_of(eta), sharp_margin_of(eta)
        assert sharp <= soft
        top = np.sort(eta)[::-1]
        if top[0] > top[1]:
            assert sharp == soft

    def test_spec_level_margins(self):
        spec = RegionSpec.figure1()
        assert soft_margin(spec, [0.5]) == pytest.approx(0.35)
        assert sharp_margin(spec, [0.5]) == 0
        assert soft_margin(spec, [0.1]) == math.inf


class TestLowerBoundDensity:
    def test_barycenter_density_two_dim(self):
        params = LowerBoundParams.at_level(2, d=2)
        centers = barycenters(DyadicPartition(2, 2).coords(), 2)
        assert np.all(lb_density(params, centers) == 16.0)

    def test_density_vanishes_at_radius(self):
        params = LowerBoundParams.at_level(2)
        x = 0.125 + params.r / 8
        assert lb_density(params, [x]) == 0.0
        assert lb_density(params, [np.nextafter(x, 0)]) == 4.0

    @pytest.mark.parametrize("k,d", [(1, 1), (3, 1), (2, 2)])
    def test_total_mass_is_one(self, k, d):
        params = LowerBoundParams.at_level(k, d=d)
        spec = LowerBoundSpec(params, ZSigmaAssignment.constant(params, 1, 1))
        # cells x bump volume x height
        assert 2 ** (k * d) * (params.r / 4) ** d * 4 ** d == pytest.approx(1.0)
        assert spec.cell_masses(k).sum() == pytest.approx(1.0)
        assert spec.cell_masses(k + 2).sum() == pytest.approx(1.0)

    def test_mass_by_quadrature(self):
        params = LowerBoundParams.at_level(2)
        pts = sorted({0.0, 1.0} | {c + s * params.r / 8 for c in (0.125, 0.375, 0.625, 0.875) for s in (-1, 1)})
        total = sum(integrate.quad(lambda t: lb_density(params, [t]), a, b)[0] for a, b in zip(pts, pts[1:]))
        assert total == pytest.approx(1.0, abs=1e-9)


class TestLowerBoundEta:
    def test_peak_value(self):
        params = LowerBoundParams.at_level(3, lam=2.0)
        zs = ZSigmaAssignment.constant(params, 1, 1)
        assert lb_eta(params, zs, [barycenters(np.array([[5]]), 3)[0, 0]]) == pytest.approx(0.5 + 0.25 * 0.125)

    def test_vanishes_at_quarter_radius(self):
        params = LowerBoundParams.at_level(2)
        zs = ZSigmaAssignment.constant(params, 1, 1)
        assert lb_eta(params, zs, [0.125 + params.r / 4]) == pytest.approx(0.5)

    def test_profile_at_support_edge(self):
        params = LowerBoundParams.at_level(2, alpha=0.5)
        assert bump_profile(params, params.r / 8) == pytest.approx(params.r ** 0.5)

    @given(st.integers(1, 4), st.floats(0.2, 1.0), st.floats(0.5, 3.0), st.integers(0, 2 ** 16))
    @settings(max_examples=25, deadline=None)
    def test_constant_on_support(self, k, alpha, lam, seed):
        params = LowerBoundParams.at_level(k, alpha=alpha, lam=lam)
        rng = np.random.default_rng(seed)
        spec = LowerBoundSpec(params, sample_zsigma(params, rng))
        X = spec.sample_x(500, rng)
        p1 = spec.eta(X)[:, 1]
        allowed = np.array([0.5, 0.5 + params.bump, 0.5 - params.bump])
        assert np.all(np.min(np.abs(p1[:, None] - allowed), axis=1) < 1e-12)
        idx = DyadicPartition(k, 1).locate(X)
        expect = 0.5 + params.bump * spec.zs.z[idx] * spec.zs.sigma[idx]
        np.testing.assert_allclose(p1, expect)

    @pytest.mark.parametrize("seed", range(3))
    def test_holder_for_random_coins(self, seed):
        params = LowerBoundParams.at_level(3, alpha=0.7, lam=1.5)
        rng = np.random.default_rng(seed)
        spec = LowerBoundSpec(params, sample_zsigma(params, rng))
        rep = check_holder(spec, 1.5, 0.7, 600, rng)
        assert rep.passed and rep.grid_size >= 1000


class TestCoins:
    def test_z_probability_half(self):
        assert LowerBoundParams.at_level(1).z_prob == 0.5

    def test_z_probability_sixteenth(self):
        assert LowerBoundParams.at_level(2, beta=2.0, d=2).z_prob == pytest.approx(1 / 16)

    def test_beta_above_dimension_rejected(self):
        with pytest.raises(DomainError):
            LowerBoundParams.at_level(2, beta=2.0, d=1)

    def test_empirical_z_mean(self):
        params = LowerBoundParams.at_level(5, beta=1.0)
        rng = np.random.default_rng(0)
        z = np.concatenate([sample_zsigma(params, rng).z for _ in range(400)])
        p = params.z_prob
        assert abs(z.mean() - p) <= 3 * math.sqrt(p * (1 - p) / z.size)

    def test_signs_balanced_and_independent(self):
        params = LowerBoundParams.at_level(6)
        rng = np.random.default_rng(1)
        draws = [sample_zsigma(params, rng) for _ in range(200)]
        z = np.concatenate([d.z for d in draws])
        s = np.concatenate([d.sigma for d in draws])
        table = np.array([[np.sum((z == a) & (s == b)) for b in (-1, 1)] for a in (0, 1)])
        assert stats.chi2_contingency(table).pvalue > 0.001
        assert abs((s == 1).mean() - 0.5) < 3 * 0.5 / math.sqrt(s.size)

    def test_theta_beta_all_zero(self):
        params = LowerBoundParams.at_level(3)
        assert check_theta_beta(ZSigmaAssignment.constant(params, 0, 1), params, 0.5)

    def test_theta_beta_all_one(self):
        params = LowerBoundParams.at_level(3)
        assert not check_theta_beta(ZSigmaAssignment.constant(params, 1, 1), params, 0.9)

    def test_theta_beta_frequency_above_bound(self):
        params = LowerBoundParams.at_level(6, beta=0.5)
        rng = np.random.default_rng(2)
        hits = np.mean([check_theta_beta(sample_zsigma(params, rng), params, 2.0) for _ in range(2000)])
        bound = theta_beta_probability_bound(params, 2.0)
        assert hits >= bound - 3 * math.sqrt(bound * (1 - bound) / 2000 + 1e-12)


class TestParams:
    def test_resolution_rounds_down(self):
        p = LowerBoundParams(n=4096)
        assert p.raw_r == pytest.approx((64 / 4096) ** (1 / 3))
        assert p.r <= p.raw_r < 2 * p.r
        assert p.c1 == 64 and p.c_eta == 0.125

    @given(st.integers(1, 10 ** 9), st.floats(0.1, 1.0), st.floats(0.1, 5.0))
    def test_dyadic(self, n, alpha, lam):
        p = LowerBoundParams(n=n, alpha=alpha, lam=lam)
        assert p.r == 2.0 ** -p.k and p.r <= max(p.raw_r, 1.0) * (1 + 1e-9)


class TestQuery:
    def test_deterministic_label(self):
        spec = ConstantSpec(1, (1.0, 0.0))
        y = query(spec, np.random.default_rng(0).random((500, 1)), np.random.default_rng(1))
        assert np.all(y == 0)

    def test_fair_coin(self):
        spec = ConstantSpec(1, (0.5, 0.5))
        y = query(spec, np.full((10_000, 1), 0.3), np.random.default_rng(2))
        assert abs((y == 0).mean() - 0.5) <= 3 * 0.5 / 100

    def test_outside_support(self):
        spec = lb_spec()
        with pytest.raises(DomainError):
            query(spec, [0.0], np.random.default_rng(0))

    def test_budget_charged_and_enforced(self):
        meter = BudgetMeter(3)
        spec = LinearSpec()
        query(spec, [[0.1], [0.2]], np.random.default_rng(0), meter)
        assert meter.used == 2
        query(spec, [0.4], np.random.default_rng(0), meter)
        with pytest.raises(BudgetError):
            query(spec, [0.4], np.random.default_rng(0), meter)
        assert meter.used == 3

    def test_query_bernoulli_law(self):
        # labels inside one bumped cell are i.i.d. Bernoulli with the bump mean
        spec = lb_spec(level=2, z=1, sigma=1)
        p = 0.5 + spec.params.bump
        rng = np.random.default_rng(3)
        X, _, _ = spec.sample_in_cells(np.array([[1]]), 2, 10_000, rng)
        y = query(spec, X, rng)
        ones = int(y.sum())
        assert stats.chisquare([ones, y.size - ones], [p * y.size, (1 - p) * y.size]).pvalue > 0.01
        pairs = y[:-1:2] * 2 + y[1::2]
        expect = np.array([(1 - p) ** 2, (1 - p) * p, p * (1 - p), p * p]) * pairs.size
        assert stats.chisquare(np.bincount(pairs, minlength=4), expect).pvalue > 0.01


class TestSampling:
    def test_rejection_sampling_respects_support(self):
        spec = RegionSpec.figure1()
        rng = np.random.default_rng(0)
        coords = DyadicPartition(3, 1).coords()
        X, owner, empty = spec.sample_in_cells(coords, 3, 50, rng)
        assert np.all(spec.support_test(X))
        assert np.array_equal(DyadicPartition(3, 1).locate(X), owner)
        # cells [0.25, 0.375) and [0.625, 0.75) lie in the gaps
        assert empty.tolist() == [False, False, True, False, False, True, False, False]
        assert np.all(np.bincount(owner, minlength=8)[~empty] == 50)

    def test_lower_bound_exact_sampler(self):
        spec = lb_spec(level=2)
        rng = np.random.default_rng(1)
        X, owner, empty = spec.sample_in_cells(DyadicPartition(4, 1).coords(), 4, 20, rng)
        assert np.all(spec.support_test(X))
        # each bump of radius r/8 = 1/32 sits inside two level-4 cells
        assert (~empty).sum() == 8

    def test_sample_x_in_support(self):
        for spec in (RegionSpec.figure1(dim=2), lb_spec(level=3, d=2), LinearSpec(dim=2, axis=1)):
            X = spec.sample_x(1000, np.random.default_rng(5))
            assert np.all(spec.support_test(X))

    def test_oracle_counts(self):
        spec = ConstantSpec(2, (0.2, 0.3, 0.5))
        oracle = Oracle(spec, np.random.default_rng(0), limit=400)
        counts, empty = oracle.query_cells(DyadicPartition(1, 2).coords(), 1, 100)
        assert counts.sum() == 400 and oracle.used == 400 and not empty.any()
        assert np.all(counts.sum(axis=1) == 100)


class TestFamilies:
    def test_linear_excess_by_quadrature(self):
        spec = LinearSpec(slope=1.7, offset=0.41)
        table = spec.cell_excess(3)
        for i in range(8):
            for y in range(2):
                def gap(t):
                    e = spec.eta([t])[0]
                    return e.max() - e[y]
                lo, hi = i / 8, (i + 1) / 8
                brk = [lo, hi] + [b for b in (0.41, 0.41 - 0.5 / 1.7, 0.41 + 0.5 / 1.7) if lo < b < hi]
                brk.sort()
                val = sum(integrate.quad(gap, a, b)[0] for a, b in zip(brk, brk[1:]))
                assert table[i, y] == pytest.approx(val, abs=1e-12)

    def test_region_masses(self):
        spec = RegionSpec.figure1()
        np.testing.assert_allclose(spec.cell_masses(2), [1 / 3, 1 / 6, 1 / 6, 1 / 3])
        assert spec.non_unique_mass() == pytest.approx(2 / 3)

    def test_region_eta_interpolates_gaps(self):
        spec = RegionSpec.figure1()
        np.testing.assert_allclose(spec.eta([0.3125])[0], (np.array([1 / 3] * 3) + [0.45, 0.45, 0.1]) / 2)

    def test_constant_excess(self):
        spec = ConstantSpec(2, (0.3, 0.7))
        np.testing.assert_allclose(spec.cell_excess(1), [[0.1, 0.0]] * 4)

    def test_lower_bound_excess(self):
        spec = lb_spec(level=2, z=1, sigma=-1)
        assert spec.cell_excess(2)[:, 1].sum() == pytest.approx(0.0625)
        assert spec.cell_excess(0)[0, 1] == pytest.approx(0.0625)

    def test_zero_coins_no_excess(self):
        spec = lb_spec(level=3, z=0)
        assert np.all(spec.cell_excess(5) == 0)

    def test_eta_rows_are_distributions(self):
        rng = np.random.default_rng(0)
        for spec in (LinearSpec(slope=3.0), RegionSpec.figure1(), lb_spec(level=3)):
            E = spec.eta(spec.sample_x(200, rng))
            assert np.all(E >= 0) and np.allclose(E.sum(axis=1), 1)

    def test_invalid_families(self):
        with pytest.raises(DomainError):
            ConstantSpec(1, (0.5, 0.6))
        with pytest.raises(DomainError):
            RegionSpec(1, (Region(0.5, 0.4, 1.0, (0.5, 0.5)),))


class TestHolderCheck:
    def test_constant_passes(self):
        rep = check_holder(ConstantSpec(1, (0.2, 0.8)), 0.01, 0.5, 200, np.random.default_rng(0))
        assert rep.passed

    def test_lower_bound_passes(self):
        spec = lb_spec(level=3)
        rep = check_holder(spec, 1.0, 1.0, 500, np.random.default_rng(1))
        assert rep.passed
        assert rep.measured_constant == pytest.approx(1.0, abs=0.05)

    def test_understated_constant_fails(self):
        spec = LinearSpec(slope=1.0, offset=0.0)
        rep = check_holder(spec, 0.5, 1.0, 200, np.random.default_rng(2))
        assert not rep.passed
        w = rep.witness
        assert abs(spec.eta([w["x"]])[0] - spec.eta([w["x_prime"]])[0]).max() > 0.5 * abs(w["x"] - w["x_prime"]).max()


class TestTMC:
    def test_all_tied_passes(self):
        rep = check_tmc(ConstantSpec(1, (1 / 3,) * 3), 5.0, 0.01, TAUS, 2000, np.random.default_rng(0))
        assert rep.passed and max(rep.details["estimate"]) == 0

    def test_lower_bound_margin_mass(self):
        spec = LowerBoundSpec(LowerBoundParams.at_level(4), ZSigmaAssignment(
            4, np.array([1, 0] * 8, dtype=np.int8), np.ones(16, dtype=np.int8)))
        two_c = 2 * spec.params.bump
        rep = check_tmc(spec, 1.0, 100.0, [two_c / 2, two_c], 20_000, np.random.default_rng(1))
        est = rep.details["estimate"]
        assert est[0] == 0.0
        assert est[1] <= spec.params.r * 8 + 3 * math.sqrt(0.25 / 20_000)

    def test_linear_crossing_exponent(self):
        spec = LinearSpec(slope=0.5, offset=0.0)
        rep = check_tmc(spec, 1.0, 1.0, TAUS, 200_000, np.random.default_rng(2))
        assert rep.passed
        assert rep.details["measured_exponent"] == pytest.approx(1.0, abs=0.1)

    def test_understated_constant_fails(self):
        rep = check_tmc(LinearSpec(), 1.0, 0.5, TAUS, 50_000, np.random.default_rng(3))
        assert not rep.passed and rep.witness is not None


class TestRMC:
    def test_figure1_eps_is_tied_mass(self):
        spec = RegionSpec.figure1()
        rep = check_rmc(spec, 2 / 3, 1.0, 1.0, 2.0, TAUS, 100_000, np.random.default_rng(0))
        assert rep.passed
        assert rep.measured_constant == pytest.approx(spec.non_unique_mass(), abs=3 * rep.details["eps_se"])

    def test_unique_bayes_with_zero_eps(self):
        rep = check_rmc(LinearSpec(), 0.0, 1.0, 1.0, 1.0, TAUS, 50_000, np.random.default_rng(1))
        assert rep.passed and rep.measured_constant == 0.0

    def test_lower_bound_all_ties(self):
        rep = check_rmc(lb_spec(level=3, z=0), 1.0, 1.0, 1.0, 1.0, TAUS, 5_000, np.random.default_rng(2))
        assert rep.measured_constant == 1.0

    def test_figure1_with_zero_eps_fails(self):
        rep = check_rmc(RegionSpec.figure1(), 0.0, 1.0, 1.0, 2.0, TAUS, 20_000, np.random.default_rng(3))
        assert not rep.passed and rep.witness["part"] == "sharp"

    def test_beta_order(self):
        with pytest.raises(DomainError):
            check_rmc(LinearSpec(), 0.0, 1.0, 0.5, 1.0, TAUS, 100, np.random.default_rng(0))


class TestStrongDensity:
    def test_uniform(self):
        assert check_strong_density(LinearSpec(dim=2), 1.0, 5, 0, np.random.default_rng(0)).passed

    def test_lower_bound(self):
        assert check_strong_density(lb_spec(level=3), 1.0, 8, 0, np.random.default_rng(0)).passed

    def test_half_support(self):
        spec = RegionSpec(1, (Region(0.5, 1.0, 1.0, (0.6, 0.4)),))
        rep = check_strong_density(spec, 1.0, 6, 0, np.random.default_rng(0))
        assert rep.passed and rep.details["levels"][0]["positive_cells"] == 1

    def test_thin_cell_fails(self):
        rep = check_strong_density(RegionSpec.figure1(), 1.0, 4, 0, np.random.default_rng(0))
        assert not rep.passed and rep.witness["cell"] == "2:1"

    def test_monte_carlo_path(self):
        class NoExact(LinearSpec):
            def cell_masses(self, level):
                raise UnsupportedSpecError("hidden")
        rep = check_strong_density(NoExact(), 1.0, 4, 50_000, np.random.default_rng(0))
        assert rep.passed and rep.details["method"] == "monte-carlo"


class TestReports:
    def test_json_roundtrip(self):
        import json
        rep = check_tmc(ConstantSpec(1, (1 / 3,) * 3), 1.0, 1.0, TAUS, 100, np.random.default_rng(0))
        data = json.loads(rep.to_json())
        assert data["condition"] == "tmc" and data["passed"] is True

    def test_witness_reproducible(self):
        a = check_holder(LinearSpec(), 0.5, 1.0, 50, np.random.default_rng(9))
        b = check_holder(LinearSpec(), 0.5, 1.0, 50, np.random.default_rng(9))
        assert a.to_json() == b.to_json()


class TestConfig:
    @pytest.mark.parametrize("spec", [ConstantSpec(2, (0.1, 0.9)), LinearSpec(1, 2.0, 0.3),
                                      RegionSpec.figure1(), lb_spec(level=2)])
    def test_roundtrip(self, spec):
        again = spec_from_config(spec.to_config())
        X = spec.sample_x(50, np.random.default_rng(0))
        np.testing.assert_array_equal(again.eta(X), spec.eta(X))

    def test_coins_drawn_from_rng(self):
        cfg = {"family": "lowerbound", "n": 4096}
        a = spec_from_config(cfg, np.random.default_rng(3))
        b = spec_from_config(cfg, np.random.default_rng(3))
        assert np.array_equal(a.zs.z, b.zs.z)

    def test_errors_carry_paths(self):
        with pytest.raises(ConfigError) as exc:
            spec_from_config({"family": "nope"}, path="specs/2")
        assert exc.value.path == "specs/2/family"
        with pytest.raises(ConfigError):
            spec_from_config({"family": "lowerbound", "n": 100})
