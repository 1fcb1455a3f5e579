import math

import numpy as np
import pytest

from greedyopt.boostvi import (AllRestartsFailedError, Gaussian1D, GridTarget,
                               Mixture, SupportOverflowError, duality_gap_vi,
                               fit_next_component, kl_on_grid, lambda_schedule,
                               mixture_step, relbo, run_boosting_vi)
from greedyopt.core import make_rng

STANDARD = GridTarget.from_gaussian_mixture([1.0], [0.0], [1.0])
BIMODAL = GridTarget.from_gaussian_mixture([0.4, 0.6], [-1.0, 1.0], [0.5, 0.5])


class TestGridTarget:
    def test_normalized_mass_is_one(self):
        for target in (STANDARD, BIMODAL):
            assert np.trapezoid(target.p, target.grid) == pytest.approx(1.0, abs=1e-9)

    def test_normalizer_absorbs_constants(self):
        shifted = GridTarget(STANDARD.grid, STANDARD.logp + 7.3)
        assert np.allclose(shifted.logp, STANDARD.logp, atol=1e-12)

    def test_csv_round_trip(self, tmp_path):
        path = tmp_path / "target.csv"
        rows = "\n".join(f"{x},{lp}" for x, lp in
                         zip(STANDARD.grid, STANDARD.logp))
        path.write_text(rows + "\n")
        loaded = GridTarget.from_log_density_csv(path)
        assert np.allclose(loaded.p, STANDARD.p, atol=1e-12)

    def test_rejects_nonuniform_grid(self):
        grid = np.array([0.0, 1.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
        with pytest.raises(ValueError):
            GridTarget(grid, np.zeros_like(grid))


class TestRelbo:
    def test_matching_densities_cancel_at_lambda_zero(self):
        s = Gaussian1D(0.0, 1.0)
        q = Mixture.single(s)
        assert relbo(s, q, STANDARD, 0.0) == pytest.approx(0.0, abs=1e-9)

    def test_entropy_term_closed_form(self):
        s = Gaussian1D(0.0, 1.0)
        q = Mixture.single(s)
        expected = 0.7 * 0.5 * math.log(2.0 * math.pi * math.e)
        assert relbo(s, q, STANDARD, 0.7) == pytest.approx(expected, abs=1e-6)

    def test_matches_monte_carlo_oracle(self):
        # oracle: direct sampling estimate of the three expectations
        s = Gaussian1D(0.4, 0.7)
        q = Mixture([Gaussian1D(-0.5, 0.6), Gaussian1D(0.8, 0.9)], [0.3, 0.7])
        lam = 0.31
        value = relbo(s, q, BIMODAL, lam)
        rng = make_rng(0, 0xAC)
        draws = rng.normal(s.mu, s.sigma, 1_000_000)
        draws = draws[(draws > BIMODAL.lo) & (draws < BIMODAL.hi)]
        logp = np.interp(draws, BIMODAL.grid, BIMODAL.logp)
        log_s = np.log(s.pdf(draws))
        log_q = np.log(np.maximum(q.pdf(draws), 1e-300))
        samples = logp - lam * log_s - log_q
        mc = float(samples.mean())
        stderr = float(samples.std() / math.sqrt(samples.size))
        assert abs(value - mc) <= 3.0 * stderr + 1e-4

    def test_support_overflow_raises(self):
        with pytest.raises(SupportOverflowError):
            relbo(Gaussian1D(7.9, 1.0), Mixture.single(Gaussian1D(0.0, 1.0)),
                  BIMODAL, 0.5)


class TestKlOnGrid:
    def test_zero_at_target(self):
        q = Mixture([Gaussian1D(-1.0, 0.5), Gaussian1D(1.0, 0.5)], [0.4, 0.6])
        assert kl_on_grid(q, BIMODAL) == pytest.approx(0.0, abs=1e-6)

    def test_gaussian_shift_closed_form(self):
        target = GridTarget.from_gaussian_mixture([1.0], [1.0], [1.0])
        q = Mixture.single(Gaussian1D(0.0, 1.0))
        assert kl_on_grid(q, target) == pytest.approx(0.5, abs=1e-3)

    def test_nonnegative_on_random_pairs(self):
        rng = make_rng(5, 50)
        for _ in range(100):
            q = Mixture.single(Gaussian1D(float(rng.uniform(-2, 2)),
                                          float(rng.uniform(0.2, 1.5))))
            assert kl_on_grid(q, BIMODAL) >= -1e-6

    def test_quadrature_fidelity_under_h_refinement(self):
        coarse = GridTarget.from_gaussian_mixture([0.4, 0.6], [-1.0, 1.0],
                                                  [0.5, 0.5], h=1.0 / 512.0)
        fine = GridTarget.from_gaussian_mixture([0.4, 0.6], [-1.0, 1.0],
                                                [0.5, 0.5], h=1.0 / 1024.0)
        q = Mixture([Gaussian1D(-0.8, 0.6), Gaussian1D(1.2, 0.4)], [0.5, 0.5])
        assert abs(kl_on_grid(q, coarse) - kl_on_grid(q, fine)) <= 1e-4
        s = Gaussian1D(0.3, 0.5)
        assert abs(relbo(s, q, coarse, 0.5) - relbo(s, q, fine, 0.5)) <= 1e-4


class TestLambdaSchedule:
    @pytest.mark.parametrize("k,expected", [(0, 1.0), (3, 0.5), (99, 0.1)])
    def test_values(self, k, expected):
        assert lambda_schedule(k) == pytest.approx(expected, abs=1e-15)


class TestFitNextComponent:
    def test_fits_the_residual_mode(self):
        q = Mixture.single(Gaussian1D(1.0, 0.5))
        s = fit_next_component(q, BIMODAL, lam=0.5, num_restarts=6, seed=0)
        assert s.mu < 0.0  # the un-covered mode sits at -1

    def test_beats_the_incumbent_component(self):
        q = Mixture.single(Gaussian1D(0.0, 1.0))
        lam = 0.8
        s = fit_next_component(q, STANDARD, lam, num_restarts=6, seed=1)
        incumbent = Gaussian1D(0.0, 1.0)
        assert relbo(s, q, STANDARD, lam) >= relbo(incumbent, q, STANDARD, lam) - 1e-9

    def test_seed_determinism(self):
        q = Mixture.single(Gaussian1D(0.5, 0.8))
        a = fit_next_component(q, BIMODAL, 0.4, num_restarts=6, seed=7)
        b = fit_next_component(q, BIMODAL, 0.4, num_restarts=6, seed=7)
        assert (a.mu, a.sigma) == (b.mu, b.sigma)

    def test_sigma_stays_within_bounds(self):
        q = Mixture.single(Gaussian1D(0.0, 1.0))
        s = fit_next_component(q, STANDARD, lam=5.0, num_restarts=4, seed=2)
        assert 1e-3 <= s.sigma <= 1e3


class TestMixtureStep:
    def test_fixed_round_zero_replaces(self):
        q = Mixture.single(Gaussian1D(0.0, 1.0))
        s = Gaussian1D(1.0, 0.5)
        out = mixture_step(q, s, "fixed", k=0)
        assert len(out.components) == 1
        assert out.components[0] == s

    def test_same_component_is_fixed_point(self):
        s = Gaussian1D(0.3, 0.7)
        q = Mixture.single(s)
        for rule in ("fixed", "lineSearchKL", "fullyCorrective"):
            out = mixture_step(q, s, rule, target=BIMODAL, k=3)
            assert np.allclose(out.pdf(BIMODAL.grid), q.pdf(BIMODAL.grid),
                               atol=1e-12)
            assert out.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_monotone_rules_never_increase_kl(self):
        rng = make_rng(9, 9)
        q = Mixture.single(Gaussian1D(0.0, 1.5))
        for rule in ("lineSearchKL", "fullyCorrective"):
            mix = q
            for k in range(6):
                s = Gaussian1D(float(rng.uniform(-2, 2)), float(rng.uniform(0.2, 1.0)))
                before = kl_on_grid(mix, BIMODAL)
                mix = mixture_step(mix, s, rule, target=BIMODAL, k=k)
                assert kl_on_grid(mix, BIMODAL) <= before + 1e-6

    def test_weights_remain_convex_combination(self):
        q = Mixture.single(Gaussian1D(0.0, 1.0))
        rng = make_rng(3, 33)
        for k in range(8):
            s = Gaussian1D(float(rng.uniform(-2, 2)), float(rng.uniform(0.2, 1.0)))
            rule = ("fixed", "lineSearchKL", "fullyCorrective")[k % 3]
            q = mixture_step(q, s, rule, target=BIMODAL, k=k)
            assert np.min(q.weights) >= 0.0
            assert q.weights.sum() == pytest.approx(1.0, abs=1e-9)


class TestDualityGapVi:
    def test_zero_at_the_target(self):
        q = Mixture([Gaussian1D(-1.0, 0.5), Gaussian1D(1.0, 0.5)], [0.4, 0.6])
        assert abs(duality_gap_vi(q, BIMODAL, search_budget=6, seed=0)) <= 1e-4

    def test_upper_bounds_primal_improvement(self):
        # reference mixture from a long fully corrective run
        q_best, _ = run_boosting_vi(BIMODAL, rounds=25, rule="fullyCorrective",
                                    num_restarts=6, seed=0)
        best_kl = kl_on_grid(q_best, BIMODAL)
        q = Mixture.single(Gaussian1D(0.4, 0.9))
        gap = duality_gap_vi(q, BIMODAL, search_budget=8, seed=1)
        assert gap >= kl_on_grid(q, BIMODAL) - best_kl - 1e-6

    def test_gap_trend_over_rounds(self):
        q = Mixture.single(Gaussian1D(0.0, 1.0))
        _, trace = run_boosting_vi(BIMODAL, rounds=8, rule="fullyCorrective",
                                   num_restarts=4, seed=3, compute_gap=True)
        gaps = [g for g in trace.gaps if g is not None]
        violations = sum(1 for a, b in zip(gaps, gaps[1:]) if b > a + 1e-6)
        assert violations <= 2


class TestRunBoostingVi:
    def test_trace_records_kl_per_round(self):
        q, trace = run_boosting_vi(BIMODAL, rounds=5, rule="fixed",
                                   num_restarts=4, seed=0)
        assert len(trace) == 5
        assert trace.final_objective() == pytest.approx(kl_on_grid(q, BIMODAL),
                                                        abs=1e-12)

    def test_seed_determinism(self):
        _, a = run_boosting_vi(BIMODAL, rounds=5, rule="lineSearchKL",
                               num_restarts=4, seed=5)
        _, b = run_boosting_vi(BIMODAL, rounds=5, rule="lineSearchKL",
                               num_restarts=4, seed=5)
        assert a.objectives == b.objectives
