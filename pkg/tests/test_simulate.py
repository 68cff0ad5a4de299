import math

import numpy as np
import pytest

from countseg.model import DistributionSpec, Segmentation, TrueSignal
from countseg.selection import PenaltySpec
from countseg.simulate import (
    SignalDesign,
    chi2_threshold,
    chi_square_stat,
    default_scenario,
    draw_segment_sums,
    inr14_design,
    recovery_experiment,
    replicate_rng,
    run_bound_checks,
    sample_signal,
    sample_truth,
    verify_chi2_bound,
    verify_tail_yj,
)

POIS = DistributionSpec.poisson()


class TestSampling:
    def test_zero_rate(self):
        y = sample_truth(TrueSignal(np.zeros(50), POIS), np.random.default_rng(0))
        assert not y.any()

    def test_poisson_mean(self):
        n = 100_000
        y = sample_truth(TrueSignal(np.full(n, 7.0), POIS), np.random.default_rng(1))
        assert abs(y.mean() - 7) <= 4 * math.sqrt(7 / n)

    def test_negbin_mean(self):
        n = 100_000
        spec = DistributionSpec.negbin(3.0)
        y = sample_truth(TrueSignal(np.full(n, 0.5), spec), np.random.default_rng(2))
        # mean phi (1-p)/p = 3, variance mean / p = 6
        assert abs(y.mean() - 3) <= 4 * math.sqrt(6 / n)
        assert y.var() == pytest.approx(6, rel=0.05)

    def test_replicates_are_reproducible_and_distinct(self):
        d = inr14_design()
        np.testing.assert_array_equal(sample_signal(d, 3), sample_signal(d, 3))
        assert not np.array_equal(sample_signal(d, 3), sample_signal(d, 4))
        a = replicate_rng(5, 0).integers(0, 2**31, 4)
        b = replicate_rng(5, 0).integers(0, 2**31, 4)
        np.testing.assert_array_equal(a, b)

    def test_segment_sums_match_direct_sampling(self):
        spec = DistributionSpec.negbin(1.5)
        seg = Segmentation((1, 4), 6)
        truth = TrueSignal(np.array([0.3, 0.3, 0.6, 0.5, 0.5, 0.2]), spec)
        reps = 100_000
        sums = draw_segment_sums(truth, seg, reps, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        direct = np.array([sample_truth(truth, rng) for _ in range(20_000)])
        direct_sums = np.stack([direct[:, :3].sum(1), direct[:, 3:].sum(1)], axis=1)
        e = np.array([truth.means()[:3].sum(), truth.means()[3:].sum()])
        var = np.array([np.sum(truth.means()[:3] / truth.theta[:3]), np.sum(truth.means()[3:] / truth.theta[3:])])
        assert np.all(np.abs(sums.mean(0) - e) <= 4 * np.sqrt(var / reps))
        np.testing.assert_allclose(sums.var(0), var, rtol=0.05)
        assert np.all(np.abs(direct_sums.mean(0) - e) <= 4 * np.sqrt(var / 20_000))


class TestDesign:
    def test_shape(self):
        d = inr14_design()
        assert d.k == 14
        assert 3500 <= d.n <= 4500
        assert d.segmentation().k == 14
        np.testing.assert_allclose(d.means(), [0.3, 1.5, 0.4, 25, 0.5, 2.5, 0.3, 40, 1.0, 0.2, 12, 1.2, 0.3, 30])

    def test_validation(self):
        with pytest.raises(ValueError):
            SignalDesign((10, 10), (1.0, 1.0), POIS)
        with pytest.raises(ValueError):
            SignalDesign((10,), (1.0, 2.0), POIS)


class TestChiSquare:
    def test_zero_at_expectation(self):
        truth = TrueSignal(np.array([2.0, 2.0, 3.0, 3.0]), POIS)
        assert chi_square_stat([2, 2, 3, 3], Segmentation((1, 3), 4), truth) == 0.0

    def test_example(self):
        truth = TrueSignal(np.full(4, 2.0), POIS)
        assert chi_square_stat([3, 3, 3, 3], Segmentation.single(4), truth) == pytest.approx(2.0)

    def test_poisson_mean_is_m(self):
        rep = verify_chi2_bound(
            default_scenario("poisson").chi2_truth, default_scenario("poisson").chi2_seg, 0.3, [2.0], 100_000, 0
        )
        se = rep.chi2_sd / math.sqrt(100_000)
        assert abs(rep.chi2_mean - 5) <= 4 * se


class TestBounds:
    def test_x_zero_is_trivial(self):
        rep = verify_tail_yj(TrueSignal(np.ones(100), POIS), (1, 100), [0.0], 10_000)
        assert all(r["bound"] >= 1 for r in rep.rows) and rep.passed

    def test_huge_x(self):
        rep = verify_tail_yj(TrueSignal(np.ones(100), POIS), (1, 100), [1000.0], 10_000)
        assert all(r["empirical"] == 0 for r in rep.rows)

    def test_poisson_deviation_example(self):
        rep = verify_tail_yj(TrueSignal(np.ones(100), POIS), (1, 100), [20.0], 100_000)
        upper = rep.rows[0]
        assert upper["bound"] == pytest.approx(math.exp(-400 / 240), rel=1e-12)
        assert upper["bound"] == pytest.approx(0.1889, abs=1e-4)
        assert rep.passed

    def test_negbin_deviation_example(self):
        spec = DistributionSpec.negbin(2.0)
        rep = verify_tail_yj(TrueSignal(np.full(100, 0.5), spec), (1, 100), [30.0], 100_000)
        assert rep.passed

    def test_poisson_chi2_examples(self):
        sc = default_scenario("poisson")
        rep = verify_chi2_bound(sc.chi2_truth, sc.chi2_seg, 0.3, [2.0, 5.0], 100_000, 3)
        bounds = [r["bound"] for r in rep.rows if r["check"] == "chi2"]
        assert bounds == pytest.approx([math.exp(-2), math.exp(-5)])
        assert rep.passed
        assert rep.omega_complement < 0.01

    def test_threshold(self):
        assert chi2_threshold(2.0, 5, 0.3) == pytest.approx(5 + 8 * 1.3 * math.sqrt(10) + 4 * 1.3 * 2)

    def test_stated_negbin_tail_form_is_violated(self):
        # the e^-x form with Poisson constants does not hold for negbin sums
        spec = DistributionSpec.negbin(2.0)
        rep = verify_tail_yj(TrueSignal(np.full(100, 0.5), spec), (1, 100), [5.0], 100_000, 1, as_exponent=True)
        upper = rep.rows[0]
        assert upper["empirical"] > upper["bound"] + 3 * upper["se"]

    def test_corrected_negbin_tail_form_holds(self):
        spec = DistributionSpec.negbin(2.0)
        truth = TrueSignal(np.full(100, 0.5), spec)
        rep = verify_tail_yj(truth, (1, 100), [1.0, 2.0, 5.0], 100_000, 1, as_exponent=True, corrected=True)
        assert rep.passed

    def test_corrected_equals_plain_for_poisson(self):
        truth = TrueSignal(np.ones(100), POIS)
        a = verify_tail_yj(truth, (1, 100), [2.0], 10_000, 0, True)
        b = verify_tail_yj(truth, (1, 100), [2.0], 10_000, 0, True, corrected=True)
        assert [r["deviation"] for r in a.rows] == [r["deviation"] for r in b.rows]

    def test_default_poisson_scenario_passes(self):
        assert run_bound_checks(default_scenario("poisson"), reps=100_000).passed

    def test_misspecified_truth_fails(self):
        rep = run_bound_checks(default_scenario("poisson"), reps=20_000, truth_scale=1.3)
        assert not rep.passed

    def test_csv_is_stable(self):
        a = run_bound_checks(default_scenario("negbin"), reps=10_000, seed=4).to_csv()
        b = run_bound_checks(default_scenario("negbin"), reps=10_000, seed=4).to_csv()
        assert a == b and a.startswith("check,side,x")


class TestRecovery:
    def test_noiseless_limit(self):
        spec = DistributionSpec.poisson()
        design = SignalDesign.from_means((60, 60, 60), (5.0, 400.0, 5.0), spec, seed=1)
        res = recovery_experiment(design, 5, PenaltySpec.fixed(design.n, 1.0), kmax=6, fit_family="poisson")
        assert res.summary()["recovery_rate"] == 1.0
        assert res.summary()["rand_median"] == 1.0

    def test_threads_do_not_change_output(self):
        design = SignalDesign.from_means((100, 80, 120), (1.0, 8.0, 2.0), DistributionSpec.negbin(2.0), seed=9)
        sel = PenaltySpec(design.n, "slope")
        a = recovery_experiment(design, 6, sel, kmax=12, threads=1).to_csv()
        b = recovery_experiment(design, 6, sel, kmax=12, threads=3).to_csv()
        assert a == b

    def test_single_replicate(self):
        design = SignalDesign.from_means((100, 100), (1.0, 9.0), DistributionSpec.negbin(2.0), seed=2)
        res = recovery_experiment(design, 1, PenaltySpec.fixed(design.n, 0.5), kmax=4, phi=None)
        lines = res.to_csv().splitlines()
        assert len(res.rows) == 1
        assert lines[0] == "seed_index,k_hat,rand_index,phi_used,beta_used"
        assert lines[2] == "summary_key,value"
