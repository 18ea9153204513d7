import json

import numpy as np
import pytest
from scipy.special import expit, logit

from corrfail import core, ising
from corrfail.errors import DegenerateMarginalError, DimensionError
from corrfail.fileio import load_samples, save_samples

from conftest import random_symmetric, total_variation


def exact_target(model):
    return core.exact_moments(model)


class TestGibbsConditional:
    def test_zero_coupling_is_half(self, rng):
        model = core.IsingModel(np.zeros((4, 4)))
        for i in range(4):
            x = rng.integers(0, 2, 4)
            assert ising.gibbs_conditional(i, x, model) == 0.5

    def test_d1_matches_enumerated_marginal(self):
        a = -0.9
        model = core.IsingModel([[a]])
        pmf, _ = core.enumerate_pmf(model)
        assert ising.gibbs_conditional(0, [0], model) == pytest.approx(
            pmf[1], abs=1e-15
        )
        assert ising.gibbs_conditional(0, [0], model) == pytest.approx(
            expit(a), abs=1e-15
        )

    def test_d3_matches_conditioned_pmf(self, rng):
        j = random_symmetric(rng, 3)
        model = core.IsingModel(j)
        pmf, _ = core.enumerate_pmf(model)
        states = core.enumerate_states(3)
        for i in range(3):
            x = rng.integers(0, 2, 3)
            # condition the 8-state pmf on the other two sites
            rest = [k for k in range(3) if k != i]
            match = np.all(states[:, rest] == x[rest], axis=1)
            mass = pmf[match]
            ones = states[match, i] == 1
            expected = mass[ones].sum() / mass.sum()
            assert ising.gibbs_conditional(i, x, model) == pytest.approx(
                expected, abs=1e-12
            )

    def test_index_out_of_range(self):
        model = core.IsingModel(np.zeros((2, 2)))
        with pytest.raises(IndexError):
            ising.gibbs_conditional(2, [0, 1], model)


class TestGibbsSample:
    def test_fair_bits(self):
        model = core.IsingModel(np.zeros((4, 4)))
        cfg = ising.GibbsConfig(n_samples=100_000, burn_in=10, seed=3)
        samples = ising.gibbs_sample(model, cfg)
        assert samples.shape == (100_000, 4)
        np.testing.assert_allclose(samples.mean(axis=0), 0.5, atol=0.01)

    def test_moments_match_enumeration(self, rng):
        j = random_symmetric(rng, 5, scale=0.5)
        model = core.IsingModel(j)
        cfg = ising.GibbsConfig(n_samples=200_000, burn_in=1000, seed=17)
        emp = ising.estimate_moments(ising.gibbs_sample(model, cfg)).moments
        ref = core.exact_moments(model).moments
        se = np.sqrt(ref * (1 - ref) / 200_000)
        assert np.all(np.abs(emp - ref) <= 3.5 * np.maximum(se, 1e-12))

    def test_seed_determinism(self, rng):
        model = core.IsingModel(random_symmetric(rng, 4))
        cfg = ising.GibbsConfig(n_samples=5000, burn_in=100, thinning=2,
                                seed=99, n_chains=3)
        a = ising.gibbs_sample(model, cfg)
        b = ising.gibbs_sample(model, cfg)
        assert np.array_equal(a, b)
        c = ising.gibbs_sample(model, ising.GibbsConfig(
            n_samples=5000, burn_in=100, thinning=2, seed=100, n_chains=3))
        assert not np.array_equal(a, c)

    def test_random_site_scan_also_correct(self, rng):
        j = random_symmetric(rng, 3, scale=0.5)
        model = core.IsingModel(j)
        cfg = ising.GibbsConfig(n_samples=150_000, burn_in=1000, seed=5,
                                scan="random-site")
        emp = ising.estimate_moments(ising.gibbs_sample(model, cfg)).moments
        ref = core.exact_moments(model).moments
        se = np.sqrt(ref * (1 - ref) / 150_000)
        assert np.all(np.abs(emp - ref) <= 4 * np.maximum(se, 1e-12))

    def test_multi_chain_split_covers_budget(self, rng):
        model = core.IsingModel(np.zeros((2, 2)))
        cfg = ising.GibbsConfig(n_samples=1001, burn_in=5, seed=1, n_chains=4)
        assert ising.gibbs_sample(model, cfg).shape == (1001, 2)


class TestEstimateMoments:
    def test_single_all_ones(self):
        m = ising.estimate_moments(np.ones((1, 3), dtype=np.uint8))
        np.testing.assert_allclose(m.moments, 1.0)

    def test_alternating(self):
        samples = np.array([[1, 0], [0, 1]] * 50, dtype=np.uint8)
        m = ising.estimate_moments(samples)
        np.testing.assert_allclose(np.diag(m.moments), 0.5)
        assert m.moments[0, 1] == 0.0

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            ising.estimate_moments(np.zeros((0, 3), dtype=np.uint8))


class TestFitML:
    def test_gradient_sign_decreases_residual(self, rng):
        # freeze the update direction: one step from zeros toward a target
        # with excess correlation must shrink the residual
        target = core.SecondMomentMatrix([[0.5, 0.4], [0.4, 0.5]])
        cfg = ising.TrainConfig(learning_rate=0.5, max_iters=2,
                                moment_tolerance=1e-15)
        report = ising.fit_ml(target, cfg)
        assert report.residual_trace[1] < report.residual_trace[0]

    def test_exact_mode_recovers_pmf(self, rng):
        j = random_symmetric(rng, 3)
        truth = core.IsingModel(j)
        target = exact_target(truth)
        cfg = ising.TrainConfig(learning_rate=1.0, max_iters=20_000,
                                moment_tolerance=1e-7)
        report = ising.fit_ml(target, cfg)
        assert report.converged
        assert report.mode == "exact"
        fitted_m = core.exact_moments(report.final_model).moments
        np.testing.assert_allclose(fitted_m, target.moments, atol=1e-6)
        pmf_fit, _ = core.enumerate_pmf(report.final_model)
        pmf_true, _ = core.enumerate_pmf(truth)
        assert total_variation(pmf_fit, pmf_true) < 1e-6

    def test_independent_target_gives_logit_diagonal(self):
        mu = np.array([0.2, 0.5, 0.7])
        c = core.MomentConstraints(mu, np.eye(3))
        target = core.constraints_to_second_moments(c)
        cfg = ising.TrainConfig(learning_rate=1.0, max_iters=20_000,
                                moment_tolerance=1e-10)
        report = ising.fit_ml(target, cfg)
        assert report.converged
        j = report.final_model.coupling
        off = j[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, 0.0, atol=1e-6)
        np.testing.assert_allclose(np.diag(j), logit(mu), atol=1e-6)

    def test_stationary_target_converges_immediately(self):
        # target equal to the starting model's own moments: the first
        # residual is exactly zero and no step is taken
        start = core.IsingModel(np.zeros((3, 3)))
        target = exact_target(start)
        cfg = ising.TrainConfig(learning_rate=0.3, max_iters=50,
                                moment_tolerance=1e-12)
        report = ising.fit_ml(target, cfg)
        assert report.converged
        assert report.iterations_used == 1
        assert report.residual_trace[0] == 0.0
        assert np.array_equal(report.final_model.coupling, np.zeros((3, 3)))

    def test_gibbs_mode_runs(self, rng):
        j = random_symmetric(rng, 3, scale=0.4)
        target = exact_target(core.IsingModel(j))
        cfg = ising.TrainConfig(
            learning_rate=0.3, max_iters=60, moment_tolerance=5e-3,
            expectation="gibbs",
            samples_per_iter=ising.GibbsConfig(n_samples=20_000, burn_in=500),
            seed=8,
        )
        report = ising.fit_ml(target, cfg)
        assert report.mode == "gibbs"
        assert report.residual_trace[-1] < 0.05

    def test_degenerate_target_guard(self):
        bad = np.array([[1.0, 0.5], [0.5, 0.5]])
        with pytest.raises(DegenerateMarginalError):
            ising.fit_ml(core.SecondMomentMatrix(bad), ising.TrainConfig())

    def test_seeded_fit_determinism(self, rng):
        j = random_symmetric(rng, 3, scale=0.4)
        target = exact_target(core.IsingModel(j))
        cfg = ising.TrainConfig(
            learning_rate=0.3, max_iters=25, moment_tolerance=1e-9,
            expectation="gibbs",
            samples_per_iter=ising.GibbsConfig(n_samples=5000, burn_in=100),
            seed=21,
        )
        r1 = ising.fit_ml(target, cfg)
        r2 = ising.fit_ml(target, cfg)
        assert np.array_equal(r1.final_model.coupling, r2.final_model.coupling)
        assert np.array_equal(r1.residual_trace, r2.residual_trace)


class TestDetailedBalance:
    def test_sweep_preserves_stationary_pmf(self, rng):
        # apply the two single-site heat-bath operators analytically to the
        # enumerated pmf; the result must be the same pmf
        j = random_symmetric(rng, 2)
        model = core.IsingModel(j)
        pmf, _ = core.enumerate_pmf(model)
        states = core.enumerate_states(2)
        p = pmf.copy()
        for site in range(2):
            newp = np.zeros_like(p)
            for s, x in enumerate(states):
                cond = ising.gibbs_conditional(site, x, model)
                x1 = x.copy()
                x1[site] = 1
                s1 = int(x1[0]) + 2 * int(x1[1])
                x0 = x.copy()
                x0[site] = 0
                s0 = int(x0[0]) + 2 * int(x0[1])
                newp[s1] += p[s] * cond
                newp[s0] += p[s] * (1 - cond)
            p = newp
        np.testing.assert_allclose(p, pmf, atol=1e-12)


def covariance_of(model):
    m = core.exact_moments(model).moments
    mu = np.diag(m)
    cov = m - np.outer(mu, mu)
    np.fill_diagonal(cov, mu * (1 - mu))
    return cov


class TestFitCD:
    # a truth model with substantial covariances, so relative errors are
    # about CD bias rather than division by near-zero entries
    @pytest.fixture(scope="class")
    def truth(self):
        corr = np.full((3, 3), 0.35)
        np.fill_diagonal(corr, 1.0)
        c = core.MomentConstraints([0.35, 0.5, 0.65], corr)
        target = core.constraints_to_second_moments(c)
        report = ising.fit_ml(target, ising.TrainConfig(
            learning_rate=1.0, max_iters=30_000, moment_tolerance=1e-10))
        assert report.converged
        return report.final_model

    def _exact_samples(self, rng, model, n):
        pmf, _ = core.enumerate_pmf(model)
        states = core.enumerate_states(model.dimension)
        idx = rng.choice(pmf.size, size=n, p=pmf)
        return states[idx]

    def test_cd1_recovers_covariance(self, rng, truth):
        data = self._exact_samples(rng, truth, 200_000)
        cfg = ising.TrainConfig(learning_rate=0.5, max_iters=400,
                                moment_tolerance=2e-3, cd_steps=1, seed=4)
        report = ising.fit_cd(data, cfg)
        assert ising.CD_BIAS_CAVEAT in report.warnings
        rel = np.abs(covariance_of(report.final_model) - covariance_of(truth)) \
            / np.abs(covariance_of(truth))
        assert np.max(rel) < 0.05

    def test_degenerate_data_guard(self):
        data = np.zeros((500, 3), dtype=np.uint8)
        with pytest.raises(DegenerateMarginalError):
            ising.fit_cd(data, ising.TrainConfig())

    @staticmethod
    def _sweep_operator(model):
        """Exact one-sweep transition matrix on the 8-state space, built
        from the analytic conditionals (independent of the sampling
        kernel)."""
        op = np.eye(8)
        states = core.enumerate_states(3)
        for site in range(3):
            step = np.zeros((8, 8))
            for s in range(8):
                cond = ising.gibbs_conditional(site, states[s], model)
                step[s | (1 << site), s] += cond
                step[s & ~(1 << site), s] += 1 - cond
            op = step @ op
        return op

    def _deterministic_cd_fixed_point(self, data_pmf, n_steps):
        """Iterate the CD update with *exact* n-step moments (transition
        operator powers), removing all sampling noise."""
        states = core.enumerate_states(3)
        m_data = core.moments_from_pmf(data_pmf, states).moments
        coupling = np.zeros((3, 3))
        for _ in range(30_000):
            model = core.IsingModel(coupling)
            op = np.linalg.matrix_power(self._sweep_operator(model), n_steps)
            m_n = core.moments_from_pmf(op @ data_pmf, states).moments
            residual = m_data - m_n
            if np.abs(residual).max() <= 1e-9:
                break
            coupling = coupling + 1.0 * residual
        return core.IsingModel(coupling)

    def test_many_steps_approaches_ml(self, rng, truth):
        # the n -> infinity claim, checked with sampling noise removed:
        # iterate the CD update on exact n-step moments and compare its
        # fixed point against the ML answer on the same data distribution
        data = self._exact_samples(rng, truth, 50_000)
        keys = (data * (1 << np.arange(3))).sum(axis=1)
        data_pmf = np.bincount(keys, minlength=8) / len(data)
        ml = ising.fit_ml(ising.estimate_moments(data), ising.TrainConfig(
            learning_rate=1.0, max_iters=30_000, moment_tolerance=1e-9))
        assert ml.converged
        cov_ml = covariance_of(ml.final_model)
        cd25 = self._deterministic_cd_fixed_point(data_pmf, 25)
        rel = np.abs(covariance_of(cd25) - cov_ml) / np.abs(cov_ml)
        assert np.max(rel) < 0.01
        # the bias really does shrink with n
        cd1 = self._deterministic_cd_fixed_point(data_pmf, 1)
        rel1 = np.abs(covariance_of(cd1) - cov_ml) / np.abs(cov_ml)
        assert np.max(rel) <= np.max(rel1) + 1e-12

    def test_stochastic_cd_near_ml(self, rng, truth):
        # same comparison through the real sampling path; optimizer noise
        # at this budget dominates the (tiny) CD-10 bias, hence the wider
        # band than the noise-free fixed-point check above
        data = self._exact_samples(rng, truth, 200_000)
        ml = ising.fit_ml(ising.estimate_moments(data), ising.TrainConfig(
            learning_rate=1.0, max_iters=20_000, moment_tolerance=1e-8))
        stage1 = ising.fit_cd(data, ising.TrainConfig(
            learning_rate=0.7, max_iters=300, moment_tolerance=2.5e-3,
            cd_steps=10, seed=10))
        stage2 = ising.fit_cd(data, ising.TrainConfig(
            learning_rate=0.05, max_iters=400, moment_tolerance=1e-9,
            cd_steps=10, seed=11),
            initial_coupling=stage1.final_model.coupling)
        cov_ml = covariance_of(ml.final_model)
        rel = np.abs(covariance_of(stage2.final_model) - cov_ml) / np.abs(cov_ml)
        assert np.max(rel) < 0.05


class TestSynthesizeData:
    def test_independent_moments(self, rng):
        c = core.MomentConstraints([0.3, 0.6, 0.5], np.eye(3))
        data = ising.synthesize_data(c, 200_000, seed=12)
        se = np.sqrt(c.means * (1 - c.means) / 200_000)
        assert np.all(np.abs(data.mean(axis=0) - c.means) <= 3.5 * se)

    def test_correlated_pair(self):
        c = core.MomentConstraints([0.5, 0.5], [[1, 0.5], [0.5, 1]])
        data = ising.synthesize_data(c, 1_000_000, seed=13)
        r = np.corrcoef(data.T.astype(float))[0, 1]
        assert r == pytest.approx(0.5, abs=0.003)

    def test_determinism(self):
        c = core.MomentConstraints([0.4, 0.4], [[1, 0.2], [0.2, 1]])
        a = ising.synthesize_data(c, 1000, seed=5)
        b = ising.synthesize_data(c, 1000, seed=5)
        assert np.array_equal(a, b)


class TestReportAndFiles:
    def test_report_serializes(self, rng):
        target = exact_target(core.IsingModel(random_symmetric(rng, 2)))
        cfg = ising.TrainConfig(learning_rate=1.0, max_iters=5000,
                                moment_tolerance=1e-6)
        report = ising.fit_ml(target, cfg)
        payload = json.dumps(report.to_dict())
        round_tripped = json.loads(payload)
        assert round_tripped["converged"] is True
        assert len(round_tripped["residual_trace"]) == report.iterations_used
        assert round_tripped["config"]["learning_rate"] == 1.0

    def test_sample_file_round_trip(self, rng, tmp_path):
        samples = rng.integers(0, 2, (50, 4)).astype(np.uint8)
        path = tmp_path / "samples.csv"
        save_samples(samples, path, seed=77)
        loaded, seed = load_samples(path)
        assert seed == 77
        assert np.array_equal(loaded, samples)

    def test_model_file_round_trip(self, rng, tmp_path):
        model = core.IsingModel(random_symmetric(rng, 4))
        ising.save_model(model, tmp_path)
        loaded = ising.load_model(tmp_path)
        assert np.array_equal(loaded.coupling, model.coupling)
