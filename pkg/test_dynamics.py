#!/usr/bin/env python3
"""
Unit tests for the energy functions and transition kernels

Tests cover:
- PhaseState and kernel config validation
- Stormer-Verlet: free particle, reversibility, energy error
- Metropolis-Hastings acceptance and its random stream use
- SGHMC and SGNHT updates against hand-computed steps
- Nose-Poincare energy, generalized leapfrog step and thermostat blowup
"""

import math

import numpy as np
import numpy.testing as npt
import pytest

from sampling import dynamics
from sampling.dynamics import (HmcConfig, NpConfig, PhaseState, SghmcConfig,
                               SgnhtConfig)
from sampling.errors import ThermostatBlowup
from sampling.models import (BayesLogisticModel, Dataset, GaussianMeanModel, GaussianTarget,
                             LinearPotentialTarget, MinibatchSampler,
                             generate_mixture_lr_data, log_lik)
from sampling.spd_linalg import SpdMatrix


@pytest.fixture
def target():
    return GaussianTarget([0.5, -1.0], [[2.0, 0.3], [0.3, 1.0]])


@pytest.fixture
def m_inv():
    return SpdMatrix([[1.0, 0.2], [0.2, 0.5]])


class TestPhaseState:
    """Test state construction"""

    def test_arrays_are_read_only(self):
        """Test that theta and p cannot be mutated in place"""
        state = PhaseState([1.0, 2.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            state.theta[0] = 3.0

    def test_shape_mismatch(self):
        """Test that theta and p must have equal length"""
        with pytest.raises(ValueError):
            PhaseState([1.0, 2.0], [0.0])

    @pytest.mark.parametrize("s", [0.0, -1.0])
    def test_non_positive_s(self, s):
        """Test that the Nose-Poincare control must stay positive"""
        with pytest.raises(ValueError):
            PhaseState([1.0], [0.0], s=s, q=0.0)

    def test_replace_keeps_other_fields(self):
        """Test that replace only touches the given fields"""
        state = PhaseState([1.0], [2.0], xi=0.5)
        moved = state.replace(theta=[3.0])
        npt.assert_array_equal(moved.p, [2.0])
        assert moved.xi == 0.5


class TestKernelConfigs:
    """Test config value checks"""

    @pytest.mark.parametrize("kwargs", [
        {"eps": 0.0, "n_leapfrog": 1},
        {"eps": 0.1, "n_leapfrog": 0},
    ])
    def test_hmc_config(self, kwargs):
        """Test step size and step count checks"""
        with pytest.raises(ValueError):
            HmcConfig(**kwargs)

    def test_sghmc_friction_below_noise_estimate(self):
        """Test that C < B_hat is rejected"""
        with pytest.raises(ValueError):
            SghmcConfig(eps=0.1, n_leapfrog=1, C=1.0, B_hat=2.0)

    def test_sgnht_xi_center_defaults_to_a(self):
        """Test that the thermostat center falls back to A"""
        assert SgnhtConfig(eps=0.1, n_leapfrog=1, A=3.0).xi_center == 3.0
        assert SgnhtConfig(eps=0.1, n_leapfrog=1, A=3.0, xi_bar=1.0).xi_center == 1.0

    def test_np_config_positive_q(self):
        """Test that the thermostat mass must be positive"""
        with pytest.raises(ValueError):
            NpConfig(eps=0.1, n_leapfrog=1, Q=0.0)


class TestLeapfrog:
    """Test the Stormer-Verlet integrator"""

    def test_free_particle(self, m_inv):
        """Test straight-line motion theta + L eps M_I p with zero energy change"""
        model = LinearPotentialTarget([0.0, 0.0])
        state = PhaseState([1.0, -1.0], [0.5, 2.0])
        cfg = HmcConfig(eps=0.1, n_leapfrog=7)
        end, delta_h = dynamics.leapfrog_trajectory(state, model, m_inv, cfg)
        npt.assert_allclose(end.theta, state.theta + 0.7 * m_inv.matvec(state.p))
        npt.assert_allclose(end.p, state.p)
        assert delta_h == pytest.approx(0.0, abs=1e-14)

    def test_constant_force(self):
        """Test p and theta under a constant gradient by hand arithmetic"""
        model = LinearPotentialTarget([1.0])
        state = PhaseState([0.0], [0.0])
        end, delta_h = dynamics.leapfrog_trajectory(
            state, model, SpdMatrix.identity(1), HmcConfig(eps=0.5, n_leapfrog=2))
        # p: 0 -> 0.25 -> 0.5 -> 0.75 -> 1.0; theta: 0.125 + 0.375
        npt.assert_allclose(end.p, [1.0])
        npt.assert_allclose(end.theta, [0.5])
        assert delta_h == pytest.approx(0.0, abs=1e-14)

    def test_reversibility(self, target, m_inv):
        """Test that negating momentum retraces the trajectory"""
        state = PhaseState([1.0, 0.0], [0.3, -0.7])
        cfg = HmcConfig(eps=0.05, n_leapfrog=40)
        end, _ = dynamics.leapfrog_trajectory(state, model=target, m_inv=m_inv, cfg=cfg)
        back, _ = dynamics.leapfrog_trajectory(end.replace(p=-end.p), target, m_inv, cfg)
        npt.assert_allclose(back.theta, state.theta, atol=1e-10)
        npt.assert_allclose(-back.p, state.p, atol=1e-10)

    def test_zero_steps(self, target, m_inv):
        """Test that zero steps return the start unchanged"""
        state = PhaseState([1.0, 0.0], [0.3, -0.7])
        end, delta_h = dynamics.leapfrog_trajectory(
            state, target, m_inv, HmcConfig(eps=0.1, n_leapfrog=5), n_steps=0)
        npt.assert_array_equal(end.theta, state.theta)
        assert delta_h == 0.0

    def test_energy_error_second_order(self, target, m_inv):
        """Test that halving eps over the same time cuts |dH| by about four"""
        state = PhaseState([1.5, 0.0], [0.3, -0.7])
        _, coarse = dynamics.leapfrog_trajectory(state, target, m_inv, HmcConfig(0.02, 10))
        _, fine = dynamics.leapfrog_trajectory(state, target, m_inv, HmcConfig(0.01, 20))
        assert 3.0 < abs(coarse) / abs(fine) < 5.0


class TestMetropolisHastings:
    """Test mh_accept"""

    def test_downhill_always_accepted(self):
        """Test that dH <= 0 is always accepted"""
        rng = np.random.default_rng(0)
        assert all(dynamics.mh_accept(-0.5, rng) for _ in range(100))

    def test_consumes_one_uniform(self):
        """Test that every call draws exactly one uniform, accepted or not"""
        rng = np.random.default_rng(8)
        dynamics.mh_accept(-1.0, rng)
        dynamics.mh_accept(50.0, rng)
        reference = np.random.default_rng(8)
        reference.random(2)
        assert rng.random() == reference.random()

    def test_acceptance_frequency(self):
        """Test that dH = 1 is accepted about exp(-1) of the time"""
        rng = np.random.default_rng(1)
        rate = np.mean([dynamics.mh_accept(1.0, rng) for _ in range(20000)])
        assert rate == pytest.approx(math.exp(-1.0), abs=0.015)

    def test_rejection_keeps_theta_with_fresh_momentum(self, target, m_inv, monkeypatch):
        """Test that a rejected proposal keeps theta and the redrawn momentum"""
        monkeypatch.setattr(dynamics, "mh_accept", lambda delta_h, rng: False)
        state = PhaseState([1.0, 0.0], [0.0, 0.0])
        new, accepted = dynamics.hmc_em_epoch(state, target, m_inv, HmcConfig(0.1, 5),
                                              np.random.default_rng(2))
        assert accepted is False
        npt.assert_array_equal(new.theta, state.theta)
        expected_p = dynamics.resample_momentum(m_inv, np.random.default_rng(2))
        npt.assert_array_equal(new.p, expected_p)


class TestHmcStationarity:
    """Test the long-run behaviour of hmc_em_epoch"""

    def test_momentum_covariance_matches_mass(self, target, m_inv):
        """Test that post-epoch momenta have covariance M, so an M-step leaves M_I in place"""
        rng = np.random.default_rng(4)
        state = PhaseState([0.5, -1.0], [0.0, 0.0])
        momenta = []
        for _ in range(3000):
            state, _ = dynamics.hmc_em_epoch(state, target, m_inv, HmcConfig(0.1, 5), rng)
            momenta.append(state.p)
        covariance = np.cov(np.array(momenta[500:]), rowvar=False)
        npt.assert_allclose(covariance, np.linalg.inv(m_inv), atol=0.2)

    @pytest.mark.slow
    def test_gaussian_mean_posterior(self):
        """Test near-certain acceptance and the conjugate posterior variance on a 1-D mean"""
        data = np.random.default_rng(0).normal(0.3, 1.0, size=800)
        model = GaussianMeanModel(Dataset(data))
        rng = np.random.default_rng(1)
        state = PhaseState([model.posterior_mean()], [0.0])
        draws, accepted = [], []
        for _ in range(10000):
            state, ok = dynamics.hmc_em_epoch(state, model, SpdMatrix.identity(1),
                                              HmcConfig(0.005, 10), rng)
            draws.append(state.theta[0])
            accepted.append(ok)
        assert np.mean(accepted) > 0.95
        assert np.var(draws[1000:]) == pytest.approx(model.posterior_variance(), rel=0.1)
        assert np.mean(draws) == pytest.approx(model.posterior_mean(), abs=0.01)


class TestSghmc:
    """Test the SGHMC epoch"""

    def test_zero_friction_matches_hand_loop(self, target, m_inv):
        """Test that C = B_hat = 0 with full data is a noiseless Euler integrator"""
        cfg = SghmcConfig(eps=0.05, n_leapfrog=4, C=0.0, B_hat=0.0)
        state = PhaseState([1.0, 0.0], [0.0, 0.0])
        new = dynamics.sghmc_epoch(state, target, m_inv, cfg, MinibatchSampler(0),
                                   np.random.default_rng(6))

        rng = np.random.default_rng(6)
        p = dynamics.resample_momentum(m_inv, rng)
        theta = state.theta
        for _ in range(4):
            rng.standard_normal(2)
            p = p + 0.05 * target.grad_log_lik_rows(theta, None)
            theta = theta + 0.05 * m_inv.matvec(p)
        npt.assert_allclose(new.theta, theta)
        npt.assert_allclose(new.p, p)

    def test_deterministic_given_seed(self, target, m_inv):
        """Test that equal streams give equal states"""
        cfg = SghmcConfig(eps=0.01, n_leapfrog=5)
        state = PhaseState([1.0, 0.0], [0.0, 0.0])
        a = dynamics.sghmc_epoch(state, target, m_inv, cfg, MinibatchSampler(0),
                                 np.random.default_rng(3))
        b = dynamics.sghmc_epoch(state, target, m_inv, cfg, MinibatchSampler(0),
                                 np.random.default_rng(3))
        npt.assert_array_equal(a.theta, b.theta)


class TestFrictionUpdate:
    """Test the momentum friction step shared by SGHMC and SGNHT"""

    def test_implicit_for_positive_friction(self):
        """Test (I + eps c M_I) p' = p with a stiff diagonal M_I"""
        p = dynamics.friction_update(np.array([1.0, 1.0]), SpdMatrix.diag([50.0, 1.0]),
                                     1000.0, 0.1, np.zeros(2))
        npt.assert_allclose(p, [1.0 / 5001.0, 1.0 / 101.0])

    def test_never_amplifies_without_drive(self):
        """Test that positive friction shrinks |p| however large eps c M_I is"""
        rng = np.random.default_rng(2)
        m_inv = SpdMatrix([[300.0, 40.0], [40.0, 9.0]])
        p = rng.standard_normal(2)
        for friction in (0.1, 10.0, 1e4):
            new = dynamics.friction_update(p, m_inv, friction, 0.01, np.zeros(2))
            assert np.linalg.norm(new) < np.linalg.norm(p)

    def test_explicit_for_negative_friction(self):
        """Test p - eps c M_I p + drive when c < 0"""
        p = dynamics.friction_update(np.array([1.0, 2.0]), SpdMatrix.identity(2), -1.0, 0.1,
                                     np.array([0.5, 0.0]))
        npt.assert_allclose(p, [1.6, 2.2])


class TestSgnht:
    """Test the SGNHT epoch and thermostat"""

    def test_thermostat_update(self):
        """Test xi + eps (p^T M_I p / D - 1) by hand"""
        xi = dynamics.thermostat_update(1.0, np.array([2.0, 0.0]), SpdMatrix.identity(2), 0.1)
        assert xi == pytest.approx(1.0 + 0.1 * (4.0 / 2.0 - 1.0))

    def test_one_step_by_hand(self):
        """Test one implicit-friction update of p, theta and xi with a flat target"""
        model = LinearPotentialTarget([0.0, 0.0])
        cfg = SgnhtConfig(eps=0.1, n_leapfrog=1, A=0.5)
        state = PhaseState([0.0, 0.0], [1.0, 1.0], xi=1.0)
        new = dynamics.sgnht_epoch(state, model, SpdMatrix.identity(2), cfg,
                                   MinibatchSampler(0), np.random.default_rng(4))

        noise = math.sqrt(2 * 0.5 * 0.1) * np.random.default_rng(4).standard_normal(2)
        p = (np.array([1.0, 1.0]) + noise) / (1 + 0.1)
        npt.assert_allclose(new.p, p)
        npt.assert_allclose(new.theta, 0.1 * p)
        assert new.xi == pytest.approx(1.0 + 0.1 * (p @ p / 2 - 1.0))

    def test_missing_xi(self, target, m_inv):
        """Test that SGNHT without a thermostat raises ValueError"""
        with pytest.raises(ValueError):
            dynamics.sgnht_epoch(PhaseState([0.0, 0.0], [0.0, 0.0]), target, m_inv,
                                 SgnhtConfig(0.1, 1), MinibatchSampler(0),
                                 np.random.default_rng(0))

    def test_energy_adds_thermostat_term(self, target):
        """Test the thermostat and log-determinant terms of the SGNHT energy"""
        m_inv = SpdMatrix.diag([2.0, 2.0])
        cfg = SgnhtConfig(eps=0.1, n_leapfrog=1, A=1.0, mu_th=2.0)
        state = PhaseState([0.5, -1.0], [0.0, 0.0], xi=3.0)
        expected = -log_lik(target, state.theta) - 0.5 * math.log(4.0) + 0.5 * 2.0 * 4.0
        assert dynamics.sampler_energy(state, target, m_inv, cfg) == pytest.approx(expected)


class TestNosePoincare:
    """Test the Nose-Poincare energy and generalized leapfrog"""

    def test_energy_zero_at_reference(self, target, m_inv):
        """Test that H_NP vanishes at s = 1 when H0 is the starting energy"""
        state = PhaseState([1.0, 0.0], [0.4, 0.1], s=1.0, q=0.0)
        cfg = dynamics.resolve_np_config(NpConfig(eps=0.01, n_leapfrog=1), state, target, m_inv)
        assert cfg.g == 2.0
        assert dynamics.np_energy(state, target, m_inv, cfg) == pytest.approx(0.0, abs=1e-12)

    def test_energy_needs_h0(self, target, m_inv):
        """Test that an unresolved H0 raises ValueError"""
        state = PhaseState([1.0, 0.0], [0.4, 0.1], s=1.0, q=0.0)
        with pytest.raises(ValueError):
            dynamics.np_energy(state, target, m_inv, NpConfig(eps=0.01, n_leapfrog=1))

    def test_step_reduces_to_leapfrog(self, target, m_inv):
        """Test that with no noise and q chosen so s stays 1, one step is leapfrog"""
        eps = 0.1
        state = PhaseState([1.0, 0.0], [0.4, 0.1], s=1.0, q=0.0)
        cfg = NpConfig(eps=eps, n_leapfrog=1, A_noise=0.0, B_noise=0.0, H0=3.0)
        cfg = dynamics.resolve_np_config(cfg, state, target, m_inv)

        p_half = state.p + 0.5 * eps * target.grad_log_lik_rows(state.theta, None)
        c = 0.5 * eps * (-cfg.g * cfg.kT + dynamics.kinetic_energy(p_half, m_inv)
                         + log_lik(target, state.theta) + cfg.H0)
        state = state.replace(q=-c)

        stepped = dynamics.np_step(state, target, m_inv, cfg, None)
        leap, _ = dynamics.leapfrog_trajectory(state, target, m_inv, HmcConfig(eps, 1))
        assert stepped.s == pytest.approx(1.0, abs=1e-14)
        npt.assert_allclose(stepped.theta, leap.theta, atol=1e-14)
        npt.assert_allclose(stepped.p, leap.p, atol=1e-14)

    def test_energy_conserved_without_noise(self, target, m_inv):
        """Test that H_NP stays near zero along a noiseless trajectory"""
        state = PhaseState([1.0, 0.0], [0.4, 0.1], s=1.0, q=0.0)
        cfg = dynamics.resolve_np_config(
            NpConfig(eps=0.01, n_leapfrog=50, A_noise=0.0, B_noise=0.0), state, target, m_inv)
        end = dynamics.np_trajectory(state, target, m_inv, cfg, MinibatchSampler(0),
                                     np.random.default_rng(0))
        assert abs(dynamics.np_energy(end, target, m_inv, cfg)) < 1e-3
        assert end.s > 0

    def test_huge_step_blows_up(self, m_inv):
        """Test that an absurd step size raises ThermostatBlowup"""
        model = GaussianTarget([0.0, 0.0], np.eye(2))
        state = PhaseState([5.0, 5.0], [0.0, 0.0], s=1.0, q=0.0)
        cfg = dynamics.resolve_np_config(NpConfig(eps=100.0, n_leapfrog=1), state, model, m_inv)
        with pytest.raises(ThermostatBlowup):
            dynamics.np_step(state, model, m_inv, cfg, None)

    def test_epoch_refreshes_momenta_and_keeps_s_positive(self, target, m_inv):
        """Test that an epoch runs from a refreshed state and s stays positive"""
        state = PhaseState([1.0, 0.0], [0.0, 0.0], s=1.0, q=0.0)
        cfg = dynamics.resolve_np_config(NpConfig(eps=0.01, n_leapfrog=10), state, target, m_inv)
        a = dynamics.sgnphmc_epoch(state, target, m_inv, cfg, MinibatchSampler(0),
                                   np.random.default_rng(9))
        b = dynamics.sgnphmc_epoch(state, target, m_inv, cfg, MinibatchSampler(0),
                                   np.random.default_rng(9))
        npt.assert_array_equal(a.theta, b.theta)
        assert a.s > 0 and a.q is not None
        assert not np.array_equal(a.p, state.p)

    def test_refresh_resets_s_and_anchors_h0(self, target, m_inv):
        """Test that a refreshed epoch starts at s = 1 and H_NP = 0 whatever s was before"""
        state = PhaseState([1.0, 0.0], [0.0, 0.0], s=50.0, q=3.0)
        cfg = NpConfig(eps=0.01, n_leapfrog=10, A_noise=0.0, B_noise=0.0, H0=-40.0)
        end = dynamics.sgnphmc_epoch(state, target, m_inv, cfg, MinibatchSampler(0),
                                     np.random.default_rng(9))

        rng = np.random.default_rng(9)
        p = dynamics.resample_momentum(m_inv, rng)
        q = rng.standard_normal()
        refreshed = PhaseState(state.theta, p, s=1.0, q=q)
        expected_h0 = dynamics.gibbs_energy(refreshed, target, m_inv) + q * q / 2.0
        assert end.h0 == pytest.approx(expected_h0)
        assert 0.5 < end.s < 2.0
        assert abs(dynamics.np_energy(end, target, m_inv, cfg)) < 1e-3

    def test_configured_h0_without_refresh(self, target, m_inv):
        """Test that without refresh s carries over and the configured H0 is used"""
        state = PhaseState([1.0, 0.0], [0.4, 0.1], s=2.0, q=0.0)
        cfg = NpConfig(eps=0.01, n_leapfrog=1, H0=3.0, refresh_thermostat=False)
        end = dynamics.sgnphmc_epoch(state, target, m_inv, cfg, MinibatchSampler(0),
                                     np.random.default_rng(0))
        assert end.h0 is None
        assert end.s == pytest.approx(2.0, rel=0.05)
        assert dynamics.anchor_energy(end, cfg) == 3.0

    def test_s_stays_bounded_over_many_epochs(self):
        """Test that s remains near 1 over hundreds of minibatch epochs"""
        model = BayesLogisticModel(generate_mixture_lr_data(200, seed=4))
        m_inv = SpdMatrix.identity(2)
        cfg = NpConfig(eps=1e-3, n_leapfrog=10)
        batcher = MinibatchSampler(model.n, 20)
        rng = np.random.default_rng(5)
        state = PhaseState([0.0, 0.0], dynamics.resample_momentum(m_inv, rng), s=1.0, q=0.0)
        cfg = dynamics.resolve_np_config(cfg, state, model, m_inv)
        largest = 0.0
        for _ in range(300):
            state = dynamics.sgnphmc_epoch(state, model, m_inv, cfg, batcher, rng)
            largest = max(largest, state.s)
        assert largest < 10.0
