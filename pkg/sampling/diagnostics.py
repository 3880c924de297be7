#!/usr/bin/env python3
"""
Experiment metrics and numerical verification of the kernels.

Metrics work on traces (RMSE, posterior-mean error, acceptance rate,
per-epoch time). The checks return a single number each, so the CLI can
compare it against a threshold and report pass or fail.
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np

from .dynamics import (HmcConfig, NpConfig, PhaseState, leapfrog_trajectory,
                       np_energy, np_step, resample_momentum, resolve_np_config)
from .errors import EmptyTrace
from .mcem import MassState, m_step
from .models import TargetModel, grad_log_lik, log_lik
from .spd_linalg import SpdMatrix, sample_zero_mean_gaussian
from .trace import Trace, TraceRecord

logger = logging.getLogger(__name__)

# Below this mean |dH| the integrator is exact and the scaling ratio undefined
ZERO_ENERGY_ERROR = 1e-12

__all__ = [
    "Trace", "TraceRecord", "rmse", "posterior_mean_error", "acceptance_rate",
    "mean_epoch_ms", "finite_diff_grad_check", "reversibility_check",
    "energy_scaling_check", "mass_convergence_check", "np_energy_drift",
]


def _sample_matrix(samples: Sequence) -> np.ndarray:
    data = np.asarray(samples, dtype=float)
    if data.size == 0:
        raise EmptyTrace("No samples to summarize")
    if data.ndim == 1:
        data = data[:, np.newaxis]
    return data


def rmse(samples: Sequence, truth: Sequence[float]) -> np.ndarray:
    """Per-coordinate sqrt(mean((theta_i - truth_i)^2)) over the samples."""
    data = _sample_matrix(samples)
    return np.sqrt(np.mean((data - np.asarray(truth, dtype=float)) ** 2, axis=0))


def posterior_mean_error(samples: Sequence, truth: Sequence[float]) -> np.ndarray:
    """|mean(theta_i) - truth_i| per coordinate."""
    data = _sample_matrix(samples)
    return np.abs(data.mean(axis=0) - np.asarray(truth, dtype=float))


def acceptance_rate(trace: Trace) -> Optional[float]:
    """Fraction of accepted MH proposals, None for kernels without an MH step."""
    flags = [r.accepted for r in trace.records if r.accepted is not None]
    if not flags:
        return None
    return sum(flags) / len(flags)


def mean_epoch_ms(trace: Trace) -> float:
    if not trace.records:
        raise EmptyTrace("Trace has no epochs")
    return float(np.mean([r.epoch_ms for r in trace.records]))


def finite_diff_grad_check(model: TargetModel, theta: Sequence[float], h: float = 1e-5) -> float:
    """
    Worst coordinate of |central difference - analytic gradient|, relative
    to max(|gradient|, 1).
    """
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    theta = np.asarray(theta, dtype=float)
    analytic = grad_log_lik(model, theta)
    worst = 0.0
    for i in range(theta.shape[0]):
        step = np.zeros_like(theta)
        step[i] = h
        numeric = (log_lik(model, theta + step) - log_lik(model, theta - step)) / (2.0 * h)
        error = abs(numeric - analytic[i]) / max(abs(analytic[i]), 1.0)
        worst = max(worst, error)
    return worst


def reversibility_check(model: TargetModel, m_inv: SpdMatrix, cfg: HmcConfig,
                        state: PhaseState, n_steps: Optional[int] = None) -> float:
    """Run forward, negate p, run forward again; return the sup-norm theta error."""
    steps = cfg.n_leapfrog if n_steps is None else n_steps
    if steps == 0:
        return 0.0
    forward, _ = leapfrog_trajectory(state, model, m_inv, cfg, steps)
    back, _ = leapfrog_trajectory(forward.replace(p=-forward.p), model, m_inv, cfg, steps)
    return float(np.max(np.abs(back.theta - state.theta)))


def energy_scaling_check(model: TargetModel, m_inv: SpdMatrix, eps: float, n_leapfrog: int,
                         trials: int, rng: np.random.Generator) -> float:
    """
    Mean |dH| at eps over mean |dH| at eps/2, about 4 for a second-order
    integrator. Both runs cover the same integration time from the same
    random starts. NaN when the finer run has no energy error at all.
    """
    if trials < 10:
        raise ValueError(f"Need at least 10 trials, got {trials}")
    coarse = HmcConfig(eps, n_leapfrog)
    fine = HmcConfig(eps / 2.0, 2 * n_leapfrog)
    center = np.zeros(model.dim) if model.truth is None or model.truth.shape != (model.dim,) \
        else model.truth
    errors_coarse, errors_fine = [], []
    for _ in range(trials):
        theta = center + rng.standard_normal(model.dim)
        start = PhaseState(theta, resample_momentum(m_inv, rng))
        errors_coarse.append(abs(leapfrog_trajectory(start, model, m_inv, coarse)[1]))
        errors_fine.append(abs(leapfrog_trajectory(start, model, m_inv, fine)[1]))

    denominator = float(np.mean(errors_fine))
    if denominator < ZERO_ENERGY_ERROR:
        return math.nan
    return float(np.mean(errors_coarse)) / denominator


def mass_convergence_check(sigma: Sequence, batch_size: int, steps: int,
                           rng: np.random.Generator, ridge: Optional[float] = None) -> float:
    """
    Feed i.i.d. N(0, sigma) momentum batches through ``steps`` M-steps with the
    harmonic schedule; return ||M_I - sigma^-1||_F / ||sigma^-1||_F.
    """
    cov = SpdMatrix(sigma)
    mass = MassState(SpdMatrix.identity(cov.dim))
    for _ in range(steps):
        batch = [sample_zero_mean_gaussian(cov, rng) for _ in range(batch_size)]
        mass = m_step(mass, batch, ridge)
    target = np.linalg.inv(cov.entries)
    return float(np.linalg.norm(mass.m_inv.entries - target) / np.linalg.norm(target))


def np_energy_drift(model: TargetModel, m_inv: SpdMatrix, cfg: NpConfig,
                    state: PhaseState, n_steps: int) -> float:
    """max |H_NP(t) - H_NP(0)| over n_steps full-data generalized leapfrog steps."""
    cfg = resolve_np_config(cfg, state, model, m_inv)
    h_start = np_energy(state, model, m_inv, cfg)
    drift = 0.0
    for _ in range(n_steps):
        state = np_step(state, model, m_inv, cfg, None)
        drift = max(drift, abs(np_energy(state, model, m_inv, cfg) - h_start))
    return drift
