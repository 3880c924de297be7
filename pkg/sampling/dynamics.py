#!/usr/bin/env python3
"""
Energy functions and one-epoch transition kernels.

Kernels: HMC (Stormer-Verlet plus Metropolis-Hastings), SGHMC, SGNHT and the
stochastic Nose-Poincare sampler. Each receives the inverse mass m_inv as a
frozen snapshot and an explicit random stream; none keeps state between
calls. Sign convention: p' = +grad L(theta), i.e. ascent on the joint
log-likelihood, consistent with H = -L + p^T M^-1 p / 2.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from .errors import NonFiniteValue, ThermostatBlowup
from .models import (MinibatchSampler, TargetModel, grad_log_lik, log_lik,
                     stoch_grad_log_lik, stoch_log_lik)
from .spd_linalg import (SpdMatrix, log_det, quad_form,
                         sample_zero_mean_gaussian, spd_inverse)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhaseState:
    """
    Sampler state: position theta, momentum p and optional thermostats.

    xi is the SGNHT thermostat; (s, q) the Nose-Poincare control and its
    conjugate momentum. h0, when set, is the energy the current Nose-Poincare
    trajectory is anchored to and takes precedence over NpConfig.H0.
    """
    theta: np.ndarray
    p: np.ndarray
    xi: Optional[float] = None
    s: Optional[float] = None
    q: Optional[float] = None
    h0: Optional[float] = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        p = np.array(self.p, dtype=float).reshape(-1)
        if theta.shape != p.shape:
            raise ValueError(f"theta {theta.shape} and p {p.shape} differ in shape")
        if self.s is not None and not self.s > 0.0:
            raise ValueError(f"Thermostat s must be positive, got {self.s}")
        theta.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def replace(self, **changes) -> "PhaseState":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class HmcConfig:
    eps: float
    n_leapfrog: int

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"Step size must be positive, got {self.eps}")
        if self.n_leapfrog < 1:
            raise ValueError(f"Need at least one leapfrog step, got {self.n_leapfrog}")


@dataclass(frozen=True)
class SghmcConfig(HmcConfig):
    C: float = 10.0
    B_hat: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if not self.C >= self.B_hat >= 0.0:
            raise ValueError(f"Need C >= B_hat >= 0, got C={self.C}, B_hat={self.B_hat}")


@dataclass(frozen=True)
class SgnhtConfig(HmcConfig):
    A: float = 1.0
    mu_th: float = 1.0
    xi_bar: Optional[float] = None

    def __post_init__(self):
        super().__post_init__()
        if not self.A > 0:
            raise ValueError(f"Diffusion constant A must be positive, got {self.A}")

    @property
    def xi_center(self) -> float:
        return self.A if self.xi_bar is None else self.xi_bar


@dataclass(frozen=True)
class NpConfig(HmcConfig):
    """
    Nose-Poincare constants. g defaults to the parameter dimension and H0 to
    the energy of the first state (see resolve_np_config).
    """
    Q: float = 1.0
    g: Optional[float] = None
    kT: float = 1.0
    H0: Optional[float] = None
    A_noise: float = 0.01
    B_noise: float = 0.01
    refresh_thermostat: bool = True

    def __post_init__(self):
        super().__post_init__()
        if not self.Q > 0:
            raise ValueError(f"Thermostat mass Q must be positive, got {self.Q}")
        if not self.kT > 0:
            raise ValueError(f"kT must be positive, got {self.kT}")
        if self.A_noise < 0 or self.B_noise < 0:
            raise ValueError("Noise constants must be nonnegative")


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NonFiniteValue(f"{what} is not finite")
    return value


def kinetic_energy(p: np.ndarray, m_inv: SpdMatrix) -> float:
    return 0.5 * quad_form(m_inv, p)


def gibbs_energy(state: PhaseState, model: TargetModel, m_inv: SpdMatrix) -> float:
    """H(theta, p) = -L(theta) + p^T M_I p / 2."""
    return _finite(-log_lik(model, state.theta) + kinetic_energy(state.p, m_inv),
                   "Gibbs energy")


def _leapfrog(theta: np.ndarray, p: np.ndarray, grad: np.ndarray, model: TargetModel,
              m_inv: SpdMatrix, eps: float, n_steps: int):
    for _ in range(n_steps):
        p = p + 0.5 * eps * grad
        theta = theta + eps * m_inv.matvec(p)
        grad = grad_log_lik(model, theta)
        p = p + 0.5 * eps * grad
    return theta, p, grad


def leapfrog_trajectory(state: PhaseState, model: TargetModel, m_inv: SpdMatrix,
                        cfg: HmcConfig, n_steps: Optional[int] = None
                        ) -> Tuple[PhaseState, float]:
    """
    Run Stormer-Verlet steps and return the end state and H(end) - H(start).

    Each step: p += (eps/2) grad L, theta += eps M_I p, p += (eps/2) grad L.
    n_steps overrides cfg.n_leapfrog (zero steps is allowed here).
    """
    steps = cfg.n_leapfrog if n_steps is None else n_steps
    h_start = gibbs_energy(state, model, m_inv)
    theta, p, _ = _leapfrog(state.theta, state.p, grad_log_lik(model, state.theta),
                            model, m_inv, cfg.eps, steps)
    end = state.replace(theta=theta, p=p)
    return end, gibbs_energy(end, model, m_inv) - h_start


def mh_accept(delta_h: float, rng: np.random.Generator) -> bool:
    """Accept with probability min(1, exp(-delta_h)); always consumes one uniform."""
    u = rng.random()
    if delta_h <= 0.0:
        return True
    return math.log(u) < -delta_h if u > 0.0 else True


def resample_momentum(m_inv: SpdMatrix, rng: np.random.Generator) -> np.ndarray:
    """p ~ N(0, M) with M = M_I^-1."""
    return sample_zero_mean_gaussian(spd_inverse(m_inv), rng)


def hmc_em_epoch(state: PhaseState, model: TargetModel, m_inv: SpdMatrix,
                 cfg: HmcConfig, rng: np.random.Generator) -> Tuple[PhaseState, bool]:
    """
    One HMC epoch: fresh momentum, a leapfrog trajectory, an MH decision.

    On rejection theta is kept together with the freshly drawn momentum.
    Returns the new state and whether the proposal was accepted.
    """
    start = state.replace(p=resample_momentum(m_inv, rng))
    proposal, delta_h = leapfrog_trajectory(start, model, m_inv, cfg)
    accepted = mh_accept(delta_h, rng)
    logger.debug(f"HMC epoch dH={delta_h:.3e} accepted={accepted}")
    return (proposal if accepted else start), accepted


def friction_update(p: np.ndarray, m_inv: SpdMatrix, friction: float, eps: float,
                    drive: np.ndarray) -> np.ndarray:
    """
    Momentum update with friction against M_I p.

    A positive friction is taken implicitly, (I + eps friction M_I) p' = p + drive.
    Zero or negative friction uses the explicit form p - eps friction M_I p + drive.
    """
    if friction <= 0.0:
        return p - eps * friction * m_inv.matvec(p) + drive
    system = np.eye(p.shape[0]) + eps * friction * m_inv.entries
    return linalg.solve(system, p + drive, assume_a="pos")


def sghmc_epoch(state: PhaseState, model: TargetModel, m_inv: SpdMatrix,
                cfg: SghmcConfig, batcher: MinibatchSampler,
                rng: np.random.Generator) -> PhaseState:
    """
    One SGHMC epoch: fresh momentum, then n_leapfrog friction/noise updates

        p <- p - eps C M_I p + eps grad~L(theta) + N(0, 2 (C - B_hat) eps)
        theta <- theta + eps M_I p

    with a fresh minibatch per update and no MH correction. The friction
    term is applied implicitly (see friction_update).
    """
    p = resample_momentum(m_inv, rng)
    theta = state.theta
    noise_scale = math.sqrt(2.0 * (cfg.C - cfg.B_hat) * cfg.eps)
    for _ in range(cfg.n_leapfrog):
        grad = stoch_grad_log_lik(model, theta, batcher.draw(rng))
        noise = noise_scale * rng.standard_normal(theta.shape[0])
        p = friction_update(p, m_inv, cfg.C, cfg.eps, cfg.eps * grad + noise)
        theta = theta + cfg.eps * m_inv.matvec(p)
    return state.replace(theta=theta, p=p)


def thermostat_update(xi: float, p: np.ndarray, m_inv: SpdMatrix, eps: float) -> float:
    """xi + eps * (p^T M_I p / D - 1)."""
    return xi + eps * (quad_form(m_inv, p) / p.shape[0] - 1.0)


def sgnht_epoch(state: PhaseState, model: TargetModel, m_inv: SpdMatrix,
                cfg: SgnhtConfig, batcher: MinibatchSampler,
                rng: np.random.Generator) -> PhaseState:
    """
    One SGNHT epoch of n_leapfrog updates; momentum carries over.

        p <- p - eps xi M_I p + eps grad~L(theta) + sqrt(2A) N(0, eps)
        theta <- theta + eps M_I p
        xi <- xi + eps (p^T M_I p / D - 1)

    For xi > 0 the friction term is applied implicitly (see friction_update).
    """
    if state.xi is None:
        raise ValueError("SGNHT needs the thermostat xi in the state")
    theta, p, xi = state.theta, state.p, state.xi
    noise_scale = math.sqrt(2.0 * cfg.A * cfg.eps)
    for _ in range(cfg.n_leapfrog):
        grad = stoch_grad_log_lik(model, theta, batcher.draw(rng))
        noise = noise_scale * rng.standard_normal(theta.shape[0])
        p = friction_update(p, m_inv, xi, cfg.eps, cfg.eps * grad + noise)
        theta = theta + cfg.eps * m_inv.matvec(p)
        xi = thermostat_update(xi, p, m_inv, cfg.eps)
    return state.replace(theta=theta, p=p, xi=float(xi))


def sgnht_energy(state: PhaseState, model: TargetModel, m_inv: SpdMatrix,
                 cfg: SgnhtConfig) -> float:
    """-L + p^T M_I p / 2 - log|M_I| / 2 + mu_th (xi - xi_bar)^2 / 2, for diagnostics."""
    if state.xi is None:
        raise ValueError("SGNHT energy needs the thermostat xi in the state")
    value = gibbs_energy(state, model, m_inv) - 0.5 * log_det(m_inv) \
        + 0.5 * cfg.mu_th * (state.xi - cfg.xi_center) ** 2
    return _finite(value, "SGNHT energy")


def resolve_np_config(cfg: NpConfig, state: PhaseState, model: TargetModel,
                      m_inv: SpdMatrix) -> NpConfig:
    """Fill in g = D and H0 = -L + p^T M_I p / 2 + q^2 / 2Q from the given state."""
    changes = {}
    if cfg.g is None:
        changes["g"] = float(state.dim)
    if cfg.H0 is None:
        q = 0.0 if state.q is None else state.q
        changes["H0"] = gibbs_energy(state, model, m_inv) + q * q / (2.0 * cfg.Q)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def anchor_energy(state: PhaseState, cfg: NpConfig) -> float:
    """H0 of the trajectory: the state's own anchor, else the configured one."""
    h0 = cfg.H0 if state.h0 is None else state.h0
    if h0 is None:
        raise ValueError("H0 is unset; call resolve_np_config first")
    return h0


def np_energy(state: PhaseState, model: TargetModel, m_inv: SpdMatrix,
              cfg: NpConfig) -> float:
    """H_NP = s [-L + (p/s)^T M_I (p/s) / 2 + q^2 / 2Q + g kT log s - H0]."""
    if state.s is None or state.q is None:
        raise ValueError("Nose-Poincare energy needs s and q in the state")
    h0 = anchor_energy(state, cfg)
    s, q = state.s, state.q
    g = float(state.dim) if cfg.g is None else cfg.g
    inner = -log_lik(model, state.theta) + kinetic_energy(state.p / s, m_inv) \
        + q * q / (2.0 * cfg.Q) + g * cfg.kT * math.log(s) - h0
    return _finite(s * inner, "Nose-Poincare energy")


def sampler_energy(state: PhaseState, model: TargetModel, m_inv: SpdMatrix,
                   cfg: HmcConfig) -> float:
    """Energy matching the kernel the config belongs to."""
    if isinstance(cfg, NpConfig):
        return np_energy(state, model, m_inv, cfg)
    if isinstance(cfg, SgnhtConfig):
        return sgnht_energy(state, model, m_inv, cfg)
    return gibbs_energy(state, model, m_inv)


def _blowup(message: str, **details) -> ThermostatBlowup:
    return ThermostatBlowup(f"{message}; the step size is likely too large", details=details)


def np_step(state: PhaseState, model: TargetModel, m_inv: SpdMatrix, cfg: NpConfig,
            batch) -> PhaseState:
    """
    One generalized leapfrog step of the stochastic Nose-Poincare dynamics.

    The implicit momentum half-step is linear and the implicit thermostat
    half-step quadratic; both are solved in closed form. The same minibatch
    supplies grad~L and L~ at the start and end positions.

    Raises:
        ThermostatBlowup: if the quadratic has no real root on the continuous
            branch or s would leave (0, inf)
    """
    eps, big_q, kt = cfg.eps, cfg.Q, cfg.kT
    g = float(state.dim) if cfg.g is None else cfg.g
    h0 = anchor_energy(state, cfg)
    theta, p, s, q = state.theta, state.p, state.s, state.q

    lik0 = stoch_log_lik(model, theta, batch)
    grad0 = stoch_grad_log_lik(model, theta, batch)

    rhs = p + 0.5 * eps * s * grad0
    if cfg.B_noise > 0.0:
        system = np.eye(state.dim) + (eps * cfg.B_noise / (2.0 * math.sqrt(s))) * m_inv.entries
        p_half = linalg.solve(system, rhs, assume_a="pos")
    else:
        p_half = rhs

    c = q + 0.5 * eps * (-g * kt * (1.0 + math.log(s)) + kinetic_energy(p_half / s, m_inv)
                         + lik0 + h0)
    beta = 1.0 + cfg.A_noise * s * eps / (2.0 * big_q)
    disc = beta * beta + (eps / big_q) * c
    if not disc >= 0.0:
        raise _blowup("Negative discriminant in thermostat half-step", discriminant=disc)
    denom = beta + math.sqrt(disc)
    if not denom > 0.0:
        raise _blowup("Degenerate thermostat half-step", denominator=denom)
    q_half = 2.0 * c / denom

    ratio = eps * q_half / (2.0 * big_q)
    if not ratio < 1.0:
        raise _blowup("Thermostat update leaves s > 0", ratio=ratio)
    s_next = s * (1.0 + ratio) / (1.0 - ratio)
    if not (s_next > 0.0 and math.isfinite(s_next)):
        raise _blowup("Thermostat s left (0, inf)", s=s_next)

    theta_next = theta + 0.5 * eps * m_inv.matvec(p_half) * (1.0 / s + 1.0 / s_next)

    lik1 = stoch_log_lik(model, theta_next, batch)
    grad1 = stoch_grad_log_lik(model, theta_next, batch)
    p_next = p_half + 0.5 * eps * (s_next * grad1
                                   - (cfg.B_noise / math.sqrt(s_next)) * m_inv.matvec(p_half))
    q_next = q_half + 0.5 * eps * (h0 + lik1 - g * kt * (1.0 + math.log(s_next))
                                   + kinetic_energy(p_half / s_next, m_inv)
                                   - cfg.A_noise * s_next * q_half / big_q
                                   - q_half * q_half / (2.0 * big_q))
    if not math.isfinite(q_next):
        raise NonFiniteValue("Thermostat momentum is not finite")
    return state.replace(theta=theta_next, p=p_next, s=float(s_next), q=float(q_next))


def np_trajectory(state: PhaseState, model: TargetModel, m_inv: SpdMatrix, cfg: NpConfig,
                  batcher: MinibatchSampler, rng: np.random.Generator,
                  n_steps: Optional[int] = None) -> PhaseState:
    """Run generalized leapfrog steps, one fresh minibatch per step."""
    if state.s is None or state.q is None:
        raise ValueError("Nose-Poincare dynamics need s and q in the state")
    if cfg.g is None or (cfg.H0 is None and state.h0 is None):
        cfg = resolve_np_config(cfg, state, model, m_inv)
    steps = cfg.n_leapfrog if n_steps is None else n_steps
    for _ in range(steps):
        state = np_step(state, model, m_inv, cfg, batcher.draw(rng))
    return state


def sgnphmc_epoch(state: PhaseState, model: TargetModel, m_inv: SpdMatrix, cfg: NpConfig,
                  batcher: MinibatchSampler, rng: np.random.Generator) -> PhaseState:
    """
    One SG-NPHMC epoch: optional refresh, then n_leapfrog generalized leapfrog
    steps.

    The refresh draws p ~ N(0, M) and q ~ N(0, Q), resets s to 1 and anchors
    the trajectory at H0 = -L + p^T M_I p / 2 + q^2 / 2Q of the refreshed
    state, so every epoch starts at H_NP = 0. Without refresh, s, q and the
    anchor carry over.
    """
    if cfg.refresh_thermostat:
        p = resample_momentum(m_inv, rng)
        q = float(math.sqrt(cfg.Q) * rng.standard_normal())
        state = state.replace(p=p, q=q, s=1.0)
        state = state.replace(h0=gibbs_energy(state, model, m_inv) + q * q / (2.0 * cfg.Q))
    return np_trajectory(state, model, m_inv, cfg, batcher, rng)
