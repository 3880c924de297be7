#!/usr/bin/env python3
"""
Monte Carlo EM around the sampler kernels.

The E-step is a window of S_count sampler epochs run with a frozen inverse
mass; the final momentum of each epoch is buffered. The M-step blends the
inverse of the buffered momenta's empirical covariance into M_I with a
Robbins-Monro step kappa(k). Test-function values taken at random offsets
inside each window give a confidence interval; when the test function of
the post-M-step state falls inside it, S_count grows.
"""

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from .dynamics import (HmcConfig, NpConfig, PhaseState, SghmcConfig, SgnhtConfig,
                       hmc_em_epoch, resample_momentum, resolve_np_config,
                       sampler_energy, sghmc_epoch, sgnht_epoch,
                       sgnphmc_epoch)
from .errors import InsufficientSamples, SamplerDivergence
from .models import MinibatchSampler, TargetModel, grad_log_lik
from .spd_linalg import (SpdMatrix, blend, clip_condition, empirical_covariance,
                         spd_inverse)
from .trace import Trace, TraceRecord

logger = logging.getLogger(__name__)

OFFSET_POLICIES = ("poisson", "stride")

Interval = Tuple[np.ndarray, np.ndarray]


class SamplerKind(Enum):
    HMC = "hmc"
    HMC_EM = "hmc-em"
    SGHMC = "sghmc"
    SGHMC_EM = "sghmc-em"
    SGNHT = "sgnht"
    SGNHT_EM = "sgnht-em"
    SG_NPHMC = "sg-nphmc"
    SG_NPHMC_EM = "sg-nphmc-em"

    @property
    def adaptive(self) -> bool:
        return self.value.endswith("-em")

    @property
    def base(self) -> "SamplerKind":
        return SamplerKind(self.value[:-3]) if self.adaptive else self

    @property
    def stochastic(self) -> bool:
        return self.base is not SamplerKind.HMC

    @classmethod
    def parse(cls, value: Union[str, "SamplerKind"]) -> "SamplerKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"Unknown sampler kind '{value}' (choose from {choices})")


@dataclass(frozen=True)
class McemConfig:
    """
    E/M-step constants. ``s_count`` None means no M-steps at all, which
    turns an -EM kind back into its base sampler.
    """
    s_count: Optional[int] = None
    S_I: int = 10
    nu: float = 1.0
    d: float = 2.0
    alpha: float = 0.05
    kappa_c: float = 1.0
    kappa_t0: float = 0.0
    ridge: Optional[float] = None
    offset_policy: str = "poisson"
    offset_stride: int = 10
    min_increment: int = 1
    max_condition: Optional[float] = 100.0

    def __post_init__(self):
        if self.s_count is not None and self.s_count < 1:
            raise ValueError(f"s_count must be at least 1, got {self.s_count}")
        if self.S_I < 1:
            raise ValueError(f"S_I must be at least 1, got {self.S_I}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.nu < 1 or self.d <= 0:
            raise ValueError("Poisson offsets need nu >= 1 and d > 0")
        if self.kappa_c <= 0 or self.kappa_t0 < 0 or self.kappa_c > 1 + self.kappa_t0:
            raise ValueError("kappa schedule needs 0 < kappa_c <= 1 + kappa_t0")
        if self.offset_policy not in OFFSET_POLICIES:
            raise ValueError(f"Unknown offset policy '{self.offset_policy}'")
        if self.offset_stride < 1:
            raise ValueError("offset_stride must be at least 1")
        if self.min_increment < 0:
            raise ValueError("min_increment must be nonnegative")
        if self.max_condition is not None and self.max_condition < 1.0:
            raise ValueError(f"max_condition must be at least 1, got {self.max_condition}")


@dataclass(frozen=True)
class MassState:
    m_inv: SpdMatrix
    k: int = 0
    kappa_c: float = 1.0
    kappa_t0: float = 0.0
    q_inv: Optional[float] = None


@dataclass
class SampleSizeState:
    """E-step sample count S (None for infinity) and the interval controlling it."""
    S: Optional[int]
    S_I: int = 10
    nu: float = 1.0
    d: float = 2.0
    alpha: float = 0.05
    min_increment: int = 1
    buffer: List[np.ndarray] = field(default_factory=list)
    last_interval: Optional[Interval] = None


def kappa(k: int, kappa_c: float = 1.0, kappa_t0: float = 0.0) -> float:
    """Step kappa_c / (k + kappa_t0) for the k-th M-step (k >= 1)."""
    if k < 1:
        raise ValueError(f"M-step index starts at 1, got {k}")
    return min(1.0, kappa_c / (k + kappa_t0))


def m_step(mass: MassState, buffer: Sequence, ridge: Optional[float] = None,
           q_buffer: Optional[Sequence[float]] = None,
           max_condition: Optional[float] = None) -> MassState:
    """
    Blend the inverse empirical covariance of the buffered momenta into M_I.

    With max_condition set, both the covariance estimate and the blended
    M_I have their condition number clipped to it.

    With a q_buffer the scalar thermostat inverse mass is blended with the
    same step toward 1 / (var(q) + ridge).

    Raises:
        InsufficientSamples: for fewer than two buffered momenta
        NotPositiveDefinite: if the estimate or the blend cannot be factored
    """
    if len(buffer) == 0:
        raise InsufficientSamples("M-step called with an empty buffer")
    k = mass.k + 1
    step = kappa(k, mass.kappa_c, mass.kappa_t0)
    covariance = clip_condition(empirical_covariance(buffer, ridge), max_condition)
    m_inv = clip_condition(blend(mass.m_inv, spd_inverse(covariance), step), max_condition)

    q_inv = mass.q_inv
    if q_buffer is not None and q_inv is not None:
        q = np.asarray(q_buffer, dtype=float)
        q_ridge = 1e-6 if ridge is None else ridge
        q_estimate = 1.0 / (float(np.mean(q * q)) + q_ridge)
        q_inv = (1.0 - step) * q_inv + step * q_estimate

    logger.info(f"M-step k={k}, kappa={step:.4g}, samples={len(buffer)}")
    return dataclasses.replace(mass, m_inv=m_inv, k=k, q_inv=q_inv)


def poisson_offsets(S: int, nu: float, d: float, rng: np.random.Generator) -> np.ndarray:
    """
    S increasing offsets t_s = x_1 + ... + x_s with x_i - 1 ~ Poisson(nu * i^d).
    """
    if S < 1:
        raise ValueError(f"S must be at least 1, got {S}")
    if nu < 1 or d <= 0:
        raise ValueError("Poisson offsets need nu >= 1 and d > 0")
    i = np.arange(1, S + 1, dtype=float)
    gaps = 1 + rng.poisson(nu * i ** d)
    return np.cumsum(gaps)


def test_function(kind: SamplerKind, state: PhaseState, model: TargetModel,
                  m_inv: SpdMatrix) -> np.ndarray:
    """
    Convergence statistic of the E-step chain, using the full-data gradient.

    HMC and SGHMC: [M_I p, grad L]. SGNHT: [M_I p, grad L + xi M_I p, p^T M_I p].
    SG-NPHMC: [M_I p / s, grad L].
    """
    base = SamplerKind.parse(kind).base
    grad = grad_log_lik(model, state.theta)
    if base is SamplerKind.SGNHT:
        if state.xi is None:
            raise ValueError("SGNHT test function needs xi")
        drift = m_inv.matvec(state.p)
        return np.concatenate([drift, grad + state.xi * drift, [float(state.p @ drift)]])
    if base is SamplerKind.SG_NPHMC:
        if state.s is None:
            raise ValueError("Nose-Poincare test function needs s")
        return np.concatenate([m_inv.matvec(state.p / state.s), grad])
    return np.concatenate([m_inv.matvec(state.p), grad])


def confidence_interval(values: Sequence[np.ndarray], alpha: float) -> Interval:
    """
    Componentwise m_S -/+ z v_S with v_S the plain (biased) sample variance
    and z the standard normal quantile at 1 - alpha/2.
    """
    if len(values) < 2:
        raise InsufficientSamples(
            "Confidence interval needs at least two test-function values",
            details={"n": len(values)}
        )
    q = np.vstack([np.atleast_1d(np.asarray(v, dtype=float)) for v in values])
    mean = q.mean(axis=0)
    var = np.maximum((q * q).mean(axis=0) - mean * mean, 0.0)
    z = norm.ppf(1.0 - alpha / 2.0)
    return mean - z * var, mean + z * var


def maybe_grow_S(sizes: SampleSizeState, q_new: np.ndarray) -> SampleSizeState:
    """Grow S by max(floor(S / S_I), min_increment) if q_new lies inside the interval."""
    if sizes.last_interval is None or sizes.S is None:
        return sizes
    lo, hi = sizes.last_interval
    q_new = np.asarray(q_new, dtype=float)
    if not np.all((lo <= q_new) & (q_new <= hi)):
        logger.debug("Test function outside interval; S unchanged")
        return sizes
    grown = sizes.S + max(sizes.S // sizes.S_I, sizes.min_increment)
    if grown != sizes.S:
        logger.info(f"S_count {sizes.S} -> {grown}")
    return dataclasses.replace(sizes, S=grown)


class McemController:
    """
    Per-chain E/M-step bookkeeping: momentum buffer, window offsets,
    test-function values and the current mass.
    """

    def __init__(self, kind: SamplerKind, dim: int, cfg: McemConfig,
                 Q: Optional[float] = None):
        self.kind = SamplerKind.parse(kind)
        self.cfg = cfg
        np_kind = self.kind.base is SamplerKind.SG_NPHMC
        self.mass = MassState(
            SpdMatrix.identity(dim), kappa_c=cfg.kappa_c, kappa_t0=cfg.kappa_t0,
            q_inv=(1.0 / Q if np_kind and Q is not None else None)
        )
        s_count = cfg.s_count if self.kind.adaptive else None
        self.sizes = SampleSizeState(
            S=s_count, S_I=cfg.S_I, nu=cfg.nu, d=cfg.d, alpha=cfg.alpha,
            min_increment=cfg.min_increment
        )
        self.q_buffer: List[float] = []
        self.values: List[np.ndarray] = []
        self.offsets: set = set()
        self._window_open = False

    @property
    def active(self) -> bool:
        return self.sizes.S is not None

    @property
    def m_inv(self) -> SpdMatrix:
        return self.mass.m_inv

    @property
    def Q(self) -> Optional[float]:
        return None if self.mass.q_inv is None else 1.0 / self.mass.q_inv

    def _open_window(self, rng: np.random.Generator):
        S = self.sizes.S
        if self.cfg.offset_policy == "stride":
            self.offsets = set(range(self.cfg.offset_stride, S + 1, self.cfg.offset_stride))
        else:
            drawn = poisson_offsets(S, self.cfg.nu, self.cfg.d, rng)
            self.offsets = {int(t) for t in drawn if t <= S}
        self._window_open = True

    def observe(self, state: PhaseState, model: TargetModel,
                rng: np.random.Generator) -> bool:
        """
        Consume the state at the end of one epoch; returns True when an
        M-step ran.
        """
        if not self.active:
            return False
        if not self._window_open:
            self._open_window(rng)

        p = state.p
        if self.kind.base is SamplerKind.SG_NPHMC:
            p = p / state.s
            self.q_buffer.append(float(state.q))
        self.sizes.buffer.append(np.array(p))
        position = len(self.sizes.buffer)
        if position in self.offsets:
            self.values.append(test_function(self.kind, state, model, self.m_inv))

        if position < self.sizes.S:
            return False

        self.mass = m_step(self.mass, self.sizes.buffer, self.cfg.ridge,
                           self.q_buffer if self.mass.q_inv is not None else None,
                           self.cfg.max_condition)
        if len(self.values) >= 2:
            interval = confidence_interval(self.values, self.sizes.alpha)
            logger.debug(f"Interval lo={interval[0]} hi={interval[1]}")
        else:
            interval = None
        self.sizes = dataclasses.replace(self.sizes, buffer=[], last_interval=interval)
        self.sizes = maybe_grow_S(self.sizes, test_function(self.kind, state, model, self.m_inv))
        self.q_buffer = []
        self.values = []
        self._window_open = False
        return True


KernelConfig = Union[HmcConfig, SghmcConfig, SgnhtConfig, NpConfig]


def initial_state(kind: SamplerKind, theta0: Sequence[float], m_inv: SpdMatrix,
                  kernel_cfg: KernelConfig, rng: np.random.Generator) -> PhaseState:
    """
    Starting state: theta0 with zero momentum for HMC and SGHMC (both
    redraw p every epoch), p ~ N(0, M) with xi = A for SGNHT, and p ~ N(0, M)
    with s = 1, q = 0 for SG-NPHMC.
    """
    kind = SamplerKind.parse(kind)
    theta0 = np.asarray(theta0, dtype=float)
    if kind.base is SamplerKind.SGNHT:
        return PhaseState(theta0, resample_momentum(m_inv, rng), xi=kernel_cfg.A)
    if kind.base is SamplerKind.SG_NPHMC:
        return PhaseState(theta0, resample_momentum(m_inv, rng), s=1.0, q=0.0)
    return PhaseState(theta0, np.zeros_like(theta0))


def _check_config(kind: SamplerKind, cfg: KernelConfig):
    expected = {
        SamplerKind.HMC: HmcConfig,
        SamplerKind.SGHMC: SghmcConfig,
        SamplerKind.SGNHT: SgnhtConfig,
        SamplerKind.SG_NPHMC: NpConfig,
    }[kind.base]
    if not isinstance(cfg, expected):
        raise TypeError(f"{kind.value} needs a {expected.__name__}, got {type(cfg).__name__}")


def mcem_loop(kind: Union[str, SamplerKind], model: TargetModel, state: PhaseState,
              kernel_cfg: KernelConfig, mcem_cfg: McemConfig, epochs: int,
              rng: np.random.Generator, batcher: Optional[MinibatchSampler] = None) -> Trace:
    """
    Run ``epochs`` sampler epochs with MCEM mass adaptation for -EM kinds.

    Divergence (non-finite values, thermostat blowup) is recorded in the
    trace with its epoch and ends the run; it is not re-raised.
    """
    kind = SamplerKind.parse(kind)
    _check_config(kind, kernel_cfg)
    if epochs < 0:
        raise ValueError(f"epochs must be nonnegative, got {epochs}")
    if batcher is None:
        batcher = MinibatchSampler(model.n)

    controller = McemController(kind, state.dim, mcem_cfg,
                                Q=getattr(kernel_cfg, "Q", None))
    trace = Trace(kind.value, model.reported_names())
    base = kind.base
    if base is SamplerKind.SG_NPHMC:
        kernel_cfg = resolve_np_config(kernel_cfg, state, model, controller.m_inv)

    logger.info(f"Running {kind.value} for {epochs} epochs "
                f"(S_count={controller.sizes.S}, eps={kernel_cfg.eps}, LP_S={kernel_cfg.n_leapfrog})")
    for epoch in range(epochs):
        start = time.perf_counter()
        accepted = None
        m_inv = controller.m_inv
        try:
            if base is SamplerKind.HMC:
                state, accepted = hmc_em_epoch(state, model, m_inv, kernel_cfg, rng)
            elif base is SamplerKind.SGHMC:
                state = sghmc_epoch(state, model, m_inv, kernel_cfg, batcher, rng)
            elif base is SamplerKind.SGNHT:
                state = sgnht_epoch(state, model, m_inv, kernel_cfg, batcher, rng)
            else:
                state = sgnphmc_epoch(state, model, m_inv, kernel_cfg, batcher, rng)
            energy = sampler_energy(state, model, m_inv, kernel_cfg)
            if controller.observe(state, model, rng):
                trace.m_steps += 1
                if base is SamplerKind.SG_NPHMC and controller.Q is not None:
                    kernel_cfg = dataclasses.replace(kernel_cfg, Q=controller.Q)
        except SamplerDivergence as e:
            e.epoch = epoch
            logger.warning(f"{kind.value} diverged: {e}")
            trace.failure = (epoch, str(e))
            break
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        trace.append(TraceRecord(epoch, state.theta, energy, controller.sizes.S,
                                 accepted, elapsed_ms))

    trace.final_m_inv = controller.m_inv
    trace.final_s_count = controller.sizes.S
    trace.final_Q = getattr(kernel_cfg, "Q", None)
    logger.info(f"{kind.value} finished: {len(trace)} epochs, {trace.m_steps} M-steps")
    return trace
