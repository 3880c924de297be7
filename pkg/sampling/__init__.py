#!/usr/bin/env python3
"""
Mass-adaptive Hamiltonian samplers with Monte Carlo EM.
"""

from .dynamics import (HmcConfig, NpConfig, PhaseState, SghmcConfig, SgnhtConfig)
from .errors import (EmptyBatch, EmptyTrace, InsufficientSamples, LabelDomainError,
                     NonFiniteValue, NotPositiveDefinite, ParseError, SamplerDivergence,
                     SamplingError, ThermostatBlowup)
from .mcem import McemConfig, SamplerKind, initial_state, mcem_loop
from .spd_linalg import SpdMatrix
from .trace import Trace, TraceRecord

__version__ = "0.1.0"

__all__ = [
    'HmcConfig', 'NpConfig', 'PhaseState', 'SghmcConfig', 'SgnhtConfig',
    'McemConfig', 'SamplerKind', 'initial_state', 'mcem_loop',
    'SpdMatrix', 'Trace', 'TraceRecord',
    'SamplingError', 'NotPositiveDefinite', 'InsufficientSamples', 'EmptyBatch',
    'EmptyTrace', 'ParseError', 'LabelDomainError', 'SamplerDivergence',
    'NonFiniteValue', 'ThermostatBlowup',
]
