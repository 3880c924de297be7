#!/usr/bin/env python3
"""
Per-epoch sampler records and the trace that collects them.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyTrace
from .spd_linalg import SpdMatrix


@dataclass(frozen=True)
class TraceRecord:
    """One epoch: position snapshot, energy, current S_count, MH flag and duration."""
    epoch: int
    theta: np.ndarray
    energy: float
    s_count: Optional[int]
    accepted: Optional[bool]
    epoch_ms: float


@dataclass
class Trace:
    """
    Ordered epoch records plus run outcome.

    ``failure`` holds (epoch, message) when the chain diverged; records up to
    the failing epoch are kept.
    """
    kind: str
    param_names: Sequence[str]
    records: List[TraceRecord] = field(default_factory=list)
    failure: Optional[Tuple[int, str]] = None
    final_m_inv: Optional[SpdMatrix] = None
    final_s_count: Optional[int] = None
    final_Q: Optional[float] = None
    m_steps: int = 0

    def append(self, record: TraceRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError(
                f"Epoch {record.epoch} does not follow epoch {self.records[-1].epoch}"
            )
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def samples(self, burn_in: int = 0) -> np.ndarray:
        """Theta snapshots of every epoch >= burn_in, one row each."""
        kept = [r.theta for r in self.records if r.epoch >= burn_in]
        if not kept:
            raise EmptyTrace(
                "No samples after burn-in",
                details={"burn_in": burn_in, "epochs": len(self.records)}
            )
        return np.vstack(kept)
