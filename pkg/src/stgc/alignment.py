"""Time-axis alignment of a cause/effect series pair.

Shifting the cause series forward by the pair's spatial-temporal lag
makes both series carry the same traffic information at the same index,
so a downstream causality test sees release and arrival side by side.
Edges are truncated, never padded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .lags import LAG_UNDEFINED


class PairNotAlignable(ValidationError):
    """Raised when the pair's lag is the undefined sentinel."""


@dataclass(frozen=True)
class AlignedPair:
    """cause[k] lines up with effect[k] = original effect index k + lag."""

    cause: np.ndarray
    effect: np.ndarray
    lag_applied: int
    original_length: int

    def __len__(self) -> int:
        return self.cause.shape[0]


def align_pair(cause_series: np.ndarray, effect_series: np.ndarray, s: int) -> AlignedPair:
    """Return (cause[0 .. T-s-1], effect[s .. T-1]).

    ``s = 0`` returns both series unchanged; the -1 sentinel raises
    :class:`PairNotAlignable`, any other out-of-range shift is an error.
    """
    cause = np.asarray(cause_series, dtype=np.float64)
    effect = np.asarray(effect_series, dtype=np.float64)
    if cause.ndim != 1 or effect.ndim != 1 or cause.shape != effect.shape:
        raise ValidationError("cause and effect must be 1-D series of equal length")
    t = cause.shape[0]
    s = int(s)
    if s == LAG_UNDEFINED:
        raise PairNotAlignable("pair has no defined spatial-temporal lag")
    if s < 0 or s >= t:
        raise ValidationError(f"shift {s} outside [0, {t})")
    return AlignedPair(
        cause=cause[: t - s],
        effect=effect[s:],
        lag_applied=s,
        original_length=t,
    )
