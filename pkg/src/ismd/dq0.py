"""Power-invariant sinusoidal abc -> dq0 projection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sigsim import ThreePhaseCycle

_SHIFT = 2.0 * math.pi / 3.0
_K = math.sqrt(2.0 / 3.0)


def park_matrix(theta: float) -> np.ndarray:
    """Orthonormal 3x3 projection; rows are d, q and zero sequence."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"theta must be finite, got {theta}")
    r = 1.0 / math.sqrt(2.0)
    return _K * np.array([
        [math.sin(theta), math.sin(theta - _SHIFT), math.sin(theta + _SHIFT)],
        [math.cos(theta), math.cos(theta - _SHIFT), math.cos(theta + _SHIFT)],
        [r, r, r],
    ])


@dataclass(frozen=True)
class Dq0Cycle:
    i_d: np.ndarray
    i_q: np.ndarray
    i_0: np.ndarray
    theta: np.ndarray
    sample_rate: float
    source: dict

    @property
    def n_samples(self) -> int:
        return len(self.i_d)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate


def carrier_theta(cycle: ThreePhaseCycle, frequency_hz: float | None = None) -> np.ndarray:
    f = frequency_hz if frequency_hz is not None else cycle.carrier_hz
    if f is None:
        raise ValueError("cycle carries no carrier frequency; pass one or use theta='zero-crossing'")
    return 2.0 * np.pi * f * cycle.times


def zero_crossing_theta(cycle: ThreePhaseCycle) -> np.ndarray:
    """Angle estimate from upward zero crossings of phase a.

    ``i_a = I sin(theta)`` crosses zero upward at theta = 0 mod 2 pi, so a
    line fitted through the interpolated crossing instants gives both the
    frequency and the phase.
    """
    x = cycle.i_a
    idx = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
    if len(idx) < 2:
        raise ValueError("need at least two upward zero crossings of i_a to estimate theta")
    frac = -x[idx] / (x[idx + 1] - x[idx])
    t_cross = (idx + frac) / cycle.sample_rate
    # noise can add spurious crossings right after a real one
    gaps = np.diff(t_cross)
    keep = np.concatenate([[True], gaps > 0.5 * np.median(gaps)])
    t_cross = t_cross[keep]
    k = np.arange(len(t_cross))
    slope, intercept = np.polyfit(k, t_cross, 1)
    return 2.0 * np.pi * (cycle.times - intercept) / slope


def resolve_theta(cycle: ThreePhaseCycle, theta_source="carrier") -> np.ndarray:
    if isinstance(theta_source, str):
        if theta_source == "carrier":
            return carrier_theta(cycle)
        if theta_source == "zero-crossing":
            return zero_crossing_theta(cycle)
        raise ValueError(f"unknown theta source {theta_source!r}")
    theta = np.asarray(theta_source, dtype=float)
    if theta.shape != (cycle.n_samples,):
        raise ValueError(f"theta length {theta.shape} does not match cycle length {cycle.n_samples}")
    return theta


def project(abc: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Apply ``park_matrix(theta[k])`` to column ``abc[:, k]`` for every k."""
    abc = np.asarray(abc, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if abc.shape[0] != 3 or abc.shape[1:] != theta.shape:
        raise ValueError(f"shape mismatch: abc {abc.shape}, theta {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    s = [np.sin(theta), np.sin(theta - _SHIFT), np.sin(theta + _SHIFT)]
    c = [np.cos(theta), np.cos(theta - _SHIFT), np.cos(theta + _SHIFT)]
    d = _K * (s[0] * abc[0] + s[1] * abc[1] + s[2] * abc[2])
    q = _K * (c[0] * abc[0] + c[1] * abc[1] + c[2] * abc[2])
    z = (abc[0] + abc[1] + abc[2]) / math.sqrt(3.0)
    return np.vstack([d, q, z])


def transform_cycle(cycle: ThreePhaseCycle, theta_source="carrier") -> Dq0Cycle:
    theta = resolve_theta(cycle, theta_source)
    d, q, z = project(cycle.phases(), theta)
    return Dq0Cycle(d, q, z, theta, cycle.sample_rate, cycle.metadata())


ANALYSIS_MODES = ("d", "q", "magnitude")


def select_analysis_signal(dq: Dq0Cycle, mode: str = "d") -> np.ndarray:
    if mode == "d":
        return dq.i_d.copy()
    if mode == "q":
        return dq.i_q.copy()
    if mode == "magnitude":
        return np.hypot(dq.i_d, dq.i_q)
    raise ValueError(f"unknown analysis mode {mode!r}; expected one of {ANALYSIS_MODES}")
