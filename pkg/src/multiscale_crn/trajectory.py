"""Sample-path containers shared by all simulators."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class Trajectory:
    """States on an increasing time grid plus run metadata.

    ``meta`` keys used by the simulators: method, seed, events, absorbed,
    absorption_time, stopped_at ("lower", "upper" or None).
    """

    times: np.ndarray
    states: np.ndarray
    names: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("times and states lengths differ")
        if self.states.shape[1] != len(self.names):
            raise ValueError("state width does not match component names")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def component(self, name) -> np.ndarray:
        return self.states[:, list(self.names).index(name)]

    def at(self, t) -> np.ndarray:
        """State of the piecewise-constant path at time(s) t (last grid point <= t)."""
        i = np.searchsorted(self.times, t, side="right") - 1
        return self.states[np.clip(i, 0, len(self.times) - 1)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *self.names])
        for t, row in zip(self.times, self.states):
            w.writerow([repr(float(t)), *(_fmt(v) for v in row)])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return repr(float(v))


@dataclass
class SdeSpec:
    """dX = drift(X, V) dt + scale * noise(X, V) dW, optionally driven by an ODE V' = companion(V).

    ``drift`` and ``noise`` take batched states (n, d) and the shared
    companion state (c,) or None, returning (n, d) and (n, d, m); ``noise_dim``
    is m.  ``companion`` maps a 1-D state to its derivative and starts from
    ``companion_init``.
    """

    drift: Callable
    noise: Callable
    scale: float
    dim: int
    noise_dim: int
    companion: Optional[Callable] = None
    companion_init: Optional[np.ndarray] = None
    names: tuple = ()

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"noise scale must be positive, got {self.scale}")
        if not self.names:
            self.names = tuple(f"x{i}" for i in range(self.dim))
