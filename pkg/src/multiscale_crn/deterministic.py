"""Deterministic solvers: the averaged slow ODE and the second-moment ODE of the CLT process."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .trajectory import Trajectory

BLOWUP = 1e12


class BlowUpError(ArithmeticError):
    pass


def _rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_integrate(f: Callable, y0, grid: Sequence[float], dt: float, rtol: float = 1e-8,
                  atol: float = 1e-12, min_dt: float = 1e-12):
    """RK4 with step-halving control: a step of h is accepted when it agrees with
    two steps of h/2 to ``rtol``; the finer result is kept.  Steps grow back
    towards ``dt`` after easy steps.  Returns states on ``grid``.
    """
    grid = np.asarray(grid, dtype=float)
    y = np.array(y0, dtype=float)
    out = np.empty((len(grid),) + y.shape)
    out[0] = y
    t = grid[0]
    h = dt
    for i in range(1, len(grid)):
        while t < grid[i]:
            step = min(h, grid[i] - t)
            full = _rk4_step(f, t, y, step)
            half = _rk4_step(f, t + step / 2, _rk4_step(f, t, y, step / 2), step / 2)
            err = np.max(np.abs(full - half) / (atol + rtol * np.maximum(np.abs(half), 1.0)))
            if not np.all(np.isfinite(half)) or err > 1.0:
                if step <= min_dt:
                    raise BlowUpError(f"step size underflow at t={t:.6g}")
                h = step / 2
                continue
            y = half
            t = t + step if step < grid[i] - t else grid[i]
            if np.max(np.abs(y)) > BLOWUP:
                raise BlowUpError(f"solution exceeded {BLOWUP:g} at t={t:.6g}")
            if err < 1 / 64 and h < dt:
                h = min(2 * h, dt)
        out[i] = y
    return out


def _default_grid(t_end, grid, n_out):
    return np.linspace(0.0, t_end, n_out) if grid is None else np.asarray(grid, dtype=float)


def ode_solve(F: Callable, v0, t_end: float, dt: Optional[float] = None, grid=None, n_out: int = 200,
              names: Optional[Sequence[str]] = None, rtol: float = 1e-8) -> Trajectory:
    """Solve v' = F(v) from v0.  ``F`` maps a 1-D state to a 1-D drift."""
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    grid = _default_grid(t_end, grid, n_out)
    dt = dt or (grid[-1] - grid[0]) / 200
    states = rk4_integrate(lambda t, v: np.asarray(F(v), dtype=float), v0, grid, dt, rtol=rtol)
    names = tuple(names) if names else tuple(f"v{i}" for i in range(len(v0)))
    return Trajectory(grid, states, names, {"method": "ode", "seed": None, "events": 0,
                                            "absorbed": False, "absorption_time": None})


def batched(F: Callable) -> Callable:
    """Adapt an (n, d) -> (n, d) evaluator to 1-D states."""
    return lambda v: np.asarray(F(np.asarray(v, dtype=float)[None]), dtype=float)[0]


@dataclass
class CovariancePath:
    times: np.ndarray
    v: np.ndarray        # (G, d) companion slow path
    sigma: np.ndarray    # (G, d, d)

    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.einsum("gii->gi", self.sigma), 0.0, None))


def variance_ode(jac: Callable, Gbar: Callable, F: Callable, v0, t_end: float, grid=None, n_out: int = 200,
                 dt: Optional[float] = None, sigma0=None) -> CovariancePath:
    """Sigma' = J Sigma + Sigma J^T + Gbar along v' = F(v), integrated jointly by RK4.

    ``jac``, ``Gbar`` and ``F`` take 1-D slow states.
    """
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    d = len(v0)
    grid = _default_grid(t_end, grid, n_out)
    dt = dt or (grid[-1] - grid[0]) / 200
    S0 = np.zeros((d, d)) if sigma0 is None else np.asarray(sigma0, dtype=float)

    def rhs(t, y):
        v, S = y[:d], y[d:].reshape(d, d)
        J = np.asarray(jac(v), dtype=float).reshape(d, d)
        G = np.asarray(Gbar(v), dtype=float).reshape(d, d)
        dS = J @ S + S @ J.T + G
        return np.concatenate([np.asarray(F(v), dtype=float), (dS + dS.T).ravel() / 2])

    y = rk4_integrate(rhs, np.concatenate([v0, S0.ravel()]), grid, dt)
    sig = y[:, d:].reshape(-1, d, d)
    sig = (sig + np.swapaxes(sig, 1, 2)) / 2
    return CovariancePath(grid, y[:, :d], sig)
