"""Euler-Maruyama for the CLT process U and the Langevin diffusion D^N.

Paths are advanced together as a batch, but path i draws its noise only
from ``default_rng([seed, i])`` in a fixed order, so a path does not depend
on how many other paths share its batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .deterministic import _rk4_step
from .trajectory import SdeSpec, Trajectory

CHUNK = 256


class NonFiniteStateError(ArithmeticError):
    pass


class _NoiseStreams:
    """Per-path standard normals (and uniforms) drawn in chunks of steps."""

    def __init__(self, seed, indices, m: int, uniforms: bool = False):
        self.gens = [np.random.default_rng([int(s) for s in np.atleast_1d(seed)] + [int(i)]) for i in indices]
        self.m = m
        self.uniforms = uniforms
        self.pos = CHUNK
        self.z = None
        self.u = None

    def next(self, active: Optional[np.ndarray] = None):
        if self.pos == CHUNK:
            self.z = np.stack([g.standard_normal((CHUNK, self.m)) for g in self.gens], axis=1)
            if self.uniforms:
                self.u = np.stack([g.random(CHUNK) for g in self.gens], axis=1)
            self.pos = 0
        z = self.z[self.pos]
        u = self.u[self.pos] if self.uniforms else None
        self.pos += 1
        return z, u


@dataclass(frozen=True)
class Boundary:
    """Policy for the positive orthant and an optional stopping set.

    ``stop_component`` with ``lower``/``upper`` levels turns hits into
    absorption (the path is frozen and flagged).  Without a stopping set,
    negative components are clamped to zero and counted.
    ``track`` records first passage times without stopping (used by the
    survivor filter).
    """

    clamp: bool = True
    stop_component: Optional[int] = None
    lower: float = 0.0
    upper: float = np.inf
    track: bool = False


@dataclass
class PathBatch:
    times: np.ndarray
    states: np.ndarray          # (n, G, d)
    companion: Optional[np.ndarray]
    absorbed: np.ndarray        # lower level reached before the upper one
    hit_time_lower: np.ndarray
    hit_time_upper: np.ndarray
    clamp_count: np.ndarray
    seed: object = None

    def trajectory(self, i: int, names: Sequence[str], method: str) -> Trajectory:
        lo, hi = self.hit_time_lower[i], self.hit_time_upper[i]
        return Trajectory(self.times, self.states[i], tuple(names),
                          {"method": method, "seed": (self.seed, i), "events": 0,
                           "absorbed": bool(self.absorbed[i]),
                           "absorption_time": float(lo) if np.isfinite(lo) else None,
                           "upper_time": float(hi) if np.isfinite(hi) else None,
                           "clamped_steps": int(self.clamp_count[i])})


def _em_loop(sde, x, v, grid, dt, seed, first_index, bd: Boundary) -> PathBatch:
    n, d = x.shape
    G = len(grid)
    out = np.empty((n, G, d))
    vout = None if v is None else np.empty((G, len(v)))
    noise = _NoiseStreams(seed, range(first_index, first_index + n), sde.noise_dim)
    alive = np.ones(n, dtype=bool)
    hit_lo = np.full(n, np.inf)
    hit_hi = np.full(n, np.inf)
    clamps = np.zeros(n, dtype=np.int64)
    sc = sde.scale
    comp = None if v is None else (lambda t, y: np.asarray(sde.companion(y), dtype=float))

    def check_hits(t):
        if bd.stop_component is None:
            return
        xc = x[:, bd.stop_component]
        lo = (xc <= bd.lower) & np.isinf(hit_lo)
        hi = (xc >= bd.upper) & np.isinf(hit_hi)
        if not bd.track:
            first = np.isinf(hit_lo) & np.isinf(hit_hi)
            lo &= first
            hi &= first
            alive[lo | hi] = False
        hit_lo[lo] = t
        hit_hi[hi] = t

    t = grid[0]
    out[:, 0] = x
    if vout is not None:
        vout[0] = v
    check_hits(t)
    for g in range(1, G):
        while t < grid[g] - 1e-12 * max(1.0, abs(grid[g])):
            h = min(dt, grid[g] - t)
            z, _ = noise.next()
            idx = np.nonzero(alive)[0]
            if idx.size:
                xa = x[idx]
                b = sde.drift(xa, v)
                s = sde.noise(xa, v)
                dx = b * h + sc * np.sqrt(h) * np.einsum("nij,nj->ni", s, z[idx])
                xn = xa + dx
                if not np.all(np.isfinite(xn)):
                    raise NonFiniteStateError(f"non-finite state at t={t:.6g}")
                if bd.clamp:
                    neg = xn < 0
                    if np.any(neg):
                        clamps[idx] += np.any(neg, axis=1)
                        xn = np.where(neg, 0.0, xn)
                x[idx] = xn
            if v is not None:
                v = _rk4_step(comp, t, v, h)
            t = t + h
            check_hits(t)
        t = grid[g]
        out[:, g] = x
        if vout is not None:
            vout[g] = v
    return PathBatch(grid, out, vout, hit_lo < hit_hi, hit_lo, hit_hi, clamps, seed)


def lna_simulate(sde: SdeSpec, u0, t_end: float, dt: Optional[float] = None, seed=0, n_paths: int = 1,
                 grid=None, n_out: int = 200, first_index: int = 0) -> PathBatch:
    """Paths of U co-integrated with its companion V0 (no boundary handling)."""
    grid = np.linspace(0.0, t_end, n_out) if grid is None else np.asarray(grid, dtype=float)
    dt = dt or (grid[-1] - grid[0]) / 2000
    x = np.broadcast_to(np.asarray(u0, dtype=float), (n_paths, sde.dim)).copy()
    v = None if sde.companion is None else np.atleast_1d(np.asarray(sde.companion_init, dtype=float)).copy()
    return _em_loop(sde, x, v, grid, dt, seed, first_index, Boundary(clamp=False))


def diffusion_simulate(sde: SdeSpec, d0, t_end: float, dt: Optional[float] = None, seed=0, n_paths: int = 1,
                       grid=None, n_out: int = 200, boundary: Optional[Boundary] = None,
                       first_index: int = 0) -> PathBatch:
    """Paths of the Langevin diffusion with the orthant policy in ``boundary``."""
    grid = np.linspace(0.0, t_end, n_out) if grid is None else np.asarray(grid, dtype=float)
    dt = dt or (grid[-1] - grid[0]) / 2000
    x = np.broadcast_to(np.asarray(d0, dtype=float), (n_paths, sde.dim)).copy()
    return _em_loop(sde, x, None, grid, dt, seed, first_index, boundary or Boundary())


def hitting_diffusion(drift, var, x0: float, lower: float, upper: float, seed=0, n_paths: int = 1,
                      eta: float = 0.005, t_cap: float = np.inf, dt_max: float = 1e-2, dt_min: float = 1e-10,
                      first_index: int = 0, max_steps: int = 10 ** 7, floor: Optional[float] = None):
    """Exit side of a scalar diffusion dX = drift(X) dt + sqrt(var(X)) dW from (lower, upper).

    Each path uses its own step dt = eta * dist^2 / var(X) (clipped to
    [dt_min, dt_max]), with dist the distance to the nearer level, so steps
    shrink near a boundary where the noise vanishes.  Crossings between grid
    points are detected with the Brownian-bridge probability
    exp(-2 a b / (var dt)).  A path within ``floor`` (default 1e-6 of the
    interval) of a level is counted as having reached it; this ends the
    geometric approach to a level where the noise vanishes.  Returns
    (outcome, exit_time) per path with outcome 0 = lower, 1 = upper,
    -1 = censored by ``t_cap``.
    """
    floor = 1e-6 * (upper - lower) if floor is None else floor
    n = n_paths
    x = np.full(n, float(x0))
    t = np.zeros(n)
    outcome = np.full(n, -1, dtype=np.int64)
    censored = np.zeros(n, dtype=bool)
    t_exit = np.full(n, np.inf)
    outcome[x <= lower] = 0
    outcome[x >= upper] = 1
    t_exit[outcome >= 0] = 0.0
    noise = _NoiseStreams(seed, range(first_index, first_index + n), 1, uniforms=True)
    for _ in range(max_steps):
        act = np.nonzero((outcome < 0) & ~censored)[0]
        if act.size == 0:
            break
        z, u = noise.next()
        xa = x[act]
        va = np.maximum(var(xa), 1e-300)
        dist = np.minimum(xa - lower, upper - xa)
        h = np.clip(eta * dist ** 2 / va, dt_min, dt_max)
        h = np.minimum(h, t_cap - t[act])
        xn = xa + drift(xa) * h + np.sqrt(va * h) * z[act, 0]
        # bridge crossing probability for paths that stayed inside
        a_lo, b_lo = xa - lower, xn - lower
        a_hi, b_hi = upper - xa, upper - xn
        with np.errstate(over="ignore", invalid="ignore"):
            p_lo = np.where((b_lo > 0), np.exp(-2 * a_lo * b_lo / (va * h)), 1.0)
            p_hi = np.where((b_hi > 0), np.exp(-2 * a_hi * b_hi / (va * h)), 1.0)
        uu = u[act]
        lo_hit = (uu < p_lo) | (b_lo < floor)
        hi_hit = ~lo_hit & ((uu < p_lo + p_hi * (1 - p_lo)) | (b_hi < floor))
        tn = t[act] + h
        done_lo = lo_hit
        done_hi = hi_hit
        outcome[act[done_lo]] = 0
        outcome[act[done_hi]] = 1
        t_exit[act[done_lo | done_hi]] = tn[done_lo | done_hi]
        x[act] = xn
        t[act] = tn
        censored[act[(outcome[act] < 0) & (tn >= t_cap)]] = True
    return outcome, t_exit
