"""Simulation of a fast level's limit process with the slower coordinates frozen.

The limit process moves by lattice jumps on the alpha = 0 directions and
flows deterministically on the alpha > 0 directions (a Markov chain, an ODE
or a PDMP).  Used to check conditional equilibria empirically.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Callable, Optional

import numpy as np

from .deterministic import _rk4_step
from .network import ReactionNetwork, normalized_propensities
from .scales import GeneratorDescription
from .trajectory import Trajectory


class ExplosionError(RuntimeError):
    pass


def _as_array(terms, S):
    ks = np.array([k for k, _ in terms], dtype=np.int64)
    vs = np.array([[float(x) for x in v] for _, v in terms]).reshape(len(terms), S)
    return ks, vs


def fast_subnetwork_simulate(gen: GeneratorDescription, frozen, net: ReactionNetwork, t_end: float,
                             seed=None, rates: Optional[Callable] = None, h: Optional[float] = None,
                             n_out: int = 200, max_jumps: int = 10 ** 7, bound: float = 1e12) -> Trajectory:
    """One path of the frozen fast process in normalized species units.

    Jump times come from integrating the total jump hazard along the flow
    (RK4 with step ``h``, crossing located by the secant method), which is
    exact for pure chains and accurate to the integrator otherwise.
    ``meta["time_average"]`` is the time average of the state over
    [t_end/2, t_end]; for pure chains ``meta["occupation"]`` maps visited
    states to their fraction of that window.
    """
    S = net.n_species
    rates = rates or (lambda z: normalized_propensities(net, z, limit=True))
    jk, jv = _as_array(gen.jump_terms, S)
    dk, dv = _as_array(gen.drift_terms, S)
    has_flow = len(dk) > 0
    rng = np.random.default_rng(seed)
    z = np.array(frozen, dtype=float)
    grid = np.linspace(0.0, t_end, n_out)
    out = np.empty((n_out, S))
    h = h or t_end / 20000
    t_half = t_end / 2
    acc = np.zeros(S)
    occ = defaultdict(float)
    jumps = 0

    def lam(z):
        return rates(z[None, :])[0]

    def aug(t, y):
        l = lam(y[:S])
        dz = l[dk] @ dv if has_flow else np.zeros(S)
        return np.concatenate([dz, [l[jk].sum() if len(jk) else 0.0]])

    def window(t0, t1):
        return max(0.0, min(t1, t_end) - max(t0, t_half))

    t = 0.0
    g = 0
    if not has_flow:
        while True:
            l = lam(z)[jk] if len(jk) else np.zeros(0)
            L = l.sum()
            t_new = t + rng.standard_exponential() / L if L > 0 else np.inf
            while g < n_out and grid[g] < t_new:
                out[g] = z
                g += 1
            w = window(t, t_new)
            if w > 0:
                acc += z * w
                occ[tuple(z)] += w
            if t_new > t_end:
                break
            i = min(np.searchsorted(np.cumsum(l), rng.random() * L, side="right"), len(l) - 1)
            z = z + jv[i]
            t = t_new
            jumps += 1
            if jumps > max_jumps or np.max(np.abs(z)) > bound:
                raise ExplosionError(f"fast process exploded after {jumps} jumps at t={t:.6g}")
    else:
        out[0] = z
        g = 1
        E = rng.standard_exponential()
        H = 0.0
        while t < t_end:
            step = min(h, grid[g] - t if g < n_out else t_end - t)
            y0 = np.concatenate([z, [H]])
            y1 = _rk4_step(aug, t, y0, step)
            if y1[S] >= E and len(jk):
                # secant search for the crossing inside this step
                lo, hi, Hlo, Hhi = 0.0, step, H, y1[S]
                tau = step
                for _ in range(60):
                    tau = lo + (E - Hlo) * (hi - lo) / (Hhi - Hlo)
                    yt = _rk4_step(aug, t, y0, tau)
                    if abs(yt[S] - E) < 1e-12 * max(1.0, E):
                        break
                    if yt[S] < E:
                        lo, Hlo = tau, yt[S]
                    else:
                        hi, Hhi = tau, yt[S]
                y1 = _rk4_step(aug, t, y0, tau)
                step = tau
                fire = True
            else:
                fire = False
            acc += (z + y1[:S]) / 2 * window(t, t + step)
            z = y1[:S]
            H = y1[S]
            t = t + step
            if fire:
                l = lam(z)[jk]
                i = min(np.searchsorted(np.cumsum(l), rng.random() * l.sum(), side="right"), len(l) - 1)
                z = z + jv[i]
                E = rng.standard_exponential()
                H = 0.0
                jumps += 1
                if jumps > max_jumps:
                    raise ExplosionError(f"fast process exceeded {max_jumps} jumps")
            if np.max(np.abs(z)) > bound or not np.all(np.isfinite(z)):
                raise ExplosionError(f"fast process exploded at t={t:.6g}")
            while g < n_out and grid[g] <= t + 1e-12 * t_end:
                out[g] = z
                g += 1
        while g < n_out:
            out[g] = z
            g += 1
    meta = {"method": f"fast-{gen.kind}", "seed": seed, "events": jumps, "absorbed": False,
            "absorption_time": None, "time_average": acc / (t_end - t_half)}
    if not has_flow:
        meta["occupation"] = {k: v / (t_end - t_half) for k, v in occ.items()}
    return Trajectory(grid, out, tuple(s.name for s in net.species), meta)
