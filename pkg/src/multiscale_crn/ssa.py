"""Exact stochastic simulation of the count process X(t).

Three numba kernels share one compiled description of the network:

* ``direct``: Gillespie's direct method with a reaction dependency graph;
* ``next-reaction``: Gibson-Bruck putative firing times (linear argmin,
  which beats a heap for the handful of reactions typical here);
* ``aggregated``: direct method for most reactions, but one species whose
  own dynamics are immigration-death is integrated out exactly between the
  remaining events (see :func:`aggregatable_species`).  This removes the
  fastest events of networks like the viral model without any approximation.

Time is measured on the scale fixed by ``spec.gamma``: reaction k fires at
rate kappa_k N^(beta_k + gamma) times the falling-factorial mass-action term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .network import ReactionNetwork, ScalingSpec
from .trajectory import Trajectory

OK, LOWER, UPPER, OVERFLOW, EVENT_CAP = 0, 1, 2, 3, 4
DEFAULT_MAX_EVENTS = 10 ** 8


class SimulationError(RuntimeError):
    """A trajectory could not be completed (overflow, event cap, non-finite state)."""


@dataclass(frozen=True)
class StoppingRule:
    """Stop when ``species`` reaches ``upper`` (count) or is extinct for good.

    Extinction means the count is 0 and every reaction that could ever
    replenish it (directly or through its upstream species) is disabled.
    """

    species: str
    upper: float = math.inf
    absorb_at_zero: bool = True


# --- kernels -----------------------------------------------------------------

@njit(cache=True, nogil=True)
def _prop(k, x, kap, r_ptr, r_sp, r_cnt):
    a = kap[k]
    for q in range(r_ptr[k], r_ptr[k + 1]):
        xi = x[r_sp[q]]
        for j in range(r_cnt[q]):
            a *= xi - j
    return a if a > 0.0 else 0.0


@njit(cache=True, nogil=True)
def _stop_status(x, stop_sp, stop_hi, stop_lo, prod_rx, kap, r_ptr, r_sp, r_cnt):
    v = x[stop_sp]
    if v >= stop_hi:
        return UPPER
    if stop_lo and v <= 0.0:
        for q in range(prod_rx.shape[0]):
            if _prop(prod_rx[q], x, kap, r_ptr, r_sp, r_cnt) > 0.0:
                return OK
        return LOWER
    return OK


@njit(cache=True, nogil=True)
def _grow(arr, n):
    new = np.empty((2 * arr.shape[0],) + arr.shape[1:])
    new[:n] = arr[:n]
    return new


@njit(cache=True, nogil=True)
def _direct(x0, kap, r_ptr, r_sp, r_cnt, c_ptr, c_sp, c_dz, d_ptr, d_rx, grid, rng,
            max_events, stop_sp, stop_hi, stop_lo, prod_rx):
    S = x0.shape[0]
    K = kap.shape[0]
    G = grid.shape[0]
    t_end = grid[G - 1]
    x = x0.copy()
    out = np.empty((G, S))
    a = np.empty(K)
    for k in range(K):
        a[k] = _prop(k, x, kap, r_ptr, r_sp, r_cnt)
    t = 0.0
    n = 0
    g = 0
    status = OK
    t_stop = math.inf
    if stop_sp >= 0:
        status = _stop_status(x, stop_sp, stop_hi, stop_lo, prod_rx, kap, r_ptr, r_sp, r_cnt)
        if status != OK:
            t_stop = 0.0
    while status == OK:
        a0 = 0.0
        for k in range(K):
            a0 += a[k]
        if not a0 < math.inf:
            status = OVERFLOW
            break
        t_new = t + rng.standard_exponential() / a0 if a0 > 0.0 else math.inf
        while g < G and grid[g] < t_new:
            out[g] = x
            g += 1
        if t_new > t_end:
            break
        u = rng.random() * a0
        k = 0
        c = a[0]
        while c <= u and k < K - 1:
            k += 1
            c += a[k]
        for q in range(c_ptr[k], c_ptr[k + 1]):
            x[c_sp[q]] += c_dz[q]
        for q in range(d_ptr[k], d_ptr[k + 1]):
            j = d_rx[q]
            a[j] = _prop(j, x, kap, r_ptr, r_sp, r_cnt)
        n += 1
        t = t_new
        if stop_sp >= 0:
            status = _stop_status(x, stop_sp, stop_hi, stop_lo, prod_rx, kap, r_ptr, r_sp, r_cnt)
            if status != OK:
                t_stop = t
        if n >= max_events:
            status = EVENT_CAP
    if status == OK:
        while g < G:
            out[g] = x
            g += 1
    return out, g, x, n, status, t_stop


@njit(cache=True, nogil=True)
def _direct_segments(x0, kap, r_ptr, r_sp, r_cnt, c_ptr, c_sp, c_dz, d_ptr, d_rx, t_end, rng,
                     max_events, seg_mask):
    """Direct method recording time integrals of x and x x^T between changes of masked species.

    Returns per segment: start time, duration, state, int x ds, int x x^T ds.
    """
    S = x0.shape[0]
    K = kap.shape[0]
    x = x0.copy()
    a = np.empty(K)
    for k in range(K):
        a[k] = _prop(k, x, kap, r_ptr, r_sp, r_cnt)
    cap = 256
    seg_t = np.empty(cap)
    seg_d = np.empty(cap)
    seg_x = np.empty((cap, S))
    seg_m1 = np.empty((cap, S))
    seg_m2 = np.empty((cap, S, S))
    ns = 0
    m1 = np.zeros(S)
    m2 = np.zeros((S, S))
    t_seg = 0.0
    x_seg = x.copy()
    t = 0.0
    n = 0
    status = OK
    done = False
    while not done:
        a0 = 0.0
        for k in range(K):
            a0 += a[k]
        if not a0 < math.inf:
            status = OVERFLOW
            break
        t_new = t + rng.standard_exponential() / a0 if a0 > 0.0 else math.inf
        if t_new > t_end:
            t_new = t_end
            done = True
        dur = t_new - t
        for i in range(S):
            m1[i] += x[i] * dur
            for j in range(S):
                m2[i, j] += x[i] * x[j] * dur
        close = done
        if not done:
            u = rng.random() * a0
            k = 0
            c = a[0]
            while c <= u and k < K - 1:
                k += 1
                c += a[k]
            for q in range(c_ptr[k], c_ptr[k + 1]):
                x[c_sp[q]] += c_dz[q]
                if seg_mask[c_sp[q]]:
                    close = True
            for q in range(d_ptr[k], d_ptr[k + 1]):
                j = d_rx[q]
                a[j] = _prop(j, x, kap, r_ptr, r_sp, r_cnt)
            n += 1
        t = t_new
        if close:
            if ns == seg_t.shape[0]:
                seg_t = _grow(seg_t, ns)
                seg_d = _grow(seg_d, ns)
                seg_x = _grow(seg_x, ns)
                seg_m1 = _grow(seg_m1, ns)
                seg_m2 = _grow(seg_m2, ns)
            seg_t[ns] = t_seg
            seg_d[ns] = t - t_seg
            seg_x[ns] = x_seg
            seg_m1[ns] = m1
            seg_m2[ns] = m2
            ns += 1
            m1[:] = 0.0
            m2[:, :] = 0.0
            t_seg = t
            x_seg[:] = x
        if n >= max_events:
            status = EVENT_CAP
            break
    return x, n, status, seg_t[:ns], seg_d[:ns], seg_x[:ns], seg_m1[:ns], seg_m2[:ns]


@njit(cache=True, nogil=True)
def _next_reaction(x0, kap, r_ptr, r_sp, r_cnt, c_ptr, c_sp, c_dz, d_ptr, d_rx, grid, rng,
                   max_events, stop_sp, stop_hi, stop_lo, prod_rx):
    S = x0.shape[0]
    K = kap.shape[0]
    G = grid.shape[0]
    t_end = grid[G - 1]
    x = x0.copy()
    out = np.empty((G, S))
    a = np.empty(K)
    tau = np.empty(K)
    for k in range(K):
        a[k] = _prop(k, x, kap, r_ptr, r_sp, r_cnt)
        tau[k] = rng.standard_exponential() / a[k] if a[k] > 0.0 else math.inf
    t = 0.0
    n = 0
    g = 0
    status = OK
    t_stop = math.inf
    if stop_sp >= 0:
        status = _stop_status(x, stop_sp, stop_hi, stop_lo, prod_rx, kap, r_ptr, r_sp, r_cnt)
        if status != OK:
            t_stop = 0.0
    while status == OK:
        k = 0
        for j in range(1, K):
            if tau[j] < tau[k]:
                k = j
        t_new = tau[k]
        if math.isnan(t_new):
            status = OVERFLOW
            break
        while g < G and grid[g] < t_new:
            out[g] = x
            g += 1
        if t_new > t_end:
            break
        for q in range(c_ptr[k], c_ptr[k + 1]):
            x[c_sp[q]] += c_dz[q]
        for q in range(d_ptr[k], d_ptr[k + 1]):
            j = d_rx[q]
            old = a[j]
            a[j] = _prop(j, x, kap, r_ptr, r_sp, r_cnt)
            if not a[j] < math.inf:
                status = OVERFLOW
            if j == k:
                continue
            if a[j] <= 0.0:
                tau[j] = math.inf
            elif old > 0.0:
                tau[j] = t_new + (old / a[j]) * (tau[j] - t_new)
            else:
                tau[j] = t_new + rng.standard_exponential() / a[j]
        tau[k] = t_new + rng.standard_exponential() / a[k] if a[k] > 0.0 else math.inf
        n += 1
        t = t_new
        if status != OK:
            break
        if stop_sp >= 0:
            status = _stop_status(x, stop_sp, stop_hi, stop_lo, prod_rx, kap, r_ptr, r_sp, r_cnt)
            if status != OK:
                t_stop = t
                break
        if n >= max_events:
            status = EVENT_CAP
            break
    if status == OK:
        while g < G:
            out[g] = x
            g += 1
    return out, g, x, n, status, t_stop


@njit(cache=True, nogil=True)
def _first_arrival_death(E, A, mu):
    """Solve A (t - (1 - e^{-mu t}) / mu) = E for t by Newton's method from the right."""
    t = E / A + 1.0 / mu
    for _ in range(100):
        f = A * (t + math.expm1(-mu * t) / mu) - E
        fp = -A * math.expm1(-mu * t)
        step = f / fp
        t -= step
        if abs(step) <= 1e-13 * t:
            break
    return t


@njit(cache=True, nogil=True)
def _sample_aggregated(rng, n, m, mu, a_in, dt, extra):
    """Count of the aggregated species after dt without marked deaths (plus ``extra``)."""
    if mu > 0.0:
        surv = math.exp(-mu * dt)
        mean_arr = -a_in * math.expm1(-mu * dt) / mu
    else:
        surv = 1.0
        mean_arr = a_in * dt
    val = m + extra
    if n - m > 0:
        val += rng.binomial(n - m, surv)
    if mean_arr > 0.0:
        val += rng.poisson(mean_arr)
    return float(val)


@njit(cache=True, nogil=True)
def _aggregated(x0, kap, r_ptr, r_sp, r_cnt, c_ptr, c_sp, c_dz, grid, rng, max_events,
                stop_sp, stop_hi, stop_lo, prod_rx, s, regular, producers, mu_int, consumers):
    S = x0.shape[0]
    G = grid.shape[0]
    t_end = grid[G - 1]
    x = x0.copy()
    out = np.empty((G, S))
    R = regular.shape[0]
    C = consumers.shape[0]
    a = np.empty(R)
    cj = np.empty(C)
    t = 0.0
    n = 0
    g = 0
    status = OK
    t_stop = math.inf
    if stop_sp >= 0:
        status = _stop_status(x, stop_sp, stop_hi, stop_lo, prod_rx, kap, r_ptr, r_sp, r_cnt)
        if status != OK:
            t_stop = 0.0
    while status == OK:
        # hazards given the current non-aggregated state
        r0 = 0.0
        for i in range(R):
            a[i] = _prop(regular[i], x, kap, r_ptr, r_sp, r_cnt)
            r0 += a[i]
        a_in = 0.0
        for i in range(producers.shape[0]):
            a_in += _prop(producers[i], x, kap, r_ptr, r_sp, r_cnt)
        ns = x[s]
        x[s] = 1.0
        c = 0.0
        for i in range(C):
            cj[i] = _prop(consumers[i], x, kap, r_ptr, r_sp, r_cnt)
            c += cj[i]
        x[s] = ns
        if not (r0 < math.inf and a_in < math.inf and c < math.inf):
            status = OVERFLOW
            break
        mu = mu_int + c
        nn = int(ns)
        qm = c / mu if mu > 0.0 else 0.0
        m = rng.binomial(nn, qm) if qm > 0.0 and nn > 0 else 0
        t_o = rng.standard_exponential() / r0 if r0 > 0.0 else math.inf
        t_i = rng.standard_exponential() / (mu * m) if m > 0 else math.inf
        A = a_in * qm
        t_a = _first_arrival_death(rng.standard_exponential(), A, mu) if A > 0.0 else math.inf
        dt = min(t_o, min(t_i, t_a))
        if g < G and grid[g] < t + dt:
            # restart from the next output time with the conditional law of the count
            if grid[g] > t:
                x[s] = _sample_aggregated(rng, nn, m, mu, a_in, grid[g] - t, 0)
                t = grid[g]
            out[g] = x
            g += 1
            if g == G:
                break
            continue
        t_new = t + dt
        if t_new > t_end:
            break
        if dt == t_o:
            x[s] = _sample_aggregated(rng, nn, m, mu, a_in, dt, 0)
            u = rng.random() * r0
            i = 0
            acc = a[0]
            while acc <= u and i < R - 1:
                i += 1
                acc += a[i]
            k = regular[i]
        else:
            x[s] = _sample_aggregated(rng, nn, m, mu, a_in, dt, 0 if dt == t_i else 1)
            u = rng.random() * c
            i = 0
            acc = cj[0]
            while acc <= u and i < C - 1:
                i += 1
                acc += cj[i]
            k = consumers[i]
        for q in range(c_ptr[k], c_ptr[k + 1]):
            x[c_sp[q]] += c_dz[q]
        n += 1
        t = t_new
        if stop_sp >= 0:
            status = _stop_status(x, stop_sp, stop_hi, stop_lo, prod_rx, kap, r_ptr, r_sp, r_cnt)
            if status != OK:
                t_stop = t
                break
        if n >= max_events:
            status = EVENT_CAP
            break
    return out, g, x, n, status, t_stop


# --- compilation ---------------------------------------------------------------

@dataclass(frozen=True)
class CompiledNetwork:
    """Flat arrays describing a network for the kernels (CSR layouts)."""

    kap: np.ndarray
    r_ptr: np.ndarray
    r_sp: np.ndarray
    r_cnt: np.ndarray
    c_ptr: np.ndarray
    c_sp: np.ndarray
    c_dz: np.ndarray
    d_ptr: np.ndarray
    d_rx: np.ndarray


def _csr(rows):
    ptr = [0]
    flat = []
    for row in rows:
        flat.extend(row)
        ptr.append(len(flat))
    return np.array(ptr, dtype=np.int64), flat


@lru_cache(maxsize=64)
def compile_network(net: ReactionNetwork, spec: ScalingSpec) -> CompiledNetwork:
    nu_in, zeta = net.nu_in, net.zeta
    K, S = zeta.shape
    kap = net.raw_rate_constants(spec) * float(spec.N) ** float(spec.gamma)
    r_ptr, r = _csr([[(i, int(nu_in[k, i])) for i in np.nonzero(nu_in[k])[0]] for k in range(K)])
    c_ptr, c = _csr([[(i, float(zeta[k, i])) for i in np.nonzero(zeta[k])[0]] for k in range(K)])
    deps = []
    for k in range(K):
        changed = set(np.nonzero(zeta[k])[0])
        deps.append([j for j in range(K) if changed & set(np.nonzero(nu_in[j])[0])])
    d_ptr, d = _csr(deps)
    return CompiledNetwork(
        kap=np.asarray(kap, dtype=float), r_ptr=r_ptr,
        r_sp=np.array([i for i, _ in r], dtype=np.int64), r_cnt=np.array([c_ for _, c_ in r], dtype=np.int64),
        c_ptr=c_ptr, c_sp=np.array([i for i, _ in c], dtype=np.int64),
        c_dz=np.array([v for _, v in c], dtype=float), d_ptr=d_ptr, d_rx=np.array(d, dtype=np.int64))


def replenishing_reactions(net: ReactionNetwork, species: str) -> np.ndarray:
    """Reactions producing ``species`` or any species upstream of it."""
    zeta, nu_in = net.zeta, net.nu_in
    up = {net.index[species]}
    while True:
        producers = [k for k in range(net.n_reactions) if any(zeta[k, i] > 0 for i in up)]
        new = up | {i for k in producers for i in np.nonzero(nu_in[k])[0]}
        if new == up:
            return np.array(producers, dtype=np.int64)
        up = new


def aggregatable_species(net: ReactionNetwork) -> list:
    """Species whose own reactions form an immigration-death process.

    Species s qualifies when every reaction that changes only s is either a
    unit producer not consuming s or a unit first-order decay s -> 0, at least
    one such reaction exists, and every other reaction using s consumes
    exactly one molecule of it.
    """
    out = []
    for s, sp in enumerate(net.species):
        internal, ok = 0, True
        for k in range(net.n_reactions):
            z, nin = net.zeta[k], net.nu_in[k]
            only_s = z[s] != 0 and np.count_nonzero(z) == 1
            if only_s and z[s] == 1 and nin[s] == 0:
                internal += 1
            elif only_s and z[s] == -1 and nin[s] == 1 and nin.sum() == 1:
                internal += 1
            elif nin[s] > 0 and not (nin[s] == 1 and z[s] == -1):
                ok = False
        if ok and internal:
            out.append(sp.name)
    return out


def _aggregation_arrays(net: ReactionNetwork, species: str):
    if species not in aggregatable_species(net):
        raise ValueError(f"species {species} cannot be aggregated exactly "
                         f"(candidates: {aggregatable_species(net)})")
    s = net.index[species]
    regular, producers, decays, consumers = [], [], [], []
    for k in range(net.n_reactions):
        z, nin = net.zeta[k], net.nu_in[k]
        only_s = z[s] != 0 and np.count_nonzero(z) == 1
        if only_s and z[s] == 1 and nin[s] == 0:
            producers.append(k)
        elif only_s and z[s] == -1 and nin.sum() == 1 and nin[s] == 1:
            decays.append(k)
        elif nin[s] > 0:
            consumers.append(k)
        else:
            regular.append(k)
    as_arr = lambda v: np.array(v, dtype=np.int64)
    return s, as_arr(regular), as_arr(producers), decays, as_arr(consumers)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def ssa_simulate(net: ReactionNetwork, spec: ScalingSpec, x0=None, t_end: float = 1.0, seed=None, *,
                 grid: Optional[Sequence[float]] = None, n_out: int = 200, method: str = "direct",
                 aggregate: Optional[str] = None, max_events: int = DEFAULT_MAX_EVENTS,
                 stop: Optional[StoppingRule] = None) -> Trajectory:
    """One exact CTMC path in molecule counts, reported on ``grid``.

    ``seed`` is anything accepted by ``numpy.random.default_rng`` (e.g. an
    int or ``[master, index]``) or a Generator.  With ``stop`` the path ends
    at the stopping time and ``meta`` records which boundary was hit.
    """
    x0 = net.initial_state if x0 is None else np.asarray(x0)
    if np.any(x0 < 0) or np.any(np.asarray(x0) != np.round(x0)):
        raise ValueError("initial counts must be non-negative integers")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    grid = np.linspace(0.0, t_end, n_out) if grid is None else np.asarray(grid, dtype=float)
    if grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("output grid must be non-negative and strictly increasing")
    cn = compile_network(net, spec)
    rng = _rng(seed)
    x = np.asarray(x0, dtype=float).copy()
    if stop is not None:
        stop_sp = net.index[stop.species]
        stop_hi = float(stop.upper)
        stop_lo = bool(stop.absorb_at_zero)
        prod_rx = replenishing_reactions(net, stop.species)
    else:
        stop_sp, stop_hi, stop_lo, prod_rx = -1, math.inf, False, np.zeros(0, dtype=np.int64)
    csr = (cn.kap, cn.r_ptr, cn.r_sp, cn.r_cnt, cn.c_ptr, cn.c_sp, cn.c_dz)
    if aggregate is not None:
        s, regular, producers, decays, consumers = _aggregation_arrays(net, aggregate)
        if stop_sp == s:
            raise ValueError("the stopping species cannot be the aggregated one")
        mu_int = float(sum(cn.kap[k] for k in decays))
        out, g, xf, n, status, t_stop = _aggregated(x, *csr, grid, rng, int(max_events), stop_sp, stop_hi,
                                                   stop_lo, prod_rx, s, regular, producers, mu_int, consumers)
        label = f"ssa-aggregated[{aggregate}]"
    elif method == "direct":
        out, g, xf, n, status, t_stop = _direct(x, *csr, cn.d_ptr, cn.d_rx, grid, rng, int(max_events),
                                                stop_sp, stop_hi, stop_lo, prod_rx)
        label = "ssa-direct"
    elif method == "next-reaction":
        out, g, xf, n, status, t_stop = _next_reaction(x, *csr, cn.d_ptr, cn.d_rx, grid, rng,
                                                       int(max_events), stop_sp, stop_hi, stop_lo, prod_rx)
        label = "ssa-next-reaction"
    else:
        raise ValueError(f"unknown SSA method {method!r}")
    if status == OVERFLOW:
        raise SimulationError("propensity overflow")
    if status == EVENT_CAP:
        raise SimulationError(f"event cap of {max_events} exceeded")
    times, states = grid[:g], out[:g]
    if status in (LOWER, UPPER) and (g == 0 or t_stop > times[-1]):
        times = np.append(times, t_stop)
        states = np.vstack([states, xf[None]])
    meta = {"method": label, "seed": seed if not isinstance(seed, np.random.Generator) else None,
            "events": int(n), "absorbed": status == LOWER, "absorption_time": t_stop if status == LOWER else None,
            "stopped_at": {LOWER: "lower", UPPER: "upper"}.get(status), "stop_time": t_stop,
            "final_state": xf.astype(np.int64)}
    return Trajectory(times, np.rint(states).astype(np.int64), tuple(s.name for s in net.species), meta)


def ssa_segments(net: ReactionNetwork, spec: ScalingSpec, slow_species: Sequence[str], x0=None,
                 t_end: float = 1.0, seed=None, max_events: int = DEFAULT_MAX_EVENTS) -> dict:
    """Direct-method path summarized on stretches where ``slow_species`` stay constant.

    Returns arrays ``t0``, ``duration``, ``x`` (state on the stretch, counts),
    ``int_x`` and ``int_xx`` (time integrals of X and X X^T over it) plus the
    final state and event count.  Any functional that is at most quadratic
    in the remaining species can be integrated exactly from these.
    """
    x0 = net.initial_state if x0 is None else np.asarray(x0)
    cn = compile_network(net, spec)
    mask = np.zeros(net.n_species, dtype=np.bool_)
    for name in slow_species:
        mask[net.index[name]] = True
    xf, n, status, *segs = _direct_segments(np.asarray(x0, dtype=float), cn.kap, cn.r_ptr, cn.r_sp, cn.r_cnt,
                                            cn.c_ptr, cn.c_sp, cn.c_dz, cn.d_ptr, cn.d_rx, float(t_end),
                                            _rng(seed), int(max_events), mask)
    if status == OVERFLOW:
        raise SimulationError("propensity overflow")
    if status == EVENT_CAP:
        raise SimulationError(f"event cap of {max_events} exceeded")
    out = dict(zip(("t0", "duration", "x", "int_x", "int_xx"), segs))
    out.update(final_state=xf, events=int(n))
    return out
