"""Trajectory ensembles: streaming statistics, absorption estimates and method comparisons.

Trajectory i of an ensemble with master seed s always uses the random
stream ``[s, i]``.  Trajectories are processed in fixed-size chunks whose
partial statistics are merged in chunk order, so summaries do not depend on
the number of worker threads.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .network import ReactionNetwork, ScalingSpec, count_scale
from .pipeline import MultiscaleModel
from .sde import Boundary, diffusion_simulate, hitting_diffusion, lna_simulate
from .ssa import SimulationError, StoppingRule, ssa_simulate
from .fastsim import fast_subnetwork_simulate
from .scales import limit_generator

METHODS = ("ssa", "ode", "lna", "diffusion", "fast")
CHUNK = 50
MAX_FAILURE_FRACTION = 0.01
Z95 = 1.959963984540054


class EnsembleError(RuntimeError):
    pass


class GridMismatchError(ValueError):
    pass


class RunningStats:
    """Welford accumulator over arrays of a fixed shape; mergeable (Chan et al.)."""

    def __init__(self, shape):
        self.n = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def push(self, x):
        x = np.asarray(x, dtype=float)
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean.copy(), other.m2.copy()
            return self
        n = self.n + other.n
        d = other.mean - self.mean
        self.mean = self.mean + d * (other.n / n)
        self.m2 = self.m2 + other.m2 + d * d * (self.n * other.n / n)
        self.n = n
        return self

    @property
    def var(self) -> np.ndarray:
        return self.m2 / (self.n - 1) if self.n > 1 else np.zeros_like(self.m2)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(self.var, 0.0, None))


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the endpoints are exact when no or all trials succeed
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return (lo, hi)


@dataclass
class MethodConfig:
    """What to simulate and how to report it.

    Components are the slow coordinates (in molecule counts unless
    ``normalized``); the ``fast`` method reports all species in normalized
    units at the slow state frozen from ``x0``.
    """

    method: str
    net: ReactionNetwork
    spec: ScalingSpec
    t_end: float
    grid: Optional[np.ndarray] = None
    dt: Optional[float] = None
    x0: Optional[np.ndarray] = None
    normalized: bool = False
    ssa_method: str = "direct"
    aggregate: Optional[str] = None
    filter_survivors: bool = False
    threshold: float = 1.0
    fast_level: int = 1
    max_events: int = 10 ** 8
    model: Optional[MultiscaleModel] = field(default=None, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        self.grid = np.linspace(0.0, self.t_end, 200) if self.grid is None else np.asarray(self.grid, dtype=float)
        if self.x0 is None:
            self.x0 = self.net.initial_state

    def get_model(self) -> MultiscaleModel:
        if self.model is None:
            self.model = MultiscaleModel(self.net, self.spec)
        return self.model

    @property
    def slow_rows(self) -> np.ndarray:
        return self.get_model().slow_rows

    def component_names(self) -> tuple:
        if self.method == "fast":
            return tuple(s.name for s in self.net.species)
        return self.get_model().slow_names


@dataclass
class EnsembleSummary:
    method: str
    runs: int
    times: np.ndarray
    names: tuple
    mean: np.ndarray
    std: np.ndarray
    failures: int = 0
    discarded: int = 0
    absorbed_fraction: Optional[float] = None
    absorbed_ci: Optional[tuple] = None
    extra: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return self.std / math.sqrt(max(self.runs, 1))

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["t"]
        for c in self.names:
            cols += [f"mean_{c}", f"std_{c}", f"se_{c}"]
        buf.write(",".join(cols) + "\n")
        se = self.se
        for g, t in enumerate(self.times):
            row = [repr(float(t))]
            for j in range(len(self.names)):
                row += [repr(float(self.mean[g, j])), repr(float(self.std[g, j])), repr(float(se[g, j]))]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


# --- per-method path generators ------------------------------------------------------------

def _first_passage(comp: np.ndarray, lower: float, upper: float):
    """Grid indices of the first visit to <= lower and >= upper (len if never)."""
    G = len(comp)
    lo = np.nonzero(comp <= lower)[0]
    hi = np.nonzero(comp >= upper)[0]
    return (lo[0] if lo.size else G), (hi[0] if hi.size else G)


def _ssa_chunk(cfg: MethodConfig, seed, indices):
    m = cfg.get_model()
    factor = np.ones(m.d0) if cfg.normalized else m.count_factor
    stats = RunningStats((len(cfg.grid), m.d0))
    failures = discarded = 0
    for i in indices:
        try:
            tr = ssa_simulate(cfg.net, cfg.spec, cfg.x0, cfg.t_end, seed=[*np.atleast_1d(seed), i], grid=cfg.grid,
                              method=cfg.ssa_method, aggregate=cfg.aggregate, max_events=cfg.max_events)
        except SimulationError:
            failures += 1
            continue
        v = m.slow_from_counts(tr.states)
        if cfg.filter_survivors:
            lo, hi = _first_passage(v[:, 0], 0.0, cfg.threshold)
            if not hi < lo:
                discarded += 1
                continue
        stats.push(v * factor)
    return stats, failures, discarded


def _sde_chunk(cfg: MethodConfig, seed, indices):
    m = cfg.get_model()
    v0 = m.initial_slow(cfg.x0)
    first, n = indices[0], len(indices)
    factor = np.ones(m.d0) if cfg.normalized else m.count_factor
    stats = RunningStats((len(cfg.grid), m.d0))
    discarded = 0
    if cfg.method == "lna":
        pb = lna_simulate(m.lna_spec(v0), np.zeros(m.d0), cfg.t_end, dt=cfg.dt, seed=seed, n_paths=n,
                          grid=cfg.grid, first_index=first)
        paths = pb.companion[None] + pb.states / m.r_N
    else:
        bd = Boundary(stop_component=0, lower=0.0, upper=cfg.threshold, track=True) if cfg.filter_survivors \
            else Boundary()
        pb = diffusion_simulate(m.diffusion_spec(), v0, cfg.t_end, dt=cfg.dt, seed=seed, n_paths=n,
                                grid=cfg.grid, boundary=bd, first_index=first)
        paths = pb.states
    for j in range(n):
        if cfg.filter_survivors and cfg.method == "diffusion" and not pb.hit_time_upper[j] < pb.hit_time_lower[j]:
            discarded += 1
            continue
        stats.push(paths[j] * factor)
    return stats, 0, discarded


def _fast_chunk(cfg: MethodConfig, seed, indices):
    m = cfg.get_model()
    lev = m.dec.level(cfg.fast_level)
    if lev.empty:
        raise EnsembleError(f"no fast level {cfg.fast_level}")
    gen = limit_generator(lev, cfg.net)
    frozen = np.asarray(cfg.x0, dtype=float) / count_scale(cfg.net, cfg.spec)
    stats = RunningStats((len(cfg.grid), cfg.net.n_species))
    for i in indices:
        tr = fast_subnetwork_simulate(gen, frozen, cfg.net, cfg.t_end, seed=[*np.atleast_1d(seed), i],
                                      n_out=len(cfg.grid))
        stats.push(tr.states)
    return stats, 0, 0


def run_ensemble(cfg: MethodConfig, runs: int, seed=0, threads: int = 1, chunk: int = CHUNK) -> EnsembleSummary:
    """Mean and standard deviation of the configured components over ``runs`` trajectories."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    names = cfg.component_names()
    if cfg.method == "ode":
        m = cfg.get_model()
        tr = m.slow_ode(m.initial_slow(cfg.x0), cfg.t_end, grid=cfg.grid, dt=cfg.dt)
        states = tr.states if cfg.normalized else tr.states * m.count_factor
        return EnsembleSummary("ode", runs, cfg.grid, names, states, np.zeros_like(states))
    if cfg.method == "fast" and not np.allclose(cfg.grid, np.linspace(0, cfg.t_end, len(cfg.grid))):
        raise ValueError("the fast method reports on a uniform grid")
    worker = {"ssa": _ssa_chunk, "lna": _sde_chunk, "diffusion": _sde_chunk, "fast": _fast_chunk}[cfg.method]
    chunks = [list(range(a, min(a + chunk, runs))) for a in range(0, runs, chunk)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda idx: worker(cfg, seed, idx), chunks))
    else:
        parts = [worker(cfg, seed, idx) for idx in chunks]
    total = RunningStats((len(cfg.grid), len(names)))
    failures = discarded = 0
    for st, f, d in parts:
        total.merge(st)
        failures += f
        discarded += d
    if failures > MAX_FAILURE_FRACTION * runs:
        raise EnsembleError(f"{failures} of {runs} trajectories failed")
    if total.n == 0:
        raise EnsembleError("no trajectories left to summarize")
    out = EnsembleSummary(cfg.method, total.n, cfg.grid, names, total.mean, total.std, failures, discarded)
    if cfg.method == "lna":
        m = cfg.get_model()
        cp = m.variance(m.initial_slow(cfg.x0), cfg.t_end, grid=cfg.grid)
        factor = np.ones(m.d0) if cfg.normalized else m.count_factor
        out.extra["analytic_std"] = cp.std() / m.r_N * factor
        out.extra["ode_mean"] = cp.v * factor
    return out


# --- absorption -------------------------------------------------------------------------------

@dataclass
class AbsorptionResult:
    method: str
    k: int
    runs: int
    lower: int
    upper: int
    censored: int
    t_cap: float

    @property
    def resolved(self) -> int:
        return self.lower + self.upper

    @property
    def estimate(self) -> float:
        return self.lower / self.resolved if self.resolved else float("nan")

    @property
    def ci(self) -> tuple:
        return wilson_interval(self.lower, self.resolved)

    def record(self) -> dict:
        lo, hi = self.ci
        return {"method": self.method, "k": self.k, "runs": self.runs, "absorbed": self.lower,
                "reached_threshold": self.upper, "censored": self.censored, "estimate": self.estimate,
                "ci_low": lo, "ci_high": hi, "time_cap": self.t_cap}


def _tabulated_coefficients(m: MultiscaleModel, upper: float, nodes: int = 4001):
    """Cubic-spline tables of the scalar diffusion drift and variance on [0, upper].

    The averaged coefficients are smooth, so the tables are accurate to
    roughly 1e-12 relative while avoiding a full evaluation per step.
    """
    from scipy.interpolate import CubicSpline

    xs = np.linspace(0.0, upper, nodes)
    b = (m.F(xs[:, None]) + m.first_order(xs[:, None]) / m.r_N)[:, 0]
    v = m.G(xs[:, None])[:, 0, 0] / m.r_N ** 2
    bs, vs = CubicSpline(xs, b), CubicSpline(xs, v)
    return (lambda x: bs(np.clip(x, 0.0, upper)),
            lambda x: np.maximum(vs(np.clip(x, 0.0, upper)), 0.0))


def absorption_probability(cfg: MethodConfig, k: int, runs: int, seed=0, threshold: Optional[float] = None,
                           t_cap: Optional[float] = None, eta: float = 0.005) -> AbsorptionResult:
    """Fraction of runs started from k molecules of the (single) slow species that die out
    before reaching ``threshold`` (normalized units).

    Runs resolved by neither boundary before ``t_cap`` (default: 100
    relaxation times of the averaged drift at the start) are censored.
    """
    m = cfg.get_model()
    if m.d0 != 1 or m.slow_names[0] not in cfg.net.index:
        raise ValueError("absorption needs a single slow species")
    thr = cfg.threshold if threshold is None else threshold
    sp = m.slow_names[0]
    fac = m.count_factor[0]
    x0 = np.array(cfg.x0, dtype=np.int64)
    x0[cfg.net.index[sp]] = k
    v_start = k / fac
    if t_cap is None:
        t_cap = 100 * m.relaxation_time(np.array([max(v_start, 1e-9)]))
        if not np.isfinite(t_cap):
            t_cap = 100 * cfg.t_end
    if cfg.method == "ssa":
        lower = upper = cens = 0
        rule = StoppingRule(sp, upper=thr * fac)
        for i in range(runs):
            tr = ssa_simulate(cfg.net, cfg.spec, x0, t_cap, seed=[*np.atleast_1d(seed), i], grid=[0.0, t_cap],
                              method=cfg.ssa_method, aggregate=cfg.aggregate, stop=rule, max_events=cfg.max_events)
            at = tr.meta["stopped_at"]
            lower += at == "lower"
            upper += at == "upper"
            cens += at is None
        return AbsorptionResult("ssa", k, runs, lower, upper, cens, t_cap)
    if cfg.method == "diffusion":
        drift, var = _tabulated_coefficients(m, thr)
        outc, _ = hitting_diffusion(drift, var, v_start, 0.0, thr, seed=seed, n_paths=runs, eta=eta, t_cap=t_cap)
        return AbsorptionResult("diffusion", k, runs, int(np.sum(outc == 0)), int(np.sum(outc == 1)),
                                int(np.sum(outc < 0)), t_cap)
    raise ValueError(f"absorption is available for ssa and diffusion, not {cfg.method}")


# --- comparison -------------------------------------------------------------------------------

@dataclass
class ComparisonTable:
    times: np.ndarray
    names: tuple
    methods: tuple
    summaries: tuple
    deviations: dict  # method -> {"mean": (C,), "std": (C,)} max relative deviation from the reference
    reference: str

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["t"]
        for s in self.summaries:
            for c in self.names:
                cols += [f"mean_{c}_{s.method}", f"std_{c}_{s.method}"]
        buf.write(",".join(cols) + "\n")
        for g, t in enumerate(self.times):
            row = [repr(float(t))]
            for s in self.summaries:
                for j in range(len(self.names)):
                    row += [repr(float(s.mean[g, j])), repr(float(s.std[g, j]))]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def deviation_csv(self) -> str:
        lines = ["method,component,max_rel_dev_mean,max_rel_dev_std"]
        for meth, dev in self.deviations.items():
            for j, c in enumerate(self.names):
                lines.append(f"{meth},{c},{float(dev['mean'][j])!r},{float(dev['std'][j])!r}")
        return "\n".join(lines) + "\n"


def _rel(a, b):
    den = np.maximum(np.abs(b), 1e-12 * max(1.0, float(np.max(np.abs(b))) if b.size else 1.0))
    return np.max(np.abs(a - b) / den, axis=0)


def compare_report(summaries: Sequence[EnsembleSummary], reference: Optional[str] = None) -> ComparisonTable:
    """Per-time table of each method's mean/std and max relative deviation from the reference."""
    if not summaries:
        raise ValueError("nothing to compare")
    base = summaries[0]
    for s in summaries[1:]:
        if len(s.times) != len(base.times) or not np.allclose(s.times, base.times, rtol=0, atol=1e-12):
            raise GridMismatchError(f"time grids of {base.method} and {s.method} differ")
        if s.names != base.names:
            raise GridMismatchError(f"components of {base.method} and {s.method} differ")
    methods = tuple(s.method for s in summaries)
    if reference is None:
        reference = "ssa" if "ssa" in methods else methods[0]
    ref = summaries[methods.index(reference)]
    # skip t = 0 rows where the reference std vanishes
    mask = np.any(ref.std > 0, axis=1) if len(summaries) > 1 else np.ones(len(ref.times), bool)
    devs = {}
    for s in summaries:
        if s is ref:
            continue
        devs[s.method] = {"mean": _rel(s.mean[mask], ref.mean[mask]), "std": _rel(s.std[mask], ref.std[mask])}
    return ComparisonTable(base.times, base.names, methods, tuple(summaries), devs, reference)


def means_within_se(a: EnsembleSummary, b: EnsembleSummary, k: float = 3.0, rows=None) -> np.ndarray:
    """|mean_a - mean_b| <= k * sqrt(se_a^2 + se_b^2), per grid row and component."""
    rows = slice(None) if rows is None else rows
    se = np.sqrt(a.se[rows] ** 2 + b.se[rows] ** 2)
    return np.abs(a.mean[rows] - b.mean[rows]) <= k * se + 1e-12
