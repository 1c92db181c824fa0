"""One object bundling decomposition, averaging and fluctuation pieces for a network.

:class:`MultiscaleModel` is what the simulators and the command line use: it
exposes the averaged drift, its Jacobian, the diffusion matrix and ready-made
SDE specifications for the CLT process U and the Langevin diffusion D^N, all
in slow coordinates v0 (normalized units).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .averaging import AveragedModel, drift_jacobian
from .deterministic import CovariancePath, batched, ode_solve, variance_ode
from .network import ReactionNetwork, ScalingSpec, count_scale
from .poisson import CorrectionModel, psd_sqrt
from .scales import choose_gamma, limit_generator
from .subspace import MultiscaleDecomposition, decompose
from .trajectory import SdeSpec, Trajectory


def _slow_names(dec: MultiscaleDecomposition) -> tuple:
    names = []
    sp = [s.name for s in dec.net.species]
    for l, theta in enumerate(dec.slow_basis.rational):
        nz = [i for i, x in enumerate(theta) if x != 0]
        names.append(sp[nz[0]] if len(nz) == 1 else f"v0_{l}")
    return tuple(names)


class MultiscaleModel:
    """Averaged slow dynamics and their Gaussian fluctuation limit."""

    def __init__(self, net: ReactionNetwork, spec: ScalingSpec, constants=None):
        self.net = net
        self.spec = spec
        self.dec = decompose(net, spec)
        self.avg = AveragedModel(self.dec, constants)
        self.corr = CorrectionModel(self.avg)
        self.p: Fraction = self.corr.p
        self.r_N = float(spec.N) ** float(self.p)
        self.d0 = self.dec.d0
        self.slow_names = _slow_names(self.dec)
        self.slow_alphas = self.dec.slow_basis.alphas
        # raw count = N^alpha * normalized slow coordinate
        self.count_factor = np.array([float(spec.N) ** float(a) for a in self.slow_alphas])
        self._jac = drift_jacobian(self.avg.F_bar)

    # -- coordinates -----------------------------------------------------------------
    @property
    def slow_rows(self) -> np.ndarray:
        return self.dec.slow_basis.float_vectors(self.net.n_species)

    def slow_from_counts(self, x) -> np.ndarray:
        """Normalized slow coordinates of count states x (..., S)."""
        z = np.asarray(x, dtype=float) / count_scale(self.net, self.spec)
        return z @ self.slow_rows.T

    def initial_slow(self, x0=None) -> np.ndarray:
        return self.slow_from_counts(self.net.initial_state if x0 is None else x0)

    # -- evaluators on 1-D or batched slow states ------------------------------------------
    def F(self, v0) -> np.ndarray:
        return self.avg.F_bar(np.atleast_2d(v0))

    def jacobian(self, v0) -> np.ndarray:
        return self._jac(np.atleast_2d(v0))

    def G(self, v0) -> np.ndarray:
        return self.corr.G_bar(np.atleast_2d(v0))

    def sigma(self, v0) -> np.ndarray:
        return psd_sqrt(self.G(v0))

    def first_order(self, v0) -> np.ndarray:
        """G0_bar + G1_bar."""
        v0 = np.atleast_2d(v0)
        return self.corr.G0_bar(v0) + self.corr.G1_bar(v0)

    # -- solvers -----------------------------------------------------------------------
    def slow_ode(self, v0, t_end, grid=None, n_out: int = 200, dt=None) -> Trajectory:
        return ode_solve(batched(self.F), v0, t_end, dt=dt, grid=grid, n_out=n_out, names=self.slow_names)

    def variance(self, v0, t_end, grid=None, n_out: int = 200, dt=None) -> CovariancePath:
        d = self.d0
        return variance_ode(lambda v: self.jacobian(v)[0].reshape(d, d), lambda v: self.G(v)[0], batched(self.F),
                            v0, t_end, grid=grid, n_out=n_out, dt=dt)

    def lna_spec(self, v0) -> SdeSpec:
        """SDE of U co-integrated with V0 from ``v0``."""
        d = self.d0

        def drift(u, v):
            J = self.jacobian(v)[0]
            return u @ J.T + self.first_order(v)

        def noise(u, v):
            return np.broadcast_to(self.sigma(v)[0], (u.shape[0], d, d))

        return SdeSpec(drift, noise, 1.0, d, d, companion=batched(self.F),
                       companion_init=np.atleast_1d(np.asarray(v0, dtype=float)), names=self.slow_names)

    def diffusion_spec(self) -> SdeSpec:
        """Langevin diffusion D^N: drift F + r_N^-1 (G0 + G1), noise scale r_N^-1."""
        d = self.d0
        r = self.r_N

        def drift(x, _v):
            return self.F(x) + self.first_order(x) / r

        def noise(x, _v):
            return self.sigma(x)

        return SdeSpec(drift, noise, 1.0 / r, d, d, names=self.slow_names)

    def relaxation_time(self, v0) -> float:
        """1 / largest |Re eigenvalue| of the drift Jacobian at v0 (inf if all vanish)."""
        ev = np.linalg.eigvals(self.jacobian(v0)[0])
        rate = float(np.max(np.abs(ev.real))) if ev.size else 0.0
        return 1.0 / rate if rate > 1e-12 else np.inf

    # -- text report ---------------------------------------------------------------------
    def report(self, grid=None) -> "AnalysisReport":
        return analysis_report(self, grid)


@dataclass
class AnalysisReport:
    text: str
    tables: dict  # name -> (header, rows)

    def table_csv(self, name: str) -> str:
        header, rows = self.tables[name]
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(str(x) for x in row) + "\n")
        return buf.getvalue()


def _vec(v) -> str:
    return "(" + ", ".join(str(x) for x in v) + ")"


def analysis_report(model: MultiscaleModel, grid=None) -> AnalysisReport:
    net, spec, dec = model.net, model.spec, model.dec
    lines = [f"network {net.name}: {net.n_species} species, {net.n_reactions} reactions",
             f"N = {spec.N}, gamma = {spec.gamma}, normalizing gamma* = {choose_gamma(net, spec)}", ""]
    tables = {}
    rows = [(r.name, str(r.beta), str(rho - spec.gamma), str(rho)) for r, rho in zip(net.reactions, dec.rho)]
    tables["rho"] = (("reaction", "beta", "rho", "rho_plus_gamma"), rows)
    lines.append("reaction exponents rho_k (before the time change) and rho_k + gamma:")
    lines += [f"  {n:>6}  beta={b:>6}  rho={rho:>5}  rho+gamma={rg}" for n, b, rho, rg in rows]
    lines.append("")
    lines.append("time-scale levels:")
    for i in sorted(dec.levels, reverse=True):
        lev = dec.levels[i]
        rn = lambda ks: ", ".join(net.reactions[k].name for k in ks) or "-"
        lines.append(f"  level {i}: m = {lev.m}")
        lines.append(f"    jump class:  {rn(lev.jump_class)}")
        lines.append(f"    drift class: {rn(lev.drift_class)}")
        lines.append(f"    basis: {', '.join(_vec(b) for b in lev.basis.rational) or '-'}")
        if i > 0:
            gen = limit_generator(lev, net)
            lines.append(f"    limit process: {gen.kind}")
        for k, vec in sorted(lev.limiting_vectors.items()):
            lines.append(f"    {net.reactions[k].name}: limiting vector {_vec(vec)}")
    lines.append(f"  conserved directions: {', '.join(_vec(b) for b in dec.constant_basis.rational) or '-'}")
    for msg in dec.diagnostics:
        lines.append(f"  note: {msg}")
    lines.append("")
    sel = model.corr.r_exponent
    lines.append(f"fluctuation exponent p = {model.p} (r_N = N^{model.p}), fixed by {sel.binding}")
    lines.append("  bounds: " + (", ".join(f"{k}={v}" for k, v in sel.bounds.items()) or "none"))
    lines.append(f"  G0 terms: {len(model.corr.G0_terms)}")
    for l, k, c in model.corr.G0_terms:
        lines.append(f"    slow row {l}: {net.reactions[k].name} x {c:g}")
    nz = [e for e in model.corr.ledger if e["status"] == "nonzero"]
    lines.append(f"  G1 ledger: {len(model.corr.ledger)} terms, {len(nz)} nonzero")
    for e in model.corr.ledger:
        lines.append(f"    {e['term']:<14} level {e['level']} {e['reaction']:<6} {e['status']:<8} {e['detail']}")
    lines.append("")
    if grid is None:
        v0 = model.initial_slow()
        hi = np.maximum(2 * np.abs(v0), 1.0)
        grid = np.linspace(0.05, 1.0, 20)[:, None] * hi[None, :]
    grid = np.atleast_2d(grid)
    F = model.F(grid)
    J = model.jacobian(grid)
    G = model.G(grid)
    d = model.d0
    header = tuple(f"v0_{i}" for i in range(d)) + tuple(f"F_{i}" for i in range(d)) + \
        tuple(f"dF_{i}{j}" for i in range(d) for j in range(d)) + tuple(f"G_{i}{j}" for i in range(d) for j in range(d))
    rows = [tuple(f"{x:.10g}" for x in np.concatenate([grid[n], F[n], J[n].ravel(), G[n].ravel()]))
            for n in range(grid.shape[0])]
    tables["averaged"] = (header, rows)
    lines.append(f"averaged drift, Jacobian and diffusion matrix on {len(rows)} slow states "
                 f"(slow coordinates {', '.join(model.slow_names)}):")
    lines.append("  " + "  ".join(f"{h:>12}" for h in header))
    lines += ["  " + "  ".join(f"{x:>12}" for x in r) for r in rows]
    return AnalysisReport("\n".join(lines) + "\n", tables)
