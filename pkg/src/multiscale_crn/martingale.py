"""Compensated slow martingales along exact SSA paths.

For the slow coordinate V0^N = theta . Z^N,

    M1(t) = V0^N(t) - V0^N(0) - int_0^t F^N(Z^N(s)) ds
    M2(t) = H_N(Z^N(t)) - H_N(Z^N(0)) - int_0^t A_N H_N(Z^N(s)) ds

are martingales, and r_N (M1 - M2) has the Gaussian limit with variance
int Gbar(V0) ds.  The time integrals are taken exactly: the path is split
into stretches where the slow species are constant, both integrands are
polynomials of degree <= 2 in the remaining species on a stretch, and the
SSA records the first and second time moments of the state per stretch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import _falling, count_scale
from .pipeline import MultiscaleModel
from .ssa import compile_network, ssa_segments


@dataclass
class MartingaleSample:
    m1: np.ndarray       # (d0,)
    m2: np.ndarray
    scaled: np.ndarray   # r_N (m1 - m2)
    quadratic_error: float  # largest deviation of the integrands from their quadratic fit
    events: int


def _polynomial_propensities(net, kap, x):
    """Mass-action propensities as polynomials (no clipping), x (..., S) -> (..., K)."""
    out = np.broadcast_to(kap, x.shape[:-1] + (net.n_reactions,)).copy()
    for k in range(net.n_reactions):
        for i in np.nonzero(net.nu_in[k])[0]:
            out[..., k] *= _falling(x[..., i], int(net.nu_in[k, i]))
    return out


class MartingaleIntegrands:
    """F^N and A_N H_N as functions of count states, in the simulation's time units."""

    def __init__(self, model: MultiscaleModel):
        self.model = model
        net, spec = model.net, model.spec
        self.net = net
        self.kap = compile_network(net, spec).kap
        self.scale = count_scale(net, spec)
        rows = model.slow_rows
        self.theta_zeta = (net.zeta @ rows.T) / model.count_factor  # (K, d0) normalized slow jumps
        self.to_coords = np.linalg.inv(model.avg.T)  # z = v @ T

    def slow(self, x):
        return (np.asarray(x, dtype=float) / self.scale) @ self.model.slow_rows.T

    def H(self, x):
        v = (np.asarray(x, dtype=float) / self.scale) @ self.to_coords
        return self.model.corr.H(v.reshape(-1, v.shape[-1])).reshape(v.shape[:-1] + (self.model.d0,))

    def drift(self, x):
        return _polynomial_propensities(self.net, self.kap, x) @ self.theta_zeta

    def generator_H(self, x):
        lam = _polynomial_propensities(self.net, self.kap, x)
        h0 = self.H(x)
        out = np.zeros_like(h0)
        for k in range(self.net.n_reactions):
            out += lam[..., k, None] * (self.H(x + self.net.zeta[k]) - h0)
        return out


def _quadratic_integrals(f, m, dur, cov, var_idx, check=True):
    """int f over stretches, f quadratic in the species ``var_idx``.

    m: (n, S) stretch means, cov: (n, S, S) int (x - m)(x - m)^T ds.
    Returns (integrals (n, d), max relative misfit at a test point).
    """
    n, S = m.shape
    h = np.maximum(1.0, np.abs(m))
    f0 = f(m)
    total = f0 * dur[:, None]
    E = np.eye(S)
    hess = {}
    for a in var_idx:
        ea = E[a] * h[:, a:a + 1]
        hess[a, a] = (f(m + ea) - 2 * f0 + f(m - ea)) / (h[:, a, None] ** 2)
        for b in var_idx:
            if b <= a:
                continue
            eb = E[b] * h[:, b:b + 1]
            hess[a, b] = (f(m + ea + eb) - f(m + ea - eb) - f(m - ea + eb) + f(m - ea - eb)) / \
                (4 * h[:, a, None] * h[:, b, None])
    for (a, b), H in hess.items():
        w = cov[:, a, b] if a == b else 2 * cov[:, a, b]
        total += 0.5 * H * w[:, None]
    err = 0.0
    if check and var_idx:
        # an off-stencil point must match the fitted quadratic
        d = np.zeros((n, S))
        for j, a in enumerate(var_idx):
            d[:, a] = h[:, a] * (0.5 + 0.25 * j)
        lin = (f(m + d) - f(m - d)) / 2
        quad = sum(0.5 * H * (d[:, a] * d[:, b] * (1 if a == b else 2))[:, None] for (a, b), H in hess.items())
        pred = f0 + lin + quad
        got = f(m + d)
        err = float(np.max(np.abs(got - pred) / np.maximum(1.0, np.abs(got))))
    return total, err


def compensated_martingale(model: MultiscaleModel, x0=None, t_end: float = 1.0, seed=None,
                           integrands: MartingaleIntegrands = None) -> MartingaleSample:
    """One SSA path's M1, M2 and r_N (M1 - M2) at ``t_end``."""
    net = model.net
    ig = integrands or MartingaleIntegrands(model)
    slow_sp = [s.name for s, a in zip(net.species, net.alphas) if any(
        row[net.index[s.name]] != 0 for row in model.slow_rows)]
    x0 = net.initial_state if x0 is None else np.asarray(x0)
    seg = ssa_segments(net, model.spec, slow_sp, x0, t_end, seed=seed)
    dur = seg["duration"]
    keep = dur > 0
    dur = dur[keep]
    int_x, int_xx = seg["int_x"][keep], seg["int_xx"][keep]
    m = int_x / dur[:, None]
    cov = int_xx - np.einsum("ni,nj->nij", m, m) * dur[:, None, None]
    var_idx = [i for i in range(net.n_species) if net.species[i].name not in slow_sp]
    int_F, e1 = _quadratic_integrals(ig.drift, m, dur, cov, var_idx)
    int_AH, e2 = _quadratic_integrals(ig.generator_H, m, dur, cov, var_idx)
    x0f = np.asarray(x0, dtype=float)
    xT = np.asarray(seg["final_state"], dtype=float)
    m1 = ig.slow(xT) - ig.slow(x0f) - int_F.sum(axis=0)
    m2 = ig.H(xT) - ig.H(x0f) - int_AH.sum(axis=0)
    return MartingaleSample(m1, m2, model.r_N * (m1 - m2), max(e1, e2), seg["events"])
