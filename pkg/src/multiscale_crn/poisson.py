"""Corrector functions, the fluctuation exponent p and the diffusion matrix.

Each Poisson equation is solved with a corrector linear in the fast
coordinates, h(v) = U(slower) w, whose coefficient matrix U solves
``U B = C`` pointwise (B from the level's moment system, C the slope of the
right-hand side).  Everything is evaluated on demand in batches.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import exact
from .averaging import AveragedModel, AveragingError
from .network import ReactionNetwork, ScalingSpec, normalized_propensities
from .scales import PipelineError
from .subspace import MultiscaleDecomposition


def _solve_right(B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """U with U B = C for stacks B (n, q, q), C (n, d, q)."""
    try:
        Ut = np.linalg.solve(np.swapaxes(B, 1, 2), np.swapaxes(C, 1, 2))
    except np.linalg.LinAlgError:
        raise PipelineError("singular matching system for the linear corrector") from None
    return np.swapaxes(Ut, 1, 2)


@dataclass
class LinearAnsatzSolution:
    """h(v) = U(slower coords) @ w_fast for one Poisson equation.

    ``coefficients(y)`` returns U with shape (n, d0, q) at slower coordinates y.
    """

    which: str
    level: int
    coefficients: Callable
    prefix_length: int
    fast: slice
    residual_bound: float = 0.0

    def __call__(self, v) -> np.ndarray:
        v = np.atleast_2d(v)
        U = self.coefficients(v[:, :self.prefix_length])
        return np.einsum("nlj,nj->nl", U, v[:, self.fast])


def _residual(gen_apply, rhs, q, y) -> float:
    """sup over w in {0, e_j} of |generator(h) - rhs|."""
    pts = [np.zeros(q)] + list(np.eye(q))
    worst = 0.0
    for w in pts:
        r = gen_apply(y, w) - rhs(y, w)
        worst = max(worst, float(np.max(np.abs(r))) if r.size else 0.0)
    return worst


def solve_poisson_linear_ansatz(B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Pointwise coefficient matrices U solving U B = C (batched)."""
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    if B.ndim == 2:
        return _solve_right(B[None], C[None])[0]
    return _solve_right(B, C)


class CorrectionModel:
    """Everything needed for the fluctuation limit of the slow coordinates."""

    def __init__(self, avg: AveragedModel, p: Optional[Fraction] = None):
        self.avg = avg
        self.dec = avg.dec
        self.net = avg.net
        self.spec = self.dec.spec
        self.d0 = avg.d0
        self._terms = _jump_terms(self.dec)
        sel = select_r_exponent(self.dec, self._terms)
        self.r_exponent = sel
        self.p = sel.p if p is None else Fraction(p)
        self._build_qv()
        self.ledger = g1_ledger(self.dec, self.p)
        self.G0_terms = _g0_terms(self.dec, self.p)

    # -- corrector coefficients ----------------------------------------------------
    def _stage_for_level(self, level_index: int) -> int:
        for d, st in enumerate(self.avg.stages, start=1):
            if st.level.index == level_index:
                return d
        raise KeyError(level_index)

    def U1(self, y) -> np.ndarray:
        """Coefficients of h1 (slowest fast level) at (v0, c); shape (n, d0, q1)."""
        D = self.avg.depth
        if D == 0:
            return np.zeros((np.atleast_2d(y).shape[0], self.d0, 0))
        y = np.atleast_2d(y)[:, :self.avg.lengths[D]]
        info = self.avg.stage(D, y)
        C = np.einsum("kl,njk->nlj", self.avg.zeta0, _nan0(info["g"]))
        return _solve_right(info["B"], C)

    def U23(self, y):
        """(U2, U3) coefficients of h2, h3 on the fastest level at (v0, c, w1)."""
        if self.avg.depth < 2:
            raise KeyError("no second fast level")
        y = np.atleast_2d(y)[:, :self.avg.lengths[1]]
        info = self.avg.stage(1, y)
        g = _nan0(info["g"])
        C2 = np.einsum("kl,njk->nlj", self.avg.zeta0, g)
        st1 = self.avg.stages[1]  # slower fast level (index 1)
        U1 = self.U1(y)
        # (averaged minus plain level-1 generator) applied to h1 = -sum_{k in level 1} (lambda_k - lambda_bar_k) U1 delta_k
        Ud = np.einsum("nlj,rj->nlr", U1, st1.delta)  # (n, d0, R)
        C3 = -np.einsum("nlr,nir->nli", Ud, g[:, :, st1.rx])
        return _solve_right(info["B"], C2), _solve_right(info["B"], C3)

    def solutions(self) -> dict:
        out = {}
        dec = self.dec
        D = self.avg.depth
        if D >= 1:
            out["h1"] = LinearAnsatzSolution("h1", self.avg.stages[-1].level.index, self.U1,
                                             self.avg.lengths[D], dec.block(self.avg.stages[-1].level.index))
        if D >= 2:
            out["h2"] = LinearAnsatzSolution("h2", 2, lambda y: self.U23(y)[0], self.avg.lengths[1], dec.block(2))
            out["h3"] = LinearAnsatzSolution("h3", 2, lambda y: self.U23(y)[1], self.avg.lengths[1], dec.block(2))
        return out

    def residuals(self, v0, n_random: int = 0, seed: int = 0) -> dict:
        """Poisson residuals at fast basis points (plus random fast states)."""
        return poisson_residuals(self, v0, n_random, seed)

    def H(self, v, N: Optional[float] = None) -> np.ndarray:
        """Corrector H_N at decomposition coordinates v (n, S), where z = v @ T."""
        N = float(self.spec.N if N is None else N)
        v = np.atleast_2d(v)
        out = np.zeros((v.shape[0], self.d0))
        sols = self.solutions()
        fast = [lv for lv in self.dec.fast_levels]
        m = {lv.index: float(lv.m) for lv in fast}
        if "h1" in sols:
            out += N ** (-m[sols["h1"].level]) * sols["h1"](v)
        if "h2" in sols:
            out += N ** (-m[2]) * (sols["h2"](v) + sols["h3"](v))
        return out

    # -- quadratic variation ------------------------------------------------------
    def _build_qv(self):
        p = self.p
        self.qv_contrib = {}  # k -> list of (l, [term ...]) at leading exponent
        for k, comps in self._terms.items():
            rho = self.dec.rho[k]
            lead = {}
            for l, terms in comps.items():
                E = max(t[0] for t in terms)
                lead[l] = E
                if 2 * p + rho + 2 * E > 0:
                    raise PipelineError(f"quadratic variation of reaction {self.net.reactions[k].name} "
                                        f"diverges at p = {p}")
            for l, terms in comps.items():
                if 2 * p + rho + 2 * lead[l] == 0:
                    self.qv_contrib.setdefault(k, []).append((l, [t for t in terms if t[0] == lead[l]]))
            for l, terms in comps.items():
                for t in terms:
                    if t[1] == "cross" and 2 * p + rho + t[0] + max(lead.values()) >= 0:
                        raise PipelineError(
                            f"reaction {self.net.reactions[k].name}: the corrector's variation across a "
                            "slower jump contributes to the quadratic variation (unsupported)")
        if not self.qv_contrib:
            raise PipelineError(f"no reaction contributes to the quadratic variation at p = {p}")
        self.uses_h23 = any(t[1] == "h23" for v in self.qv_contrib.values() for _, ts in v for t in ts)

    def _J(self, v) -> dict:
        """Leading jump coefficients J_k(v), shape (n, d0), for contributing reactions."""
        v = np.atleast_2d(v)
        n = v.shape[0]
        need_h1 = any(t[1] == "h1" for vv in self.qv_contrib.values() for _, ts in vv for t in ts)
        U1 = self.U1(v[:, :self.avg.lengths[self.avg.depth]]) if need_h1 else None
        U23 = None
        if self.uses_h23:
            U2, U3 = self.U23(v)
            U23 = U2 + U3
        out = {}
        for k, comps in self.qv_contrib.items():
            J = np.zeros((n, self.d0))
            for l, terms in comps:
                for _, kind, j, c in terms:
                    if kind == "slow":
                        J[:, l] += c
                    elif kind == "h1":
                        J[:, l] -= U1[:, l, j] * c
                    elif kind == "h23":
                        J[:, l] -= U23[:, l, j] * c
            out[k] = J
        return out

    def G(self, v) -> np.ndarray:
        """Unaveraged covariation density at full coordinates v, shape (n, d0, d0)."""
        v = np.atleast_2d(v)
        lam = normalized_propensities(self.net, v @ self.avg.T, limit=True)
        out = np.zeros((v.shape[0], self.d0, self.d0))
        for k, J in self._J(v).items():
            out += lam[:, k, None, None] * J[:, :, None] * J[:, None, :]
        return out

    def G_bar(self, v0) -> np.ndarray:
        """Averaged diffusion matrix, shape (n, d0, d0)."""
        y = self.avg.full_prefix(v0)
        if self.uses_h23:
            # J varies with the intermediate fast coordinates unless h2+h3 does not
            D = self.avg.depth
            Ew1 = self.avg.stage(D, y)["Ew"]
            yw = np.concatenate([y, Ew1], axis=1)
            shifted = np.concatenate([y, Ew1 + 0.37], axis=1)
            a, b = self._J(np.pad(yw, ((0, 0), (0, self.avg.stages[0].q)))), \
                self._J(np.pad(shifted, ((0, 0), (0, self.avg.stages[0].q))))
            if any(not np.allclose(a[k], b[k], rtol=1e-8, atol=1e-12) for k in a):
                raise AveragingError("moment closure unavailable for the diffusion matrix: the fast-level "
                                     "corrector depends on intermediate coordinates")
            J = a
        else:
            pad = self.net.n_species - y.shape[1]
            J = self._J(np.pad(y, ((0, 0), (0, pad))))
        lam = self.avg.lambda_bar(v0)
        out = np.zeros((y.shape[0], self.d0, self.d0))
        for k, Jk in J.items():
            if np.any(np.isnan(lam[:, k])):
                raise AveragingError(f"moment closure unavailable: {self.net.reactions[k].name} not affine")
            out += lam[:, k, None, None] * Jk[:, :, None] * Jk[:, None, :]
        out = 0.5 * (out + np.swapaxes(out, 1, 2))
        return out

    def sigma(self, v0) -> np.ndarray:
        return psd_sqrt(self.G_bar(v0))

    # -- first-order corrections ------------------------------------------------------
    def G0(self, v) -> np.ndarray:
        v = np.atleast_2d(v)
        lam = normalized_propensities(self.net, v @ self.avg.T, limit=True)
        return self._g0_from(lam)

    def G0_bar(self, v0) -> np.ndarray:
        return self._g0_from(self.avg.lambda_bar(v0))

    def _g0_from(self, lam) -> np.ndarray:
        out = np.zeros((lam.shape[0], self.d0))
        for l, k, c in self.G0_terms:
            if np.any(np.isnan(lam[:, k])):
                raise AveragingError(f"moment closure unavailable for G0 ({self.net.reactions[k].name})")
            out[:, l] += lam[:, k] * c
        return out

    def G1_bar(self, v0) -> np.ndarray:
        nonzero = [e for e in self.ledger if e["status"] == "nonzero"]
        if nonzero:
            warnings.warn(f"unevaluated nonzero correction terms: {len(nonzero)} "
                          "(second-order corrector terms); treated as zero", RuntimeWarning)
        return np.zeros((np.atleast_2d(v0).shape[0], self.d0))

    def cancellation_check(self, Ns=(1e3, 1e4, 1e5), n_states: int = 10, seed: int = 0) -> dict:
        """max |r_N (F^N - F) - G0| over random states for each N."""
        rng = np.random.default_rng(seed)
        v = rng.uniform(0.2, 2.0, (n_states, self.net.n_species))
        z = v @ self.avg.T
        z = np.abs(z) + 0.1
        out = {}
        for N in Ns:
            spec = ScalingSpec(int(N), self.spec.gamma)
            F_N = _drift_N(self.dec, z, spec)
            F_lim = normalized_propensities(self.net, z, limit=True) @ self.avg.zeta0
            G0 = self.G0(z @ self.avg.T.T)
            out[N] = float(np.max(np.abs(N ** float(self.p) * (F_N - F_lim) - G0)))
        return out


def _nan0(x):
    return np.where(np.isnan(x), 0.0, x)


def psd_sqrt(G: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetric square root of a stack of PSD matrices (eigenvalues >= -tol clamped)."""
    G = np.asarray(G, dtype=float)
    if G.ndim == 2:
        return psd_sqrt(G[None], tol)[0]
    w, V = np.linalg.eigh(G)
    if np.any(w < -tol * np.maximum(1.0, np.abs(w).max(axis=-1, keepdims=True))):
        raise PipelineError(f"diffusion matrix is indefinite (min eigenvalue {w.min():.3g})")
    w = np.clip(w, 0.0, None)
    return np.einsum("nij,nj,nkj->nik", V, np.sqrt(w), V)


def _drift_N(dec: MultiscaleDecomposition, z, spec: ScalingSpec) -> np.ndarray:
    """Finite-N slow compensator F^N(z) in slow coordinates."""
    net = dec.net
    lam = normalized_propensities(net, z, spec)
    N = float(spec.N)
    rho = [float(r - dec.spec.gamma + spec.gamma) for r in dec.rho]
    out = np.zeros((z.shape[0], dec.d0))
    for l, (theta, a) in enumerate(zip(dec.slow_basis.rational, dec.slow_basis.alphas)):
        tvec = dec.slow_basis.vectors[l]
        for k in range(net.n_reactions):
            c = float(tvec @ net.zeta[k])
            if c != 0:
                out[:, l] += N ** (rho[k] - float(a)) * lam[:, k] * c
    return out


# --- exponent bookkeeping ------------------------------------------------------------

def _jump_terms(dec: MultiscaleDecomposition) -> dict:
    """Structure of the jump of V0 - H_N per reaction and slow component.

    Returns {k: {l: [(exponent, kind, row, value), ...]}} where kind is
    'slow', 'h1', 'h23' or 'cross' (variation of a corrector's coefficients).
    """
    net = dec.net
    T = dec.T
    alphas = dec.row_alphas
    rat = dec.row_rational
    zeta_r = [[Fraction(int(x)) for x in row] for row in net.zeta]
    sl = dec.block("slow")
    fast = {lv.index: lv for lv in dec.fast_levels}
    slowest_fast = min(fast) if fast else None
    out = {}
    for k in range(net.n_reactions):
        comps = {}
        nz = [exact.dot(rat[r], zeta_r[k]) != 0 for r in range(len(rat))]
        proj = T @ net.zeta[k]
        for l in range(sl.stop):
            terms = []
            if nz[l]:
                terms.append((-alphas[l], "slow", l, float(proj[l])))
            if slowest_fast is not None:
                m1 = fast[slowest_fast].m
                b = dec.block(slowest_fast)
                for j, r in enumerate(range(b.start, b.stop)):
                    if nz[r]:
                        terms.append((-m1 - alphas[r], "h1", j, float(proj[r])))
                prefix = dec.d0 + dec.n_const
                for r in range(prefix):
                    if nz[r]:
                        terms.append((-m1 - alphas[r], "cross", r, 0.0))
            if len(fast) == 2:
                m2 = fast[2].m
                b = dec.block(2)
                for j, r in enumerate(range(b.start, b.stop)):
                    if nz[r]:
                        terms.append((-m2 - alphas[r], "h23", j, float(proj[r])))
                for r in range(dec.block(1).stop):
                    if nz[r]:
                        terms.append((-m2 - alphas[r], "cross", r, 0.0))
            main = [t for t in terms if t[1] != "cross"]
            if main:
                comps[l] = terms
        if comps:
            out[k] = comps
    return out


@dataclass
class RExponent:
    p: Fraction
    binding: str
    bounds: dict
    nontriviality: Fraction
    strict_upper: Optional[Fraction] = None


def select_r_exponent(dec: MultiscaleDecomposition, terms: Optional[dict] = None) -> RExponent:
    """Fluctuation exponent p (r_N = N^p) and the bound that fixes it."""
    net = dec.net
    rho = dec.rho
    terms = terms if terms is not None else _jump_terms(dec)
    # nontriviality: largest p keeping every quadratic-variation exponent <= 0
    cands = []
    for k, comps in terms.items():
        for l, ts in comps.items():
            E = max(t[0] for t in ts if t[1] != "cross")
            cands.append(-rho[k] / 2 - E)
    if not cands:
        raise PipelineError("no reaction moves the slow coordinates; no fluctuation limit")
    p_star = min(cands)

    zeta_r = [[Fraction(int(x)) for x in row] for row in net.zeta]
    alphas_sp = net.alphas
    bounds = {}

    def _min(vals):
        vals = list(vals)
        return min(vals) if vals else None

    slow = dec.slow_basis
    bounds["slow_jumps"] = _min(a - rho[k] for th, a in zip(slow.rational, slow.alphas)
                           for k in range(net.n_reactions)
                           if exact.dot(th, zeta_r[k]) != 0 and rho[k] < a)
    lev2, lev1 = dec.level(2), dec.level(1)
    if not lev2.empty:
        m2 = lev2.m
        bounds["fast2_linear"] = _min(alphas_sp[i] + m2 - rho[k] for k in range(net.n_reactions)
                               for i in range(net.n_species)
                               if zeta_r[k][i] != 0 and alphas_sp[i] + m2 - rho[k] > 0)
        bounds["fast2_quadratic"] = _min(2 * alphas_sp[i] + m2 - rho[k] for k in range(net.n_reactions)
                               for i in range(net.n_species) if zeta_r[k][i] != 0 and alphas_sp[i] > 0)
    upper = None
    if not lev1.empty:
        m1 = lev1.m
        b1 = dec.fast_bases[1]
        bounds["fast1_linear"] = _min(a + m1 - rho[k] for th, a in zip(b1.rational, b1.alphas)
                               for k in range(net.n_reactions)
                               if exact.dot(th, zeta_r[k]) != 0 and a + m1 - rho[k] > 0)
        bounds["fast1_quadratic"] = _min(2 * a + m1 - rho[k] for th, a in zip(b1.rational, b1.alphas)
                               for k in range(net.n_reactions)
                               if exact.dot(th, zeta_r[k]) != 0 and a > 0)
        upper = m1
    bounds = {k: v for k, v in bounds.items() if v is not None}
    for name, b in bounds.items():
        if p_star > b:
            raise PipelineError(f"fluctuation scaling unavailable: nontriviality exponent {p_star} "
                                f"exceeds bound {name} = {b}")
    if upper is not None and not p_star < upper:
        raise PipelineError(f"fluctuation exponent {p_star} is not below the fast exponent {upper}")
    if p_star <= 0:
        raise PipelineError(f"fluctuation exponent {p_star} is not positive")
    binding = [name for name, b in bounds.items() if b == p_star]
    return RExponent(p_star, ",".join(binding) if binding else "quadratic-variation", bounds, p_star, upper)


def _g0_terms(dec: MultiscaleDecomposition, p: Fraction) -> list:
    """(slow row, reaction, theta.zeta) triples with alpha_theta - rho_k = p."""
    net = dec.net
    out = []
    for l, (th, a) in enumerate(zip(dec.slow_basis.rational, dec.slow_basis.alphas)):
        for k in range(net.n_reactions):
            c = exact.dot(th, [Fraction(int(x)) for x in net.zeta[k]])
            if c != 0 and a - dec.rho[k] == p:
                out.append((l, k, float(dec.slow_basis.vectors[l] @ net.zeta[k])))
    return out


def compute_G0(dec: MultiscaleDecomposition, p: Fraction, avg: Optional[AveragedModel] = None) -> Callable:
    avg = avg or AveragedModel(dec)
    terms = _g0_terms(dec, p)

    def G0(v):
        v = np.atleast_2d(v)
        lam = normalized_propensities(dec.net, v @ dec.T, limit=True)
        out = np.zeros((v.shape[0], dec.d0))
        for l, k, c in terms:
            out[:, l] += lam[:, k] * c
        return out

    return G0


def g1_ledger(dec: MultiscaleDecomposition, p: Fraction) -> list:
    """Classify every second-order correction term as zero/nonzero by exponents.

    Entries are dicts with keys term, level, reaction, detail, status.
    """
    net = dec.net
    rho = dec.rho
    zeta_r = [[Fraction(int(x)) for x in row] for row in net.zeta]
    out = []

    def add(term, level, k, detail, nonzero):
        out.append({"term": term, "level": level, "reaction": net.reactions[k].name,
                    "detail": detail, "status": "nonzero" if nonzero else "zero"})

    for idx in (2, 1):
        lev = dec.level(idx)
        if lev.empty:
            continue
        m = lev.m
        if idx == 2:
            rows = [(f"species {s.name}", tuple(Fraction(int(i == j)) for j in range(net.n_species)), s.alpha)
                    for i, s in enumerate(net.species)]
        else:
            bases = [dec.slow_basis, dec.constant_basis, dec.fast_bases[1]]
            rows = [(f"theta{j}", th, a) for j, (th, a) in
                    enumerate((t, a) for b in bases for t, a in zip(b.rational, b.alphas))]
        for k in range(net.n_reactions):
            comps = [(name, a, exact.dot(th, zeta_r[k])) for name, th, a in rows]
            for name, a, c in comps:
                if c == 0 or rho[k] - a == m:
                    continue
                add("zeta_tilde", idx, k, name, p + rho[k] - m - a == 0)
            if k in lev.drift_class:
                surv = [(name, a) for name, a, c in comps if c != 0 and rho[k] - a == m]
                for n1, a1 in surv:
                    for n2, a2 in surv:
                        add("xi_tilde", idx, k, f"{n1},{n2}", p + rho[k] - m - a1 - a2 == 0)
            in_jp = any(c != 0 and a == 0 for _, a, c in comps) and m - rho[k] == p
            in_dp = k not in lev.drift_class and any(c != 0 and a > 0 and m - rho[k] + a == p
                                                     for _, a, c in comps)
            add("K_jump^p", idx, k, "membership", in_jp)
            add("K_drift^p", idx, k, "membership", in_dp)
    return out


def poisson_residuals(cm: CorrectionModel, v0, n_random: int = 0, seed: int = 0) -> dict:
    """Generator(h) - rhs at fast basis points (and random fast points) for each solution."""
    avg = cm.avg
    y0 = avg.full_prefix(v0)
    rng = np.random.default_rng(seed)
    res = {}
    D = avg.depth
    if D == 0:
        return res

    # h1 on the slowest fast level: generator uses rates averaged over faster levels
    st = avg.stages[-1]
    q = st.q
    ws = [np.zeros(q)] + list(np.eye(q)) + [rng.uniform(-2, 2, q) for _ in range(n_random)]
    U = cm.U1(y0)
    Fbar = avg.F_bar(v0)
    worst = 0.0
    for w in ws:
        yw = np.concatenate([y0, np.broadcast_to(w, (y0.shape[0], q))], axis=1)
        lam = avg._lam(D - 1, yw)
        gen = np.einsum("nlj,nr,rj->nl", U, lam[:, st.rx], st.delta)
        rhs = lam @ avg.zeta0 - Fbar
        worst = max(worst, float(np.max(np.abs(gen - rhs))))
    res["h1"] = worst
    if D >= 2:
        st2, st1 = avg.stages[0], avg.stages[1]
        Ew1 = avg.stage(D, y0)["Ew"]
        ws1 = [Ew1] + [Ew1 + rng.uniform(-1, 1, Ew1.shape) for _ in range(max(1, n_random // 10))]
        w2s = [np.zeros(st2.q)] + list(np.eye(st2.q)) + [rng.uniform(-2, 2, st2.q) for _ in range(n_random)]
        worst2 = worst3 = 0.0
        for w1 in ws1:
            y1 = np.concatenate([y0, w1], axis=1)
            U2, U3 = cm.U23(y1)
            F1 = avg.F1_bar(y1)
            lam1 = avg.lambda_bar_partial(y1)
            for w2 in w2s:
                yw = np.concatenate([y1, np.broadcast_to(w2, (y1.shape[0], st2.q))], axis=1)
                lam = avg._lam(0, yw)
                L2 = lambda Uc: np.einsum("nlj,nr,rj->nl", Uc, lam[:, st2.rx], st2.delta)
                r2 = L2(U2) - (lam @ avg.zeta0 - F1)
                U1d = np.einsum("nlj,rj->nlr", U, st1.delta)
                rhs3 = np.einsum("nlr,nr->nl", U1d, lam1[:, st1.rx] - lam[:, st1.rx])
                r3 = L2(U3) - rhs3
                worst2 = max(worst2, float(np.max(np.abs(r2))))
                worst3 = max(worst3, float(np.max(np.abs(r3))))
        res["h2"], res["h3"] = worst2, worst3
    return res


def centering_errors(avg: AveragedModel, v0) -> dict:
    """Equilibrium averages of each Poisson right-hand side (should vanish)."""
    y0 = avg.full_prefix(v0)
    out = {}
    D = avg.depth
    if D == 0:
        return out
    Ew = avg.stage(D, y0)["Ew"]
    y1 = np.concatenate([y0, Ew], axis=1)
    out["h1"] = float(np.max(np.abs(avg._drift(avg._lam(D - 1, y1)) - avg.F_bar(v0))))
    if D >= 2:
        Ew2 = avg.stage(1, y1)["Ew"]
        y2 = np.concatenate([y1, Ew2], axis=1)
        out["h2"] = float(np.max(np.abs(avg._drift(avg._lam(0, y2)) - avg.F1_bar(y1))))
        st1 = avg.stages[1]
        out["h3"] = float(np.max(np.abs(avg._lam(0, y2)[:, st1.rx] - avg.lambda_bar_partial(y1)[:, st1.rx])))
    return out


def assemble_H(cm: CorrectionModel) -> Callable:
    return cm.H


def diffusion_matrix(cm: CorrectionModel):
    """(G_bar, sigma) evaluators."""
    return cm.G_bar, cm.sigma
