"""Orthogonal splitting of species space into slow, constant and fast parts.

The decomposition peels time scales off from the fastest down: at each step
the reactions acting at the current top exponent define a subspace (the span
of their limiting vectors); what remains is its orthogonal complement inside
the current space.  All bases are alpha-homogeneous so that each coordinate
has a single scaling N^-alpha.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import exact
from .network import ReactionNetwork, ScalingSpec
from .scales import (PipelineError, ScaleLevel, classify_level, level_exponent,
                     reaction_exponents)


def _first_nonzero(v) -> int:
    for i, x in enumerate(v):
        if x != 0:
            return i
    return len(v)


@dataclass(frozen=True)
class HomogeneousBasis:
    """Orthogonal rational directions, each supported on one alpha class."""

    rational: tuple
    alphas: tuple

    def __len__(self):
        return len(self.rational)

    @cached_property
    def vectors(self) -> np.ndarray:
        """Unit-length float rows, shape (r, S)."""
        if not self.rational:
            return np.zeros((0, 0))
        v = np.array([[float(x) for x in row] for row in self.rational])
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def float_vectors(self, n_species: int) -> np.ndarray:
        if not self.rational:
            return np.zeros((0, n_species))
        return self.vectors

    @classmethod
    def from_vectors(cls, vectors, species_alphas) -> "HomogeneousBasis":
        vecs = sorted((tuple(v) for v in vectors), key=_first_nonzero)
        alphas = []
        for v in vecs:
            support = {species_alphas[i] for i, x in enumerate(v) if x != 0}
            if len(support) != 1:
                raise PipelineError(f"basis vector {v} mixes abundance exponents {sorted(support)}")
            alphas.append(support.pop())
        return cls(tuple(vecs), tuple(alphas))

    @classmethod
    def standard(cls, species_alphas) -> "HomogeneousBasis":
        n = len(species_alphas)
        vecs = [tuple(Fraction(int(i == j)) for j in range(n)) for i in range(n)]
        return cls(tuple(vecs), tuple(species_alphas))


def stoichiometric_subspace(vectors: Sequence[Sequence], n: int):
    """(range basis, basis of the orthogonal complement) of span(vectors), exactly."""
    vectors = [tuple(Fraction(x) for x in v) for v in vectors]
    rng = exact.column_space(vectors, n)
    null = exact.null_space(rng, n)
    return rng, null


def homogeneous_null_basis(null_basis: Sequence[Sequence], alphas: Sequence[Fraction]) -> HomogeneousBasis:
    """Re-express span(null_basis) with an orthogonal alpha-homogeneous basis.

    Raises PipelineError with a witness vector when the span does not split
    along abundance classes.
    """
    vecs = [tuple(Fraction(x) for x in v) for v in null_basis]
    vecs = exact.column_space(vecs, len(alphas))
    if not vecs:
        return HomogeneousBasis((), ())
    n = len(alphas)
    blocks = []
    for a in sorted(set(alphas)):
        outside = [i for i in range(n) if alphas[i] != a]
        # coefficients c with (sum_j c_j v_j)_i = 0 off the block
        rows = [[v[i] for v in vecs] for i in outside]
        coeffs = exact.null_space(rows, len(vecs)) if rows else exact.null_space([], len(vecs))
        block = [tuple(sum((c * v[i] for c, v in zip(cvec, vecs)), Fraction(0)) for i in range(n))
                 for cvec in coeffs]
        blocks.extend(exact.gram_schmidt(block))
    if len(blocks) != len(vecs):
        for v in vecs:
            if exact.rank(blocks + [v]) > len(blocks):
                raise PipelineError(f"no homogeneous basis exists; witness {tuple(str(x) for x in v)}")
    return HomogeneousBasis.from_vectors(blocks, alphas)


def _complement_within(basis: HomogeneousBasis, constraints, alphas) -> HomogeneousBasis:
    """Homogeneous basis of {x in span(basis) : x . c = 0 for c in constraints}."""
    if not basis.rational:
        return basis
    rows = [[exact.dot(w, c) for w in basis.rational] for c in constraints]
    coeffs = exact.null_space(rows, len(basis.rational))
    n = len(alphas)
    vecs = [tuple(sum((cj * w[i] for cj, w in zip(cv, basis.rational)), Fraction(0)) for i in range(n))
            for cv in coeffs]
    return homogeneous_null_basis(vecs, alphas)


@dataclass
class MultiscaleDecomposition:
    """Levels, bases, projections and the change of basis v = T z.

    Rows of ``T`` are ordered [slow dynamical | constants | level-1 fast |
    level-2 fast], so every "slower" set of coordinates is a prefix of v.
    """

    net: ReactionNetwork
    spec: ScalingSpec
    rho: tuple
    levels: dict
    slow_basis: HomogeneousBasis
    constant_basis: HomogeneousBasis
    fast_bases: dict
    diagnostics: list = field(default_factory=list)

    def level(self, i: int) -> ScaleLevel:
        return self.levels.get(i) or ScaleLevel(i, None)

    @property
    def d0(self) -> int:
        return len(self.slow_basis)

    @property
    def n_const(self) -> int:
        return len(self.constant_basis)

    @property
    def s1(self) -> int:
        return len(self.fast_bases.get(1, ()))

    @property
    def s2(self) -> int:
        return len(self.fast_bases.get(2, ()))

    @property
    def dims(self) -> tuple:
        """(s0, s1, s2) with s0 counting slow and constant directions."""
        return (self.d0 + self.n_const, self.s1, self.s2)

    @property
    def fast_levels(self) -> list:
        """Nonempty fast levels ordered fastest first."""
        return [self.levels[i] for i in (2, 1) if i in self.levels and not self.levels[i].empty]

    @cached_property
    def row_bases(self) -> list:
        out = [self.slow_basis, self.constant_basis]
        for i in (1, 2):
            if i in self.fast_bases:
                out.append(self.fast_bases[i])
        return out

    @cached_property
    def T(self) -> np.ndarray:
        S = self.net.n_species
        rows = [b.float_vectors(S) for b in self.row_bases if len(b)]
        return np.vstack(rows) if rows else np.zeros((0, S))

    @cached_property
    def row_alphas(self) -> tuple:
        return tuple(a for b in self.row_bases for a in b.alphas)

    @cached_property
    def row_rational(self) -> tuple:
        return tuple(v for b in self.row_bases for v in b.rational)

    def block(self, name) -> slice:
        """Slice of v for 'slow', 'const', 1 or 2."""
        d0, c, s1, s2 = self.d0, self.n_const, self.s1, self.s2
        return {"slow": slice(0, d0), "const": slice(d0, d0 + c),
                1: slice(d0 + c, d0 + c + s1), 2: slice(d0 + c + s1, d0 + c + s1 + s2)}[name]

    def _projector(self, bases) -> np.ndarray:
        S = self.net.n_species
        P = np.zeros((S, S))
        for b in bases:
            if len(b):
                V = b.float_vectors(S)
                P += V.T @ V
        return P

    @cached_property
    def Pi0(self) -> np.ndarray:
        return self._projector([self.slow_basis, self.constant_basis])

    @cached_property
    def Pi1(self) -> np.ndarray:
        return self._projector([self.fast_bases[1]] if 1 in self.fast_bases else [])

    @cached_property
    def Pi2(self) -> np.ndarray:
        return self._projector([self.fast_bases[2]] if 2 in self.fast_bases else [])

    def stoichiometric_matrix(self, i: int) -> np.ndarray:
        """Limiting vectors of level i as columns (S x |classified reactions|)."""
        lev = self.level(i)
        cols = [[float(x) for x in lev.limiting_vectors[k]] for k in sorted(lev.limiting_vectors)]
        return np.array(cols).T if cols else np.zeros((self.net.n_species, 0))

    @property
    def S2(self) -> np.ndarray:
        return self.stoichiometric_matrix(2)

    @property
    def S1(self) -> np.ndarray:
        return self.stoichiometric_matrix(1)

    def constant_values(self, z) -> np.ndarray:
        """Values of the conserved coordinates at a normalized state z."""
        Tc = self.constant_basis.float_vectors(self.net.n_species)
        return np.asarray(z, dtype=float) @ Tc.T

    @cached_property
    def slow_limit(self) -> np.ndarray:
        """Exponent-filtered slow reaction vectors in slow coordinates, shape (K, d0)."""
        out = np.zeros((self.net.n_reactions, self.d0))
        lev = self.level(0)
        for k, c in lev.coordinates.items():
            out[k] = c
        return out


def decompose(net: ReactionNetwork, spec: ScalingSpec, strict: bool = True) -> MultiscaleDecomposition:
    """Full time-scale decomposition of ``net`` under ``spec``.

    With ``strict`` the result must satisfy the assumptions of the averaging
    pipeline: at most two fast levels, slowest exponent 0, and no jump
    reactions left at the slow level.
    """
    alphas = net.alphas
    S = net.n_species
    W = HomogeneousBasis.standard(alphas)
    found = []
    while len(W):
        m = level_exponent(net, spec, W)
        if m is None:
            break
        lev = classify_level(net, spec, W, m)
        rest = _complement_within(W, list(lev.limiting_vectors.values()), alphas)
        fast = exact.gram_schmidt(W.rational, against=rest.rational)
        lev.basis = HomogeneousBasis.from_vectors(fast, alphas)
        if found and not m < found[-1].m:
            raise PipelineError(f"time-scale exponents not strictly decreasing ({found[-1].m}, {m})")
        found.append(lev)
        W = rest
    if len(found) > 3:
        raise PipelineError(f"{len(found)} time scales found; at most two fast levels are supported "
                            f"(exponents {[str(l.m) for l in found]})")
    levels = {}
    for idx, lev in zip(range(len(found) - 1, -1, -1), found):
        lev.index = idx
        V = lev.basis.float_vectors(S)
        for k, vec in lev.limiting_vectors.items():
            lev.coordinates[k] = V @ np.array([float(x) for x in vec])
        levels[idx] = lev

    slow = levels[0].basis if 0 in levels else HomogeneousBasis((), ())
    fast_bases = {i: levels[i].basis for i in (1, 2) if i in levels}
    dec = MultiscaleDecomposition(net, spec, reaction_exponents(net, spec), levels, slow, W, fast_bases)
    dec.diagnostics.extend(_projection_diagnostics(dec))
    if strict:
        validate_decomposition(dec)
    return dec


def validate_decomposition(dec: MultiscaleDecomposition) -> None:
    if 0 not in dec.levels:
        raise PipelineError("degenerate network: no reaction changes any coordinate")
    m0 = dec.levels[0].m
    if m0 != 0:
        raise PipelineError(f"slowest time-scale exponent is {m0}, not 0; rescale time with "
                            f"gamma = {dec.spec.gamma - m0} (choose_gamma)")
    bad = dec.levels[0].jump_class
    if bad:
        names = ", ".join(dec.net.reactions[k].name for k in bad)
        raise PipelineError(f"slow dynamics are jump-driven (reactions {names}); "
                            "a deterministic slow limit is required")


def _projection_diagnostics(dec: MultiscaleDecomposition) -> list:
    """Reactions whose projection onto a level subspace differs from its limiting vector."""
    out = []
    for i, lev in dec.levels.items():
        for k, vec in sorted(lev.limiting_vectors.items()):
            z = [Fraction(int(x)) for x in dec.net.zeta[k]]
            proj = [Fraction(0)] * len(z)
            for theta in lev.basis.rational:
                c = exact.dot(theta, z) / exact.dot(theta, theta)
                proj = [p + c * t for p, t in zip(proj, theta)]
            if tuple(proj) != tuple(vec):
                out.append(f"level {i}: reaction {dec.net.reactions[k].name} projection differs "
                           "from its exponent-filtered limiting vector")
    return out
