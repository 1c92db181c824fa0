"""Time-scale exponents, reaction classes and limiting reaction vectors.

Everything here is exact: exponents are Fractions and reaction vectors are
integer/rational tuples.  A subspace is always described by an orthogonal
family of rational vectors, each supported on species sharing a single
abundance exponent (see :mod:`multiscale_crn.subspace`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import exact
from .network import ReactionNetwork, ScalingSpec


class PipelineError(ValueError):
    """The multiscale pipeline cannot handle this network (reported, not guessed)."""


def reaction_exponents(net: ReactionNetwork, spec: ScalingSpec) -> tuple:
    """rho_k = nu_k . alpha + beta_k + gamma."""
    out = []
    for k, r in enumerate(net.reactions):
        rho = sum((Fraction(int(c)) * a for c, a in zip(net.nu_in[k], net.alphas)), Fraction(0))
        out.append(rho + r.beta + spec.gamma)
    return tuple(out)


def _projections(net: ReactionNetwork, basis) -> list:
    """Exact theta_l . zeta_k, indexed [l][k]."""
    zeta = [[Fraction(int(v)) for v in row] for row in net.zeta]
    return [[exact.dot(theta, z) for z in zeta] for theta in basis.rational]


def level_exponent(net: ReactionNetwork, spec: ScalingSpec, basis) -> Optional[Fraction]:
    """max{rho_k - alpha_theta : theta . zeta_k != 0}; None when every zeta_k is annihilated."""
    rho = reaction_exponents(net, spec)
    best = None
    for l, row in enumerate(_projections(net, basis)):
        for k, c in enumerate(row):
            if c != 0:
                e = rho[k] - basis.alphas[l]
                if best is None or e > best:
                    best = e
    return best


@dataclass
class ScaleLevel:
    """Reactions acting at one time scale and their limiting vectors.

    ``limiting_vectors`` are exact species-space vectors; ``coordinates`` holds
    the same vectors expressed in the level's orthonormal fast basis (filled
    in once the decomposition knows that basis).
    """

    index: int
    m: Optional[Fraction]
    jump_class: tuple = ()
    drift_class: tuple = ()
    limiting_vectors: dict = field(default_factory=dict)
    both_classes: tuple = ()
    basis: object = None
    coordinates: dict = field(default_factory=dict)

    @property
    def reactions(self) -> tuple:
        return tuple(sorted(set(self.jump_class) | set(self.drift_class)))

    @property
    def empty(self) -> bool:
        return not self.limiting_vectors


def classify_level(net: ReactionNetwork, spec: ScalingSpec, basis, m: Optional[Fraction],
                   index: int = -1) -> ScaleLevel:
    """Split reactions acting at exponent ``m`` on span(basis) into jump/drift classes."""
    if m is None:
        return ScaleLevel(index, None)
    rho = reaction_exponents(net, spec)
    proj = _projections(net, basis)
    jump, drift, both = [], [], []
    limits = {}
    for k in range(net.n_reactions):
        vec = [Fraction(0)] * net.n_species
        is_jump = is_drift = False
        for l, theta in enumerate(basis.rational):
            c = proj[l][k]
            if c == 0 or rho[k] - basis.alphas[l] != m:
                continue
            scale = c / exact.dot(theta, theta)
            vec = [v + scale * t for v, t in zip(vec, theta)]
            if basis.alphas[l] == 0:
                is_jump = True
            else:
                is_drift = True
        if is_jump or is_drift:
            limits[k] = tuple(vec)
            if is_jump:
                jump.append(k)
            if is_drift:
                drift.append(k)
            if is_jump and is_drift:
                both.append(k)
    return ScaleLevel(index, m, tuple(jump), tuple(drift), limits, tuple(both))


@dataclass(frozen=True)
class GeneratorDescription:
    """Limit generator of one level: jump terms, drift terms and their kind.

    Terms are (reaction index, species-space vector) pairs; the propensity of
    each term is the full-state lambda_k of that reaction.
    """

    jump_terms: tuple
    drift_terms: tuple

    @property
    def kind(self) -> str:
        if self.jump_terms and self.drift_terms:
            return "pdmp"
        if self.jump_terms:
            return "markov-chain"
        return "ode"


def limit_generator(level: ScaleLevel, net: ReactionNetwork) -> GeneratorDescription:
    """Jump part lives on alpha=0 directions, drift part on alpha>0 directions."""
    alphas = net.alphas
    jumps, drifts = [], []
    for k, vec in sorted(level.limiting_vectors.items()):
        jv = tuple(v if alphas[i] == 0 else Fraction(0) for i, v in enumerate(vec))
        dv = tuple(v if alphas[i] > 0 else Fraction(0) for i, v in enumerate(vec))
        if not exact.is_zero(jv):
            jumps.append((k, jv))
        if not exact.is_zero(dv):
            drifts.append((k, dv))
    return GeneratorDescription(tuple(jumps), tuple(drifts))


def choose_gamma(net: ReactionNetwork, spec: ScalingSpec) -> Fraction:
    """Time-scale exponent that puts the slowest nontrivial level at m = 0."""
    from .subspace import decompose

    dec = decompose(net, spec, strict=False)
    m0 = dec.level(0).m
    if m0 is None or dec.d0 == 0:
        raise PipelineError("degenerate network: no slow subspace to normalize")
    return spec.gamma - m0
