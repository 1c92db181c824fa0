"""Mass-action reaction networks: data model, text format and propensities.

A network is a list of species (each with an abundance exponent ``alpha`` and
an initial molecule count) and a list of reactions (input/output multisets, a
normalized rate constant ``kappa`` and a rate exponent ``beta``).  The raw rate
constant used by the Markov chain is ``kappa * N**beta``.

All exponents are kept as :class:`fractions.Fraction` so that scale
comparisons downstream are exact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from . import exact

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_IDENT_RE = re.compile(rf"^{_IDENT}$")
_RATIONAL_RE = re.compile(r"^[+-]?\d+(/\d+)?$")
_TERM_RE = re.compile(rf"^(?:(\d+)\s*)?({_IDENT})$")


class NetworkError(ValueError):
    """Structural problem with a network definition."""


class ParseError(NetworkError):
    """Malformed specification text; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
        self.message = message


@dataclass(frozen=True)
class Species:
    name: str
    alpha: Fraction = Fraction(0)
    initial_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha", Fraction(self.alpha))
        if self.alpha < 0:
            raise NetworkError(f"species {self.name}: alpha must be >= 0, got {self.alpha}")
        if self.initial_count < 0:
            raise NetworkError(f"species {self.name}: negative initial count")


@dataclass(frozen=True)
class Reaction:
    """One mass-action channel.  ``inputs``/``outputs`` are (species, count) pairs."""

    name: str
    inputs: tuple = ()
    outputs: tuple = ()
    kappa: float = 1.0
    beta: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "beta", Fraction(self.beta))
        object.__setattr__(self, "inputs", _merge_terms(self.inputs))
        object.__setattr__(self, "outputs", _merge_terms(self.outputs))
        if not (self.kappa > 0 and np.isfinite(self.kappa)):
            raise NetworkError(f"reaction {self.name}: kappa must be positive and finite")
        if dict(self.inputs) == dict(self.outputs):
            raise NetworkError(f"reaction {self.name}: net change is zero")

    @property
    def order(self) -> int:
        return sum(c for _, c in self.inputs)


def _merge_terms(terms) -> tuple:
    if isinstance(terms, dict):
        terms = terms.items()
    counts: dict = {}
    for name, c in terms:
        if c < 0:
            raise NetworkError(f"negative stoichiometric coefficient for {name}")
        if c:
            counts[name] = counts.get(name, 0) + int(c)
    return tuple(counts.items())


@dataclass(frozen=True)
class ScalingSpec:
    """System size ``N`` and time-scale exponent ``gamma``."""

    N: int
    gamma: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "gamma", Fraction(self.gamma))
        if int(self.N) != self.N or self.N < 2:
            raise NetworkError(f"N must be an integer >= 2, got {self.N}")

    def with_gamma(self, gamma) -> "ScalingSpec":
        return ScalingSpec(self.N, Fraction(gamma))


@dataclass(frozen=True)
class SimulationDefaults:
    t_end: Optional[float] = None
    seed: Optional[int] = None


@dataclass(frozen=True)
class ReactionNetwork:
    species: tuple
    reactions: tuple
    name: str = "network"

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise NetworkError("duplicate species names")
        rnames = [r.name for r in self.reactions]
        if len(set(rnames)) != len(rnames):
            raise NetworkError("duplicate reaction names")
        known = set(names)
        for r in self.reactions:
            for sp, _ in r.inputs + r.outputs:
                if sp not in known:
                    raise NetworkError(f"reaction {r.name}: unknown species {sp}")

    # --- coordinate conventions -------------------------------------------
    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @cached_property
    def index(self) -> dict:
        return {s.name: i for i, s in enumerate(self.species)}

    @cached_property
    def alphas(self) -> tuple:
        return tuple(s.alpha for s in self.species)

    @cached_property
    def initial_state(self) -> np.ndarray:
        return np.array([s.initial_count for s in self.species], dtype=np.int64)

    @cached_property
    def nu_in(self) -> np.ndarray:
        """Input stoichiometry, shape (K, S)."""
        return self._matrix("inputs")

    @cached_property
    def nu_out(self) -> np.ndarray:
        return self._matrix("outputs")

    @cached_property
    def zeta(self) -> np.ndarray:
        """Net reaction vectors as rows, shape (K, S)."""
        return self.nu_out - self.nu_in

    def _matrix(self, attr) -> np.ndarray:
        m = np.zeros((self.n_reactions, self.n_species), dtype=np.int64)
        for k, r in enumerate(self.reactions):
            for sp, c in getattr(r, attr):
                m[k, self.index[sp]] = c
        return m

    @cached_property
    def reactant_terms(self) -> tuple:
        """(reaction, species, multiplicity, float alpha) for every reactant entry."""
        return tuple((k, int(i), int(self.nu_in[k, i]), float(self.alphas[i]))
                     for k in range(self.n_reactions) for i in np.nonzero(self.nu_in[k])[0])

    @cached_property
    def kappas(self) -> np.ndarray:
        return np.array([r.kappa for r in self.reactions], dtype=float)

    @cached_property
    def betas(self) -> tuple:
        return tuple(r.beta for r in self.reactions)

    def reaction_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            return int(name_or_index)
        for k, r in enumerate(self.reactions):
            if r.name == name_or_index:
                return k
        raise KeyError(name_or_index)

    def raw_rate_constants(self, spec: ScalingSpec) -> np.ndarray:
        """kappa' = kappa * N**beta."""
        return self.kappas * np.array([float(spec.N) ** float(b) for b in self.betas])


def reaction_vector(r: Reaction, net: ReactionNetwork) -> np.ndarray:
    z = np.zeros(net.n_species, dtype=np.int64)
    for sp, c in r.outputs:
        z[net.index[sp]] += c
    for sp, c in r.inputs:
        z[net.index[sp]] -= c
    return z


def _falling(x, n: int, step=1.0):
    """x (x - step) ... (x - (n-1) step), elementwise."""
    out = np.ones_like(np.asarray(x, dtype=float))
    for j in range(n):
        out = out * (x - j * step)
    return out


def propensity(r: Reaction, x, spec: ScalingSpec, net: ReactionNetwork) -> float:
    """Mass-action intensity in molecule-count units."""
    x = np.asarray(x)
    val = r.kappa * float(spec.N) ** float(r.beta)
    for sp, c in r.inputs:
        xi = x[net.index[sp]]
        if xi < c:
            return 0.0
        val *= float(_falling(float(xi), c))
    return float(val)


def propensities(net: ReactionNetwork, x, spec: ScalingSpec) -> np.ndarray:
    """All propensities at one or many count states; x shape (..., S) -> (..., K)."""
    x = np.asarray(x, dtype=float)
    out = np.broadcast_to(net.raw_rate_constants(spec), x.shape[:-1] + (net.n_reactions,)).copy()
    for k in range(net.n_reactions):
        for i in np.nonzero(net.nu_in[k])[0]:
            out[..., k] *= np.maximum(_falling(x[..., i], int(net.nu_in[k, i])), 0.0)
    return out


def normalized_propensity(net: ReactionNetwork, r, z, spec: ScalingSpec, limit: bool = False) -> float:
    """lambda_k^N(z) = kappa_k prod_i z_i (z_i - N^-alpha_i) ... .

    With ``limit=True`` the finite-N shifts are dropped for species with
    alpha > 0 (for alpha = 0 the falling factorial is kept, since it does not
    depend on N).
    """
    k = net.reaction_index(r) if not isinstance(r, Reaction) else net.reactions.index(r)
    return float(normalized_propensities(net, np.asarray(z, dtype=float), spec, limit)[k])


def normalized_propensities(net: ReactionNetwork, z, spec: Optional[ScalingSpec] = None,
                            limit: bool = False) -> np.ndarray:
    """Vectorized normalized propensities, z shape (..., S) -> (..., K).

    ``spec`` may be None only when ``limit`` is True.
    """
    z = np.asarray(z)
    out = np.empty(z.shape[:-1] + (net.n_reactions,), dtype=np.result_type(z, float))
    out[...] = net.kappas
    for k, i, n, a in net.reactant_terms:
        if a == 0:
            step = 1.0
        elif limit:
            step = 0.0
        else:
            step = float(spec.N) ** (-a)
        if n == 1:
            out[..., k] = out[..., k] * z[..., i]
            continue
        zi = z[..., i]
        for j in range(n):
            f = zi - j * step
            # a count that sits on the lattice point j gives an exact zero
            out[..., k] = out[..., k] * np.where(np.abs(f) <= 1e-12 * np.maximum(np.abs(zi), step), 0.0, f)
    return out


def count_scale(net: ReactionNetwork, spec: ScalingSpec) -> np.ndarray:
    """N**alpha_i per species: x = count_scale * z."""
    return np.array([float(spec.N) ** float(a) for a in net.alphas])


def find_conservation_laws(net: ReactionNetwork, subset: Optional[Iterable[int]] = None) -> list:
    """Rational basis of the vectors orthogonal to every zeta_k, k in ``subset``."""
    ks = range(net.n_reactions) if subset is None else list(subset)
    rows = [[Fraction(int(v)) for v in net.zeta[k]] for k in ks]
    return exact.null_space(rows, net.n_species)


# --- text format -------------------------------------------------------------

def _parse_rational(tok: str, lineno: int) -> Fraction:
    if not _RATIONAL_RE.match(tok):
        raise ParseError(lineno, f"malformed rational {tok!r}")
    return Fraction(tok)


def _parse_multiset(text: str, lineno: int) -> list:
    text = text.strip()
    if text == "0" or text == "":
        if text == "":
            raise ParseError(lineno, "empty side of reaction (use 0 for nothing)")
        return []
    terms = []
    for part in text.split("+"):
        m = _TERM_RE.match(part.strip())
        if not m:
            raise ParseError(lineno, f"malformed term {part.strip()!r}")
        c = int(m.group(1)) if m.group(1) else 1
        if c == 0:
            raise ParseError(lineno, f"zero coefficient in {part.strip()!r}")
        terms.append((m.group(2), c))
    return terms


_REACTION_RE = re.compile(
    rf"^reaction\s+({_IDENT})\s*:\s*(.*?)\s*->\s*(.*?)\s+kappa\s+(\S+)\s+beta\s+(\S+)\s*$")


def parse_network(text: str):
    """Parse the line-oriented format; returns (network, scaling, defaults)."""
    name = "network"
    species: list = []
    reactions: list = []
    N = gamma = None
    t_end = seed = None
    seen_sp: dict = {}
    seen_rx: dict = {}
    pending = []  # (lineno, name, inputs, outputs, kappa, beta)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split()[0]
        toks = line.split()
        if head == "network":
            if len(toks) != 2 or not _IDENT_RE.match(toks[1]):
                raise ParseError(lineno, "expected: network <name>")
            name = toks[1]
        elif head == "species":
            if len(toks) != 6 or toks[2] != "alpha" or toks[4] != "init":
                raise ParseError(lineno, "expected: species <name> alpha <rational> init <integer>")
            sp = toks[1]
            if not _IDENT_RE.match(sp):
                raise ParseError(lineno, f"bad species name {sp!r}")
            if sp in seen_sp:
                raise ParseError(lineno, f"duplicate species {sp} (first on line {seen_sp[sp]})")
            alpha = _parse_rational(toks[3], lineno)
            if alpha < 0:
                raise ParseError(lineno, f"alpha must be >= 0 for species {sp}")
            if not re.match(r"^\d+$", toks[5]):
                raise ParseError(lineno, f"malformed initial count {toks[5]!r}")
            seen_sp[sp] = lineno
            species.append(Species(sp, alpha, int(toks[5])))
        elif head == "reaction":
            m = _REACTION_RE.match(line)
            if not m:
                raise ParseError(lineno, "expected: reaction <name> : <multiset> -> <multiset> kappa <real> beta <rational>")
            rn = m.group(1)
            if rn in seen_rx:
                raise ParseError(lineno, f"duplicate reaction {rn} (first on line {seen_rx[rn]})")
            seen_rx[rn] = lineno
            ins = _parse_multiset(m.group(2), lineno)
            outs = _parse_multiset(m.group(3), lineno)
            try:
                kappa = float(m.group(4))
            except ValueError:
                raise ParseError(lineno, f"malformed real {m.group(4)!r}") from None
            beta = _parse_rational(m.group(5), lineno)
            pending.append((lineno, rn, ins, outs, kappa, beta))
        elif head == "N":
            if len(toks) != 2 or not re.match(r"^\d+$", toks[1]):
                raise ParseError(lineno, "expected: N <integer>")
            N = int(toks[1])
            if N < 2:
                raise ParseError(lineno, "N must be >= 2")
        elif head == "gamma":
            if len(toks) != 2:
                raise ParseError(lineno, "expected: gamma <rational>")
            gamma = _parse_rational(toks[1], lineno)
        elif head == "tend":
            try:
                t_end = float(toks[1])
            except (IndexError, ValueError):
                raise ParseError(lineno, "expected: tend <real>") from None
            if len(toks) != 2 or not t_end > 0:
                raise ParseError(lineno, "tend must be a positive real")
        elif head == "seed":
            if len(toks) != 2 or not re.match(r"^\d+$", toks[1]):
                raise ParseError(lineno, "expected: seed <integer>")
            seed = int(toks[1])
        else:
            raise ParseError(lineno, f"unknown directive {head!r}")

    for lineno, rn, ins, outs, kappa, beta in pending:
        for sp, _ in ins + outs:
            if sp not in seen_sp:
                raise ParseError(lineno, f"reaction {rn}: unknown species {sp}")
        try:
            reactions.append(Reaction(rn, tuple(ins), tuple(outs), kappa, beta))
        except NetworkError as exc:
            raise ParseError(lineno, str(exc)) from None
    if N is None:
        raise ParseError(0, "missing N directive")
    net = ReactionNetwork(tuple(species), tuple(reactions), name)
    return net, ScalingSpec(N, gamma if gamma is not None else Fraction(0)), SimulationDefaults(t_end, seed)


def _fmt_side(terms) -> str:
    if not terms:
        return "0"
    return " + ".join(name if c == 1 else f"{c} {name}" for name, c in terms)


def serialize_network(net: ReactionNetwork, spec: ScalingSpec,
                      defaults: Optional[SimulationDefaults] = None) -> str:
    lines = [f"network {net.name}"]
    for s in net.species:
        lines.append(f"species {s.name} alpha {s.alpha} init {s.initial_count}")
    for r in net.reactions:
        lines.append(f"reaction {r.name} : {_fmt_side(r.inputs)} -> {_fmt_side(r.outputs)} "
                     f"kappa {r.kappa!r} beta {r.beta}")
    lines.append(f"N {spec.N}")
    lines.append(f"gamma {spec.gamma}")
    if defaults is not None and defaults.t_end is not None:
        lines.append(f"tend {defaults.t_end!r}")
    if defaults is not None and defaults.seed is not None:
        lines.append(f"seed {defaults.seed}")
    return "\n".join(lines) + "\n"


def with_initial_counts(net: ReactionNetwork, counts: Sequence[int]) -> ReactionNetwork:
    """Copy of ``net`` with new initial molecule counts."""
    sp = tuple(Species(s.name, s.alpha, int(c)) for s, c in zip(net.species, counts))
    return ReactionNetwork(sp, net.reactions, net.name)
