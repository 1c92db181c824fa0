"""Exact rational linear algebra on lists of Fractions (sympy does the elimination)."""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import sympy


def _to_fraction(x) -> Fraction:
    x = sympy.Rational(x)
    return Fraction(int(x.p), int(x.q))


def dot(u: Sequence[Fraction], v: Sequence[Fraction]) -> Fraction:
    return sum((a * b for a, b in zip(u, v)), Fraction(0))


def is_zero(v: Sequence[Fraction]) -> bool:
    return all(x == 0 for x in v)


def sign_normalize(v: Sequence[Fraction]) -> tuple:
    """Flip sign so that the first nonzero entry is positive."""
    for x in v:
        if x != 0:
            return tuple(v) if x > 0 else tuple(-y for y in v)
    return tuple(v)


def null_space(rows: Sequence[Sequence[Fraction]], n: int) -> list:
    """Basis of {x in Q^n : r . x = 0 for every row r}."""
    if not rows:
        return [tuple(Fraction(int(i == j)) for j in range(n)) for i in range(n)]
    m = sympy.Matrix([[sympy.Rational(x.numerator, x.denominator) for x in r] for r in rows])
    return [sign_normalize([_to_fraction(x) for x in vec]) for vec in m.nullspace()]


def column_space(vectors: Sequence[Sequence[Fraction]], n: int) -> list:
    """Basis of span(vectors) in Q^n (pivot vectors of the input)."""
    vectors = [v for v in vectors if not is_zero(v)]
    if not vectors:
        return []
    m = sympy.Matrix([[sympy.Rational(x.numerator, x.denominator) for x in v] for v in vectors]).T
    _, pivots = m.rref()
    return [tuple(vectors[j]) for j in pivots]


def gram_schmidt(vectors: Sequence[Sequence[Fraction]], against: Sequence[Sequence[Fraction]] = ()) -> list:
    """Exact orthogonalization; vectors dependent on earlier ones are dropped.

    ``against`` is an already orthogonal family that the result must be
    orthogonal to (it is not included in the output).
    """
    basis = [tuple(b) for b in against]
    out = []
    for v in vectors:
        w = list(v)
        for b in basis:
            c = dot(w, b) / dot(b, b)
            if c:
                w = [x - c * y for x, y in zip(w, b)]
        if not is_zero(w):
            w = sign_normalize(w)
            basis.append(w)
            out.append(w)
    return out


def rank(vectors: Sequence[Sequence[Fraction]]) -> int:
    vectors = [v for v in vectors if not is_zero(v)]
    if not vectors:
        return 0
    return sympy.Matrix([[sympy.Rational(x.numerator, x.denominator) for x in v] for v in vectors]).rank()
