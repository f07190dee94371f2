"""Symbol-set generation and the coproduct."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Tuple

from aclab.errors import StructuralError
from aclab.algebra.symbols import (
    ONE,
    XI,
    Homogeneity,
    Integ,
    One,
    Prod,
    Symbol,
    X,
    Xi,
    _check_dim,
    _sort_key,
    contains_polynomial,
    homogeneity,
    integ,
    is_polynomial,
    parabolic_length,
    product,
    to_text,
    tree_name,
    x_monomial,
)

__all__ = [
    "XGen",
    "JGen",
    "CoproductTerm",
    "SymbolSets",
    "generate_symbols",
    "coproduct",
    "format_coproduct",
    "multi_indices_below",
]

DEFAULT_ZETA = Homogeneity(2)


@dataclass(frozen=True)
class XGen:
    """Generator ``X_i`` of the positive algebra."""

    i: int

    def text(self, names: bool = False) -> str:
        return f"X{self.i}"


@dataclass(frozen=True)
class JGen:
    """Generator ``J_k(tau)``; ``k`` is a multi-index without trailing zeros."""

    k: tuple
    tau: Symbol

    def __post_init__(self):
        k = tuple(int(v) for v in self.k)
        while k and k[-1] == 0:
            k = k[:-1]
        object.__setattr__(self, "k", k)
        if is_polynomial(self.tau):
            raise StructuralError("J_k is only defined on non-polynomial symbols")

    def text(self, names: bool = False) -> str:
        inner = tree_name(self.tau) if names else to_text(self.tau)
        if not self.k:
            return f"J({inner})"
        return f"J[{','.join(map(str, self.k))}]({inner})"


def _gen_key(g) -> tuple:
    if isinstance(g, XGen):
        return (0, (g.i,), "")
    return (1, g.k, to_text(g.tau))


@dataclass(frozen=True)
class CoproductTerm:
    """One term ``coeff * left ⊗ right`` of a coproduct.

    ``right`` is a sorted tuple of generators read as a commutative product;
    the empty tuple is the unit.
    """

    left: Symbol
    right: tuple
    coeff: Fraction = Fraction(1)

    def text(self, names: bool = False) -> str:
        lt = tree_name(self.left) if names else to_text(self.left)
        rt = "*".join(g.text(names) for g in self.right) if self.right else "1"
        body = f"{lt}⊗{rt}"
        return body if self.coeff == 1 else f"{self.coeff}·{body}"


@dataclass(frozen=True)
class SymbolSets:
    d: int
    zeta: Homogeneity
    U: tuple
    W: tuple
    W_plus: tuple
    W_minus: tuple


def multi_indices_below(d: int, bound: Homogeneity) -> List[tuple]:
    """All multi-indices ``k`` over ``d+1`` coordinates with ``|k| < bound``."""
    out = []
    top = int(math.floor(bound.a)) + 1
    for k in itertools.product(range(top + 1), repeat=d + 1):
        if Homogeneity(parabolic_length(k)) < bound:
            out.append(k)
    return out


def _sorted(symbols, d: int) -> tuple:
    return tuple(sorted(symbols, key=lambda s: (homogeneity(s, d), _sort_key(s))))


def generate_symbols(d: int, zeta: Homogeneity = DEFAULT_ZETA) -> SymbolSets:
    """Generate ``U``, ``W``, ``W_plus`` and ``W_minus`` truncated at ``zeta``.

    ``U`` is built up to a larger internal bound so that every product of three
    elements with homogeneity below ``zeta`` is found, then truncated.
    """
    _check_dim(d)
    if zeta < DEFAULT_ZETA:
        raise StructuralError("the cutoff must be at least 2")

    def hom(s):
        return homogeneity(s, d)

    seed = [ONE, integ(XI)] + [x_monomial(tuple(int(j == i) for j in range(d + 1))) for i in range(d + 1)]
    lowest = min(Homogeneity(), min(hom(s) for s in seed))
    # Elements generated by I(.) of a triple product are bounded below by
    # 2 + 3*min, which is >= min for every d considered here.
    bound_u = zeta - lowest.scaled(2)
    U = {s: hom(s) for s in seed if hom(s) < bound_u}
    fresh = set(U)
    while fresh:
        current = sorted(U, key=_sort_key)
        added = {}
        for a, b, c in itertools.combinations_with_replacement(current, 3):
            if a not in fresh and b not in fresh and c not in fresh:
                continue
            h = U[a] + U[b] + U[c] + Homogeneity(2)
            if not h < bound_u:
                continue
            p = product(a, b, c)
            if is_polynomial(p):
                continue
            t = Integ(p)
            if t not in U:
                added[t] = h
        fresh = set(added) - set(U)
        U.update(added)

    U_list = sorted(U, key=_sort_key)
    W = {XI}
    for a, b, c in itertools.combinations_with_replacement(U_list, 3):
        if U[a] + U[b] + U[c] < zeta:
            W.add(product(a, b, c))

    W_minus = {t for t in W if hom(t).is_negative() and not contains_polynomial(t)}

    W_plus = [XGen(i) for i in range(d + 1)]
    for t in _sorted(W, d):
        if is_polynomial(t):
            continue
        top = hom(t) + Homogeneity(2)
        for k in multi_indices_below(d, top):
            W_plus.append(JGen(k, t))

    return SymbolSets(
        d=d,
        zeta=zeta,
        U=_sorted([u for u in U if hom(u) < zeta], d),
        W=_sorted(W, d),
        W_plus=tuple(W_plus),
        W_minus=_sorted(W_minus, d),
    )


# A coproduct is held as {(left, right): coeff} during computation.
_Cop = Dict[Tuple[Symbol, tuple], Fraction]


def _add(acc: _Cop, left: Symbol, right: tuple, coeff: Fraction) -> None:
    key = (left, tuple(sorted(right, key=_gen_key)))
    val = acc.get(key, Fraction(0)) + coeff
    if val == 0:
        acc.pop(key, None)
    else:
        acc[key] = val


def _x_gens(k: tuple) -> tuple:
    out = []
    for i, e in enumerate(k):
        out.extend([XGen(i)] * e)
    return tuple(out)


def _factorial(k: tuple) -> int:
    out = 1
    for e in k:
        out *= math.factorial(e)
    return out


def _sub_indices(k: tuple):
    for ell in itertools.product(*(range(e + 1) for e in k)):
        yield ell, tuple(a - b for a, b in zip(k, ell))


def _pad(k: tuple, n: int) -> tuple:
    return tuple(k) + (0,) * (n - len(k))


def _delta(tau: Symbol, d: int) -> _Cop:
    acc: _Cop = {}
    if isinstance(tau, One):
        _add(acc, ONE, (), Fraction(1))
    elif isinstance(tau, Xi):
        _add(acc, XI, (), Fraction(1))
    elif isinstance(tau, X):
        k = _pad(tau.k, d + 1)
        for ell, m in _sub_indices(k):
            c = Fraction(_factorial(k), _factorial(ell) * _factorial(m))
            _add(acc, x_monomial(ell), _x_gens(m), c)
    elif isinstance(tau, Prod):
        acc = {(ONE, ()): Fraction(1)}
        for f in tau.factors:
            df = _delta(f, d)
            nxt: _Cop = {}
            for (l1, r1), c1 in acc.items():
                for (l2, r2), c2 in df.items():
                    _add(nxt, product(l1, l2), r1 + r2, c1 * c2)
            acc = nxt
    elif isinstance(tau, Integ):
        inner = _delta(tau.arg, d)
        for (left, right), c in inner.items():
            if is_polynomial(left):
                continue  # I(X^k) = 0
            _add(acc, Integ(left), right, c)
        top = homogeneity(tau.arg, d) + Homogeneity(2)
        for k in multi_indices_below(d, top):
            for ell, m in _sub_indices(k):
                c = Fraction(1, _factorial(ell) * _factorial(m))
                _add(acc, x_monomial(ell), _x_gens(m) + (JGen(k, tau.arg),), c)
    else:
        raise StructuralError(f"not a symbol: {tau!r}")
    return acc


def coproduct(tau: Symbol, d: int = 3) -> List[CoproductTerm]:
    """Coproduct of ``tau`` as a canonically sorted list of terms.

    The dimension enters only through the homogeneity cut that decides which
    ``J_k`` generators survive.
    """
    _check_dim(d)
    homogeneity(tau, d)  # validates tau for this dimension
    terms = [CoproductTerm(l, r, c) for (l, r), c in _delta(tau, d).items()]

    def key(t: CoproductTerm):
        return (-homogeneity(t.left, d), _sort_key(t.left), tuple(_gen_key(g) for g in t.right))

    return sorted(terms, key=key)


def format_coproduct(terms: List[CoproductTerm], names: bool = True) -> str:
    return " + ".join(t.text(names) for t in terms)
