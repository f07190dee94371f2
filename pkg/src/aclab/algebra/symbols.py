"""Formal tree symbols with exact homogeneities.

A symbol is one of ``ONE``, ``XI``, a polynomial monomial ``X(k)``, an
integration ``Integ(tau)`` or a commutative product ``Prod(factors)``.
Symbols are immutable and always held in canonical form, so equality and
hashing are structural.

Homogeneities are exact: ``Homogeneity(a, b)`` stands for ``a + b*kappa`` with
``kappa`` an infinitesimally small positive number, and ordering is the
``kappa -> 0+`` lexicographic order.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from fractions import Fraction
from typing import Union

from aclab.errors import StructuralError

__all__ = [
    "Homogeneity",
    "Symbol",
    "One",
    "Xi",
    "X",
    "Integ",
    "Prod",
    "ONE",
    "XI",
    "x_monomial",
    "integ",
    "product",
    "power",
    "homogeneity",
    "chaos_order",
    "parabolic_length",
    "contains_polynomial",
    "is_polynomial",
    "to_text",
    "parse",
    "TREES",
    "tree",
    "tree_name",
]

Rational = Union[int, Fraction]


@dataclass(frozen=True, order=True)
class Homogeneity:
    """Exact value ``a + b*kappa``; field order gives the kappa -> 0+ ordering."""

    a: Fraction = Fraction(0)
    b: int = 0

    def __post_init__(self):
        object.__setattr__(self, "a", Fraction(self.a))
        if int(self.b) != self.b:
            raise StructuralError(f"kappa coefficient must be an integer, got {self.b!r}")
        object.__setattr__(self, "b", int(self.b))

    def __add__(self, other: Homogeneity) -> Homogeneity:
        return Homogeneity(self.a + other.a, self.b + other.b)

    def __sub__(self, other: Homogeneity) -> Homogeneity:
        return Homogeneity(self.a - other.a, self.b - other.b)

    def __neg__(self) -> Homogeneity:
        return Homogeneity(-self.a, -self.b)

    def scaled(self, n: int) -> Homogeneity:
        return Homogeneity(self.a * n, self.b * n)

    def is_negative(self) -> bool:
        return self < Homogeneity()

    def __str__(self) -> str:
        if self.b == 0:
            return str(self.a)
        kap = "κ" if abs(self.b) == 1 else f"{abs(self.b)}κ"
        if self.a == 0:
            return f"-{kap}" if self.b < 0 else kap
        sign = "-" if self.b < 0 else "+"
        return f"{self.a} {sign} {kap}"


class Symbol:
    """Base class; use the module-level constructors rather than subclasses."""

    __slots__ = ()

    def __mul__(self, other: Symbol) -> Symbol:
        return product(self, other)

    def __pow__(self, n: int) -> Symbol:
        return power(self, n)

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True, repr=False)
class One(Symbol):
    def __repr__(self):
        return "ONE"


@dataclass(frozen=True, repr=False)
class Xi(Symbol):
    def __repr__(self):
        return "XI"


@dataclass(frozen=True, repr=False)
class X(Symbol):
    """Monomial ``X^k``; ``k`` is stored without trailing zeros and is non-zero."""

    k: tuple

    def __post_init__(self):
        k = tuple(int(v) for v in self.k)
        if any(v < 0 for v in k):
            raise StructuralError(f"negative multi-index {k}")
        while k and k[-1] == 0:
            k = k[:-1]
        if not k:
            raise StructuralError("X^0 is the unit; use ONE")
        object.__setattr__(self, "k", k)

    def __repr__(self):
        return f"X{self.k}"


@dataclass(frozen=True, repr=False)
class Integ(Symbol):
    arg: Symbol

    def __post_init__(self):
        if is_polynomial(self.arg):
            raise StructuralError(f"I({to_text(self.arg)}) vanishes: integration kills polynomials")

    def __repr__(self):
        return f"Integ({self.arg!r})"


@dataclass(frozen=True, repr=False)
class Prod(Symbol):
    """Product of at least two non-unit factors, sorted, with polynomials merged."""

    factors: tuple

    def __post_init__(self):
        fs = tuple(self.factors)
        if len(fs) < 2:
            raise StructuralError("a product needs at least two factors")
        for f in fs:
            if isinstance(f, (One, Prod)):
                raise StructuralError("product factors must be non-unit and non-product")
        if sum(isinstance(f, X) for f in fs) > 1:
            raise StructuralError("polynomial factors must be merged into one monomial")
        if list(fs) != sorted(fs, key=_sort_key):
            raise StructuralError("product factors are not in canonical order")
        object.__setattr__(self, "factors", fs)

    def __repr__(self):
        return f"Prod({self.factors!r})"


ONE = One()
XI = Xi()


def x_monomial(k) -> Symbol:
    """``X^k`` for a multi-index ``k = (k_0, ..., k_d)``; the zero index gives ONE."""
    k = tuple(int(v) for v in k)
    if not any(k):
        if any(v < 0 for v in k):
            raise StructuralError(f"negative multi-index {k}")
        return ONE
    return X(k)


def integ(tau: Symbol) -> Symbol:
    return Integ(tau)


def _add_index(k1: tuple, k2: tuple) -> tuple:
    n = max(len(k1), len(k2))
    k1 = k1 + (0,) * (n - len(k1))
    k2 = k2 + (0,) * (n - len(k2))
    return tuple(a + b for a, b in zip(k1, k2))


def product(*taus: Symbol) -> Symbol:
    """Canonical commutative product; flattens, drops units, merges monomials."""
    flat = []
    for t in taus:
        if not isinstance(t, Symbol):
            raise StructuralError(f"not a symbol: {t!r}")
        if isinstance(t, Prod):
            flat.extend(t.factors)
        elif not isinstance(t, One):
            flat.append(t)
    k: tuple = ()
    rest = []
    for f in flat:
        if isinstance(f, X):
            k = _add_index(k, f.k)
        else:
            rest.append(f)
    if k:
        rest.append(X(k))
    if not rest:
        return ONE
    if len(rest) == 1:
        return rest[0]
    return Prod(tuple(sorted(rest, key=_sort_key)))


def power(tau: Symbol, n: int) -> Symbol:
    if n < 0:
        raise StructuralError("negative powers are not symbols")
    return product(*([tau] * n))


def parabolic_length(k) -> int:
    """``|k| = 2 k_0 + k_1 + ... + k_d``."""
    k = tuple(k)
    if not k:
        return 0
    return 2 * k[0] + sum(k[1:])


def _xi_homogeneity(d: int) -> Homogeneity:
    return Homogeneity(Fraction(-(d + 2), 2), -1)


def _check_dim(d: int) -> None:
    if d not in (1, 2, 3):
        raise StructuralError(f"dimension must be 1, 2 or 3, got {d!r}")


def homogeneity(tau: Symbol, d: int) -> Homogeneity:
    """Exact homogeneity of ``tau`` in spatial dimension ``d``."""
    _check_dim(d)
    return _homogeneity(tau, d)


@lru_cache(maxsize=None)
def _homogeneity(tau: Symbol, d: int) -> Homogeneity:
    if isinstance(tau, One):
        return Homogeneity()
    if isinstance(tau, Xi):
        return _xi_homogeneity(d)
    if isinstance(tau, X):
        if len(tau.k) > d + 1:
            raise StructuralError(f"{to_text(tau)} uses a coordinate beyond X{d} in dimension {d}")
        return Homogeneity(parabolic_length(tau.k))
    if isinstance(tau, Integ):
        return _homogeneity(tau.arg, d) + Homogeneity(2)
    if isinstance(tau, Prod):
        total = Homogeneity()
        for f in tau.factors:
            total = total + _homogeneity(f, d)
        return total
    raise StructuralError(f"not a symbol: {tau!r}")


@lru_cache(maxsize=None)
def chaos_order(tau: Symbol) -> int:
    """Number of noise leaves in the tree."""
    if isinstance(tau, Xi):
        return 1
    if isinstance(tau, Integ):
        return chaos_order(tau.arg)
    if isinstance(tau, Prod):
        return sum(chaos_order(f) for f in tau.factors)
    if isinstance(tau, (One, X)):
        return 0
    raise StructuralError(f"not a symbol: {tau!r}")


def is_polynomial(tau: Symbol) -> bool:
    return isinstance(tau, (One, X))


def contains_polynomial(tau: Symbol) -> bool:
    """True if an ``X`` factor occurs anywhere in the tree."""
    if isinstance(tau, X):
        return True
    if isinstance(tau, Integ):
        return contains_polynomial(tau.arg)
    if isinstance(tau, Prod):
        return any(contains_polynomial(f) for f in tau.factors)
    return False


@lru_cache(maxsize=None)
def _height(tau: Symbol) -> int:
    if isinstance(tau, Integ):
        return 1 + _height(tau.arg)
    if isinstance(tau, Prod):
        return max(_height(f) for f in tau.factors)
    return 0


_RANK = {One: 0, X: 1, Xi: 2, Integ: 3, Prod: 4}


@lru_cache(maxsize=None)
def _sort_key(tau: Symbol):
    # Dimension-independent: monomials first, then by noise count and depth.
    return (_RANK[type(tau)], chaos_order(tau), _height(tau), to_text(tau))


def _x_text(k: tuple) -> str:
    parts = []
    for i, e in enumerate(k):
        if e == 1:
            parts.append(f"X{i}")
        elif e > 1:
            parts.append(f"X{i}^{e}")
    return "*".join(parts)


@lru_cache(maxsize=None)
def to_text(tau: Symbol) -> str:
    """Plain-text form, e.g. ``I(Xi)^3`` or ``X0^2*I(Xi)``."""
    if isinstance(tau, One):
        return "1"
    if isinstance(tau, Xi):
        return "Xi"
    if isinstance(tau, X):
        return _x_text(tau.k)
    if isinstance(tau, Integ):
        return f"I({to_text(tau.arg)})"
    if isinstance(tau, Prod):
        out = []
        i = 0
        fs = tau.factors
        while i < len(fs):
            j = i
            while j < len(fs) and fs[j] == fs[i]:
                j += 1
            txt = to_text(fs[i])
            out.append(txt if j - i == 1 else f"{txt}^{j - i}")
            i = j
        return "*".join(out)
    raise StructuralError(f"not a symbol: {tau!r}")


class _Parser:
    def __init__(self, text: str):
        self.s = text.replace(" ", "")
        self.i = 0

    def error(self, msg: str):
        raise StructuralError(f"{msg} at position {self.i} in {self.s!r}")

    def peek(self, lit: str) -> bool:
        return self.s.startswith(lit, self.i)

    def eat(self, lit: str):
        if not self.peek(lit):
            self.error(f"expected {lit!r}")
        self.i += len(lit)

    def integer(self) -> int:
        j = self.i
        while j < len(self.s) and self.s[j].isdigit():
            j += 1
        if j == self.i:
            self.error("expected an integer")
        val = int(self.s[self.i:j])
        self.i = j
        return val

    def expr(self) -> Symbol:
        terms = [self.term()]
        while self.peek("*"):
            self.eat("*")
            terms.append(self.term())
        return product(*terms)

    def term(self) -> Symbol:
        base = self.atom()
        if self.peek("^"):
            self.eat("^")
            return power(base, self.integer())
        return base

    def atom(self) -> Symbol:
        if self.peek("Xi"):
            self.eat("Xi")
            return XI
        if self.peek("X"):
            self.eat("X")
            i = self.integer()
            k = [0] * (i + 1)
            k[i] = 1
            return X(tuple(k))
        if self.peek("I("):
            self.eat("I(")
            inner = self.expr()
            self.eat(")")
            return integ(inner)
        if self.peek("("):
            self.eat("(")
            inner = self.expr()
            self.eat(")")
            return inner
        if self.peek("1"):
            self.eat("1")
            return ONE
        self.error("unexpected input")


def parse(text: str) -> Symbol:
    """Parse the plain-text syntax; ``to_text(parse(s)) == s`` on canonical input."""
    p = _Parser(text)
    if not p.s:
        raise StructuralError("empty symbol text")
    tau = p.expr()
    if p.i != len(p.s):
        p.error("trailing input")
    return tau


_ONE_LEAF = integ(XI)

#: Short names for the trees that carry the minimal model.
TREES = {
    "Xi": XI,
    "<1>": _ONE_LEAF,
    "<2>": power(_ONE_LEAF, 2),
    "<3>": power(_ONE_LEAF, 3),
    "<20>": integ(power(_ONE_LEAF, 2)),
    "<30>": integ(power(_ONE_LEAF, 3)),
    "<22>": product(integ(power(_ONE_LEAF, 2)), power(_ONE_LEAF, 2)),
    "<31>": product(integ(power(_ONE_LEAF, 3)), _ONE_LEAF),
    "<32>": product(integ(power(_ONE_LEAF, 3)), power(_ONE_LEAF, 2)),
}
_NAMES = {v: k for k, v in TREES.items()}


def tree(name: str) -> Symbol:
    try:
        return TREES[name]
    except KeyError:
        raise StructuralError(f"unknown tree name {name!r}") from None


def tree_name(tau: Symbol) -> str:
    """Short name such as ``<22>`` when one exists, else the text form."""
    return _NAMES.get(tau, to_text(tau))
