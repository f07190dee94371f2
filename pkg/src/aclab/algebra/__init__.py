"""Exact tree algebra: symbols, homogeneities, symbol sets and the coproduct."""
from aclab.algebra.symbols import (
    ONE,
    TREES,
    XI,
    Homogeneity,
    Integ,
    One,
    Prod,
    Symbol,
    X,
    Xi,
    chaos_order,
    contains_polynomial,
    homogeneity,
    integ,
    is_polynomial,
    parabolic_length,
    parse,
    power,
    product,
    to_text,
    tree,
    tree_name,
    x_monomial,
)
from aclab.algebra.structure import (
    CoproductTerm,
    JGen,
    SymbolSets,
    XGen,
    coproduct,
    format_coproduct,
    generate_symbols,
)

__all__ = [
    "ONE", "TREES", "XI", "Homogeneity", "Integ", "One", "Prod", "Symbol", "X", "Xi",
    "chaos_order", "contains_polynomial", "homogeneity", "integ", "is_polynomial",
    "parabolic_length", "parse", "power", "product", "to_text", "tree", "tree_name",
    "x_monomial", "CoproductTerm", "JGen", "SymbolSets", "XGen", "coproduct",
    "format_coproduct", "generate_symbols",
]
