"""Finite-slice Lie closures of polynomial vector fields.

A closure is computed inside the finite-dimensional space of fields whose
components have total degree at most ``degree_cap``.  The span is kept in
reduced row-echelon form over the rationals, with pivots chosen as the
graded-lex leading ``(monomial, component)`` term (lower component index
wins ties).  The reduced echelon form of a subspace is unique, so the
basis is canonical: it does not depend on the order in which brackets
were explored.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .polyvec import Polynomial, PolyVectorField, lie_bracket

__all__ = [
    "ClosureBasis",
    "Membership",
    "lie_closure",
    "contains",
    "decoupled_generators",
    "verify_decoupled_closure",
]

DEFAULT_DEGREE_CAP = 8
DEFAULT_DEPTH_CAP = 8

Key = tuple  # (component index, Monomial)


def _order(key: Key):
    i, m = key
    return (m.total_degree, tuple(m), -i)


def _to_vec(f: PolyVectorField) -> dict:
    return {k: c for k, c in f.items()}


def _to_field(vec: dict, d: int) -> PolyVectorField:
    comps: list[dict] = [{} for _ in range(d)]
    for (i, m), c in vec.items():
        comps[i][m] = c
    return PolyVectorField([Polynomial(d, t) for t in comps])


def _axpy(y: dict, a: Fraction, x: dict):
    """y += a * x in place, dropping cancelled entries."""
    for k, v in x.items():
        s = y.get(k, 0) + a * v
        if s:
            y[k] = s
        else:
            y.pop(k, None)


class _Echelon:
    """Reduced row-echelon span of sparse rational vectors."""

    def __init__(self):
        self.rows: dict[Key, dict] = {}  # pivot -> row (row[pivot] == 1)

    def reduce(self, vec: dict, coords: dict | None = None) -> dict:
        v = dict(vec)
        for p, row in self.rows.items():
            c = v.get(p)
            if c:
                _axpy(v, -c, row)
                if coords is not None:
                    coords[p] = coords.get(p, 0) + c
        return v

    def insert(self, vec: dict) -> Key | None:
        v = self.reduce(vec)
        if not v:
            return None
        pivot = max(v, key=_order)
        lead = v[pivot]
        v = {k: c / lead for k, c in v.items()}
        for row in self.rows.values():
            c = row.get(pivot)
            if c:
                _axpy(row, -c, v)
        self.rows[pivot] = v
        return pivot

    def sorted_pivots(self) -> list[Key]:
        return sorted(self.rows, key=_order, reverse=True)


@dataclass(frozen=True)
class Membership:
    """Outcome of :func:`contains`.

    ``member`` is ``None`` when the query lies above the degree cap and the
    slice cannot decide it.
    """

    member: bool | None
    coordinates: tuple[Fraction, ...] = ()
    basis: "ClosureBasis | None" = field(default=None, repr=False, compare=False)

    def __bool__(self):
        return bool(self.member)

    def reconstruct(self) -> PolyVectorField:
        if self.basis is None or self.member is not True:
            raise ValueError("no certificate to reconstruct from")
        acc = PolyVectorField.zero(self.basis.dimension)
        for c, b in zip(self.coordinates, self.basis.basis):
            if c:
                acc = acc + b.scale(c)
        return acc


@dataclass(frozen=True)
class ClosureBasis:
    dimension: int
    degree_cap: int
    depth_cap: int
    basis: tuple[PolyVectorField, ...]
    generators: tuple[PolyVectorField, ...]
    pivots: tuple[Key, ...] = field(repr=False, default=())
    rounds: int = 0
    saturated: bool = False

    def __len__(self):
        return len(self.basis)

    def to_text(self) -> str:
        return "\n".join(str(b) for b in self.basis)

    def summary(self) -> dict:
        return {
            "dimension": self.dimension,
            "caps": {"degree": self.degree_cap, "depth": self.depth_cap},
            "basis_size": len(self.basis),
            "generator_count": len(self.generators),
            "rounds": self.rounds,
            "saturated": self.saturated,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def lie_closure(
    generators: Sequence[PolyVectorField],
    degree_cap: int = DEFAULT_DEGREE_CAP,
    depth_cap: int = DEFAULT_DEPTH_CAP,
) -> ClosureBasis:
    """Span of all brackets of ``generators`` nested at most ``depth_cap`` deep,
    keeping only fields of degree at most ``degree_cap``.

    Each round brackets the elements that first appeared in the previous round
    against the whole current basis.  Over-cap brackets are dropped, not
    reported.  Iteration stops early once a round adds nothing (``saturated``).
    """
    gens = tuple(generators)
    if not gens:
        raise ValueError("empty generator list")
    d = gens[0].dimension
    if any(g.dimension != d for g in gens):
        raise ValueError("generators have different dimensions")
    if degree_cap < 1 or depth_cap < 1:
        raise ValueError("caps must be >= 1")

    ech = _Echelon()
    frontier: set[Key] = set()
    for g in gens:
        if g.degree <= degree_cap:
            p = ech.insert(_to_vec(g))
            if p is not None:
                frontier.add(p)

    rounds = 0
    saturated = False
    while rounds < depth_cap:
        if not frontier:
            saturated = True
            break
        rounds += 1
        fields = {p: _to_field(ech.rows[p], d) for p in ech.sorted_pivots()}
        new_pivots = sorted(frontier, key=_order, reverse=True)
        seen_pairs = set()
        candidates = []
        for p in new_pivots:
            fp = fields[p]
            for q, fq in fields.items():
                pair = (p, q) if _order(p) >= _order(q) else (q, p)
                if p == q or pair in seen_pairs:
                    continue
                seen_pairs.add(pair)
                br = lie_bracket(fp, fq)
                if br.is_zero() or br.degree > degree_cap:
                    continue
                candidates.append(br)
        before = set(ech.rows)
        for br in candidates:
            ech.insert(_to_vec(br))
        frontier = set(ech.rows) - before
    else:
        saturated = not frontier

    pivots = tuple(ech.sorted_pivots())
    basis = tuple(_to_field(ech.rows[p], d) for p in pivots)
    return ClosureBasis(
        dimension=d,
        degree_cap=degree_cap,
        depth_cap=depth_cap,
        basis=basis,
        generators=gens,
        pivots=pivots,
        rounds=rounds,
        saturated=saturated,
    )


def contains(basis: ClosureBasis, f: PolyVectorField) -> Membership:
    """Exact membership of ``f`` in the span of ``basis``, with coordinates."""
    if f.dimension != basis.dimension:
        raise ValueError(f"dimension mismatch: {f.dimension} vs {basis.dimension}")
    if f.degree > basis.degree_cap:
        return Membership(None, (), basis)
    ech = _Echelon()
    ech.rows = {p: _to_vec(b) for p, b in zip(basis.pivots, basis.basis)}
    coords: dict = {}
    rest = ech.reduce(_to_vec(f), coords)
    if rest:
        return Membership(False, (), basis)
    return Membership(True, tuple(Fraction(coords.get(p, 0)) for p in basis.pivots), basis)


def decoupled_generators() -> list[PolyVectorField]:
    """Spanning fields of the two-dimensional family with cubic/quadratic
    self-terms and linear cross-coupling:
    (x1^2,0), (x1^3,0), (0,x2^2), (0,x2^3), (x2,0), (0,x1)."""
    def mono(a, b):
        return Polynomial.monomial((a, b))

    z = Polynomial.zero(2)
    return [
        PolyVectorField([mono(2, 0), z]),
        PolyVectorField([mono(3, 0), z]),
        PolyVectorField([z, mono(0, 2)]),
        PolyVectorField([z, mono(0, 3)]),
        PolyVectorField([mono(0, 1), z]),
        PolyVectorField([z, mono(1, 0)]),
    ]


def verify_decoupled_closure(
    degree_cap: int,
    generators: Sequence[PolyVectorField] | None = None,
    depth_cap: int | None = None,
) -> bool:
    """True iff every ``(x1^i x2^j, 0)`` and ``(0, x1^i x2^j)`` with
    ``2 <= i + j <= degree_cap`` lies in the closure of ``generators``
    (default :func:`decoupled_generators`)."""
    if degree_cap < 3:
        raise ValueError("degree_cap must be >= 3")
    gens = decoupled_generators() if generators is None else list(generators)
    depth = 2 * degree_cap if depth_cap is None else depth_cap
    cb = lie_closure(gens, degree_cap, depth)
    z = Polynomial.zero(2)
    for total in range(2, degree_cap + 1):
        for i in range(total + 1):
            m = Polynomial.monomial((i, total - i))
            for target in (PolyVectorField([m, z]), PolyVectorField([z, m])):
                if contains(cb, target).member is not True:
                    return False
    return True
