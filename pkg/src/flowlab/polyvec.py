"""Exact multivariate polynomials and polynomial vector fields over the rationals.

Everything here is immutable.  Coefficients are :class:`fractions.Fraction`
and no operation ever rounds; the only floating-point entry points are
:meth:`Polynomial.evaluate` / :meth:`PolyVectorField.evaluate` and
:func:`to_arrays`, which packs fields for the numeric kernels.

Terms are kept in graded-lexicographic order (total degree first, then
exponent tuples compared lexicographically, largest first), which is also
the order of the canonical text form::

    >>> p = parse_polynomial("2*x1^2*x2 - 1/3*x2^3", 2)
    >>> str(p)
    '2*x1^2*x2 - 1/3*x2^3'
"""
from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Monomial",
    "Polynomial",
    "PolyVectorField",
    "ParseError",
    "add",
    "mul",
    "partial",
    "lie_bracket",
    "divergence",
    "curl2",
    "eval_field",
    "parse_polynomial",
    "parse_field",
    "to_arrays",
]


class Monomial(tuple):
    """Exponent vector ``(a_1, ..., a_d)`` standing for ``x1^a_1 * ... * xd^a_d``."""

    __slots__ = ()

    def __new__(cls, exponents: Iterable[int]):
        exps = tuple(int(e) for e in exponents)
        if not exps:
            raise ValueError("monomial needs at least one coordinate")
        if any(e < 0 for e in exps):
            raise ValueError(f"negative exponent in {exps}")
        return super().__new__(cls, exps)

    @property
    def exponents(self) -> tuple[int, ...]:
        return tuple(self)

    @property
    def dimension(self) -> int:
        return len(self)

    @property
    def total_degree(self) -> int:
        return sum(self)

    def grlex_key(self) -> tuple:
        return (sum(self), tuple(self))

    def __mul__(self, other):  # exponent addition, not tuple repetition
        return Monomial(a + b for a, b in zip(self, other))

    def __repr__(self):
        return f"Monomial({tuple(self)})"


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (int, Rational)):
        return Fraction(c)
    if isinstance(c, float):
        if not math.isfinite(c):
            raise ValueError("non-finite coefficient")
        return Fraction(c)
    if isinstance(c, str):
        return Fraction(c)
    raise TypeError(f"cannot use {type(c).__name__} as an exact coefficient")


def _fmt_coeff(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


class Polynomial:
    """Polynomial in ``dimension`` variables with exact rational coefficients.

    ``terms`` maps :class:`Monomial` to a non-zero :class:`Fraction`; zero
    coefficients are never stored, so the zero polynomial has no terms and
    degree ``-1``.
    """

    __slots__ = ("_dim", "_terms", "_hash", "_horner")

    def __init__(self, dimension: int, terms: Mapping | None = None):
        if int(dimension) < 1:
            raise ValueError("dimension must be >= 1")
        self._dim = int(dimension)
        clean: dict[Monomial, Fraction] = {}
        for mono, coeff in (terms or {}).items():
            m = mono if isinstance(mono, Monomial) else Monomial(mono)
            if len(m) != self._dim:
                raise ValueError(f"monomial {tuple(m)} does not have dimension {self._dim}")
            c = _as_fraction(coeff)
            if c:
                clean[m] = clean.get(m, Fraction(0)) + c
                if not clean[m]:
                    del clean[m]
        self._terms = dict(sorted(clean.items(), key=lambda kv: kv[0].grlex_key(), reverse=True))
        self._hash = None
        self._horner = None

    # -- constructors -------------------------------------------------------
    @classmethod
    def _raw(cls, dimension: int, terms: dict) -> "Polynomial":
        # trusted path: keys are Monomials of the right dimension, values non-zero Fractions
        obj = cls.__new__(cls)
        obj._dim = dimension
        obj._terms = dict(sorted(terms.items(), key=lambda kv: kv[0].grlex_key(), reverse=True))
        obj._hash = None
        obj._horner = None
        return obj

    @classmethod
    def zero(cls, dimension: int) -> "Polynomial":
        return cls(dimension)

    @classmethod
    def constant(cls, value, dimension: int) -> "Polynomial":
        return cls(dimension, {(0,) * dimension: value})

    @classmethod
    def variable(cls, axis: int, dimension: int) -> "Polynomial":
        """The coordinate ``x_{axis+1}`` (``axis`` is zero-based)."""
        if not 0 <= axis < dimension:
            raise IndexError(f"axis {axis} out of range for dimension {dimension}")
        exps = [0] * dimension
        exps[axis] = 1
        return cls(dimension, {tuple(exps): 1})

    @classmethod
    def monomial(cls, exponents: Sequence[int], coeff=1) -> "Polynomial":
        return cls(len(exponents), {tuple(exponents): coeff})

    # -- accessors ----------------------------------------------------------
    @property
    def dimension(self) -> int:
        return self._dim

    @property
    def terms(self) -> Mapping[Monomial, Fraction]:
        return MappingProxyType(self._terms)

    @property
    def degree(self) -> int:
        if not self._terms:
            return -1
        return max(m.total_degree for m in self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def coeff(self, exponents: Sequence[int]) -> Fraction:
        return self._terms.get(Monomial(exponents), Fraction(0))

    # -- arithmetic ---------------------------------------------------------
    def _check(self, other: "Polynomial"):
        if not isinstance(other, Polynomial):
            raise TypeError(f"expected Polynomial, got {type(other).__name__}")
        if other._dim != self._dim:
            raise ValueError(f"dimension mismatch: {self._dim} vs {other._dim}")

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(other, self._dim)
        self._check(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            s = out.get(m, 0) + c
            if s:
                out[m] = s
            else:
                out.pop(m, None)
        return Polynomial._raw(self._dim, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw(self._dim, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(other, self._dim)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, factor) -> "Polynomial":
        f = _as_fraction(factor)
        if not f:
            return Polynomial._raw(self._dim, {})
        return Polynomial._raw(self._dim, {m: c * f for m, c in self._terms.items()})

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return self.scale(other)
        self._check(other)
        out: dict[Monomial, Fraction] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = m1 * m2
                out[m] = out.get(m, 0) + c1 * c2
        return Polynomial._raw(self._dim, {m: c for m, c in out.items() if c})

    def __rmul__(self, other):
        return self.scale(other)

    def __pow__(self, n: int):
        if int(n) != n or n < 0:
            raise ValueError("only non-negative integer powers")
        result = Polynomial.constant(1, self._dim)
        base = self
        n = int(n)
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def partial(self, axis: int) -> "Polynomial":
        if not 0 <= axis < self._dim:
            raise IndexError(f"axis {axis} out of range for dimension {self._dim}")
        out = {}
        for m, c in self._terms.items():
            e = m[axis]
            if e:
                exps = list(m)
                exps[axis] = e - 1
                out[Monomial(exps)] = c * e
        return Polynomial._raw(self._dim, out)

    # -- comparison / hashing -----------------------------------------------
    def __eq__(self, other):
        if isinstance(other, Polynomial):
            return self._dim == other._dim and self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == Polynomial.constant(other, self._dim)
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self._dim, tuple(self._terms.items())))
        return self._hash

    # -- evaluation ---------------------------------------------------------
    def evaluate_exact(self, x: Sequence) -> Fraction:
        xs = [_as_fraction(v) for v in x]
        if len(xs) != self._dim:
            raise ValueError(f"expected {self._dim} coordinates, got {len(xs)}")
        total = Fraction(0)
        for m, c in self._terms.items():
            t = c
            for v, e in zip(xs, m):
                if e:
                    t *= v**e
            total += t
        return total

    def _horner_tree(self):
        if self._horner is None:
            self._horner = _build_horner(
                [(tuple(m), float(c)) for m, c in self._terms.items()], 0, self._dim
            )
        return self._horner

    def evaluate(self, x: Sequence[float]) -> float:
        """Float evaluation by nested (multivariate) Horner accumulation."""
        if len(x) != self._dim:
            raise ValueError(f"expected {self._dim} coordinates, got {len(x)}")
        return _eval_horner(self._horner_tree(), [float(v) for v in x], 0)

    __call__ = evaluate

    # -- text ---------------------------------------------------------------
    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for i, (m, c) in enumerate(self._terms.items()):
            factors = []
            for j, e in enumerate(m):
                if e == 1:
                    factors.append(f"x{j + 1}")
                elif e > 1:
                    factors.append(f"x{j + 1}^{e}")
            mag = abs(c)
            if factors:
                body = "*".join(factors) if mag == 1 else _fmt_coeff(mag) + "*" + "*".join(factors)
            else:
                body = _fmt_coeff(mag)
            if i == 0:
                parts.append(("-" if c < 0 else "") + body)
            else:
                parts.append((" - " if c < 0 else " + ") + body)
        return "".join(parts)

    def __repr__(self):
        return f"Polynomial({self._dim}, {str(self)!r})"


def _build_horner(terms, axis, dim):
    # Node: list of (exponent, child) in descending exponent order, or a float leaf.
    if axis == dim:
        return sum(c for _, c in terms)
    groups: dict[int, list] = {}
    for m, c in terms:
        groups.setdefault(m[axis], []).append((m, c))
    return [(e, _build_horner(groups[e], axis + 1, dim)) for e in sorted(groups, reverse=True)]


def _eval_horner(node, x, axis):
    if not isinstance(node, list):
        return node
    if not node:
        return 0.0
    xv = x[axis]
    acc = 0.0
    prev = node[0][0]
    for e, child in node:
        acc *= xv ** (prev - e)
        acc += _eval_horner(child, x, axis + 1)
        prev = e
    return acc * xv**prev


class PolyVectorField:
    """A d-tuple of :class:`Polynomial` components, all of dimension d."""

    __slots__ = ("_components", "_hash")

    def __init__(self, components: Sequence[Polynomial]):
        comps = tuple(components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        d = len(comps)
        for p in comps:
            if not isinstance(p, Polynomial):
                raise TypeError("components must be Polynomial")
            if p.dimension != d:
                raise ValueError(
                    f"component of dimension {p.dimension} in a field of dimension {d}"
                )
        self._components = comps
        self._hash = None

    @classmethod
    def zero(cls, dimension: int) -> "PolyVectorField":
        return cls([Polynomial.zero(dimension)] * dimension)

    @classmethod
    def constant(cls, values: Sequence) -> "PolyVectorField":
        d = len(values)
        return cls([Polynomial.constant(v, d) for v in values])

    @classmethod
    def axis_field(cls, poly: Polynomial, axis: int) -> "PolyVectorField":
        """Field with ``poly`` in slot ``axis`` and zeros elsewhere."""
        d = poly.dimension
        return cls([poly if i == axis else Polynomial.zero(d) for i in range(d)])

    @property
    def dimension(self) -> int:
        return len(self._components)

    @property
    def components(self) -> tuple[Polynomial, ...]:
        return self._components

    def __getitem__(self, i) -> Polynomial:
        return self._components[i]

    def __len__(self):
        return len(self._components)

    def __iter__(self):
        return iter(self._components)

    @property
    def degree(self) -> int:
        return max(p.degree for p in self._components)

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self._components)

    def items(self):
        """Yield ``((component, monomial), coefficient)`` for every stored term."""
        for i, p in enumerate(self._components):
            for m, c in p.terms.items():
                yield (i, m), c

    def _check(self, other):
        if not isinstance(other, PolyVectorField):
            raise TypeError(f"expected PolyVectorField, got {type(other).__name__}")
        if other.dimension != self.dimension:
            raise ValueError(f"dimension mismatch: {self.dimension} vs {other.dimension}")

    def __add__(self, other):
        self._check(other)
        return PolyVectorField([a + b for a, b in zip(self, other)])

    def __sub__(self, other):
        self._check(other)
        return PolyVectorField([a - b for a, b in zip(self, other)])

    def __neg__(self):
        return PolyVectorField([-a for a in self])

    def scale(self, factor) -> "PolyVectorField":
        return PolyVectorField([a.scale(factor) for a in self])

    def __mul__(self, factor):
        return self.scale(factor)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, PolyVectorField):
            return NotImplemented
        return self._components == other._components

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self._components)
        return self._hash

    def jacobian(self) -> list[list[Polynomial]]:
        """``J[i][j] = d f_i / d x_j``."""
        return [[p.partial(j) for j in range(self.dimension)] for p in self]

    def divergence(self) -> Polynomial:
        return divergence(self)

    def evaluate(self, x: Sequence[float]) -> np.ndarray:
        return eval_field(self, x)

    __call__ = evaluate

    def __str__(self):
        return "(" + ", ".join(str(p) for p in self._components) + ")"

    def __repr__(self):
        return f"PolyVectorField({str(self)!r})"


# -- module-level operations --------------------------------------------------

def add(p: Polynomial, q: Polynomial) -> Polynomial:
    p._check(q)
    return p + q


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    p._check(q)
    return p * q


def partial(p: Polynomial, axis: int) -> Polynomial:
    return p.partial(axis)


def lie_bracket(f: PolyVectorField, g: PolyVectorField) -> PolyVectorField:
    """``[f, g] = Dg f - Df g``, i.e. ``[f, g]_i = sum_j (d_j g_i) f_j - (d_j f_i) g_j``.

    With this convention ``[x^n, x^2] = (2 - n) x^(n+1)`` in one variable.
    """
    f._check(g)
    d = f.dimension
    out = []
    for i in range(d):
        acc = Polynomial.zero(d)
        for j in range(d):
            if not f[j].is_zero():
                acc = acc + g[i].partial(j) * f[j]
            if not g[j].is_zero():
                acc = acc - f[i].partial(j) * g[j]
        out.append(acc)
    return PolyVectorField(out)


def divergence(f: PolyVectorField) -> Polynomial:
    acc = Polynomial.zero(f.dimension)
    for i, p in enumerate(f):
        acc = acc + p.partial(i)
    return acc


def curl2(f: Polynomial) -> PolyVectorField:
    """Planar curl field ``(-f_x2, f_x1)`` of a scalar potential."""
    if f.dimension != 2:
        raise ValueError(f"curl2 needs a polynomial in 2 variables, got {f.dimension}")
    return PolyVectorField([-f.partial(1), f.partial(0)])


def eval_field(f: PolyVectorField, x: Sequence[float]) -> np.ndarray:
    if len(x) != f.dimension:
        raise ValueError(f"expected {f.dimension} coordinates, got {len(x)}")
    return np.array([p.evaluate(x) for p in f], dtype=float)


def to_arrays(fields: Sequence[PolyVectorField]) -> tuple[np.ndarray, np.ndarray]:
    """Pack fields as ``(exps, coef)`` with ``f_k(x)_i = sum_m coef[k, i, m] * x^exps[m]``.

    ``exps`` has shape (M, d) and int64 dtype; ``coef`` has shape (k, d, M).
    """
    if not fields:
        raise ValueError("no fields to pack")
    d = fields[0].dimension
    monos: dict[Monomial, int] = {}
    for f in fields:
        if f.dimension != d:
            raise ValueError("fields of mixed dimension")
        for (_, m), _c in f.items():
            monos.setdefault(m, len(monos))
    order = sorted(monos, key=Monomial.grlex_key)
    index = {m: k for k, m in enumerate(order)}
    exps = np.array([tuple(m) for m in order], dtype=np.int64).reshape(len(order), d)
    coef = np.zeros((len(fields), d, len(order)))
    for k, f in enumerate(fields):
        for (i, m), c in f.items():
            coef[k, i, index[m]] = float(c)
    return exps, coef


# -- parsing -------------------------------------------------------------------

class ParseError(ValueError):
    """Malformed polynomial or field expression; ``position`` is a 0-based offset."""

    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position}\n  {text}\n  {' ' * position}^")


class _Parser:
    def __init__(self, text: str, dimension: int, offset: int = 0, full: str | None = None):
        self.text = text
        self.d = dimension
        self.i = 0
        self.offset = offset
        self.full = full if full is not None else text

    def error(self, msg):
        raise ParseError(msg, self.full, self.offset + self.i)

    def peek(self):
        while self.i < len(self.text) and self.text[self.i].isspace():
            self.i += 1
        return self.text[self.i] if self.i < len(self.text) else ""

    def parse(self) -> Polynomial:
        if not self.peek():
            self.error("empty expression")
        p = self.expr()
        if self.peek():
            self.error(f"unexpected {self.peek()!r}")
        return p

    def expr(self):
        acc = self.term()
        while self.peek() in ("+", "-"):
            op = self.text[self.i]
            self.i += 1
            rhs = self.term()
            acc = acc + rhs if op == "+" else acc - rhs
        return acc

    def term(self):
        acc = self.unary()
        while self.peek() in ("*", "/"):
            op = self.text[self.i]
            self.i += 1
            if op == "*":
                acc = acc * self.unary()
            else:
                start = self.i
                den = self.unary()
                if den.degree > 0 or den.is_zero():
                    self.i = start
                    self.error("can only divide by a non-zero constant")
                acc = acc.scale(1 / den.coeff((0,) * self.d))
        return acc

    def unary(self):
        if self.peek() == "-":
            self.i += 1
            return -self.unary()
        if self.peek() == "+":
            self.i += 1
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == "^":
            self.i += 1
            self.peek()
            start = self.i
            while self.i < len(self.text) and self.text[self.i].isdigit():
                self.i += 1
            if start == self.i:
                self.error("expected integer exponent")
            base = base ** int(self.text[start:self.i])
        return base

    def atom(self):
        ch = self.peek()
        if ch == "(":
            self.i += 1
            p = self.expr()
            if self.peek() != ")":
                self.error("expected ')'")
            self.i += 1
            return p
        if ch.isdigit() or ch == ".":
            start = self.i
            while self.i < len(self.text) and (self.text[self.i].isdigit() or self.text[self.i] == "."):
                self.i += 1
            try:
                return Polynomial.constant(Fraction(self.text[start:self.i]), self.d)
            except ValueError:
                self.i = start
                self.error("bad number")
        if ch == "x":
            start = self.i
            self.i += 1
            while self.i < len(self.text) and self.text[self.i].isdigit():
                self.i += 1
            digits = self.text[start + 1:self.i]
            if not digits:
                if self.d != 1:
                    self.i = start
                    self.error("bare 'x' is only allowed in one variable")
                return Polynomial.variable(0, 1)
            k = int(digits)
            if not 1 <= k <= self.d:
                self.i = start
                self.error(f"variable x{k} outside dimension {self.d}")
            return Polynomial.variable(k - 1, self.d)
        self.error(f"unexpected {ch!r}" if ch else "unexpected end of input")


def parse_polynomial(text: str, dimension: int) -> Polynomial:
    return _Parser(text, dimension).parse()


def _split_top(text: str, start: int):
    parts, depth, last = [], 0, start
    for k in range(start, len(text)):
        c = text[k]
        if c in "([":
            depth += 1
        elif c in ")]":
            depth -= 1
        elif c == "," and depth == 0:
            parts.append((last, text[last:k]))
            last = k + 1
    parts.append((last, text[last:]))
    return parts


def parse_field(text: str) -> PolyVectorField:
    """Parse ``"v:<potential>"`` (planar curl field) or ``"(p1, ..., pd)"``."""
    s = text.strip()
    lead = len(text) - len(text.lstrip())
    if s.startswith("v:"):
        return curl2(_Parser(s[2:], 2, offset=lead + 2, full=text).parse())
    if not s or s[0] not in "([" or s[-1] != {"(": ")", "[": "]"}[s[0]]:
        raise ParseError("expected '(...)' component list or 'v:<polynomial>'", text, lead)
    inner = s[1:-1]
    chunks = _split_top(inner, 0)
    d = len(chunks)
    comps = [_Parser(chunk, d, offset=lead + 1 + pos, full=text).parse() for pos, chunk in chunks]
    return PolyVectorField(comps)
