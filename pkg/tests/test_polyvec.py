from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import fields, polynomials
from flowlab.polyvec import (
    Monomial,
    ParseError,
    Polynomial,
    PolyVectorField,
    add,
    curl2,
    divergence,
    eval_field,
    lie_bracket,
    mul,
    parse_field,
    parse_polynomial,
    partial,
    to_arrays,
)


def P(text, d=2):
    return parse_polynomial(text, d)


def V(text):
    return parse_field(text)


class TestMonomial:
    def test_total_degree(self):
        m = Monomial((2, 0, 3))
        assert m.total_degree == 5
        assert m.exponents == (2, 0, 3)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            Monomial((1, -1))

    def test_product_adds_exponents(self):
        assert Monomial((1, 2)) * Monomial((3, 0)) == Monomial((4, 2))


class TestArithmetic:
    def test_additive_inverse_is_empty(self):
        z = add(P("x1^2"), P("-x1^2"))
        assert z.is_zero and z.degree == -1 and dict(z.terms) == {}

    def test_coefficient_merge(self):
        assert add(P("x1 + x2"), P("x1")) == P("2*x1 + x2")

    def test_disjoint_terms(self):
        assert str(add(P("x1^2*x2^2"), P("x1^2*x2"))) == "x1^2*x2^2 + x1^2*x2"

    def test_products(self):
        assert mul(P("x1"), P("x2")) == P("x1*x2")
        assert mul(P("x1 + x2"), P("x1 - x2")) == P("x1^2 - x2^2")
        assert mul(P("2*x1^2"), P("3*x2^2")) == P("6*x1^2*x2^2")

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            add(P("x1", 2), P("x1", 3))
        with pytest.raises(ValueError):
            mul(P("x1", 2), P("x1", 1))

    def test_no_zero_coefficients_stored(self):
        p = Polynomial(2, {(1, 0): 0, (0, 1): Fraction(1, 3)})
        assert list(p.terms.values()) == [Fraction(1, 3)]

    def test_exact_rationals(self):
        p = P("1/3*x1") + P("1/6*x1")
        assert p.coeff((1, 0)) == Fraction(1, 2)


class TestPartial:
    def test_examples(self):
        assert partial(P("x1^2*x2^2"), 1) == P("2*x1^2*x2")
        assert partial(P("x2^3"), 0).is_zero
        assert partial(P("x1^2*x2^2"), 0) == P("2*x1*x2^2")

    def test_axis_out_of_range(self):
        with pytest.raises(IndexError):
            partial(P("x1"), 2)


class TestBracket:
    def test_curl_identity_example(self):
        # [v(x1), v(x1^2 x2^2)] = 2 v(x1^2 x2) = (-2 x1^2, 4 x1 x2)
        b = lie_bracket(curl2(P("x1")), curl2(P("x1^2*x2^2")))
        assert b == V("(-2*x1^2, 4*x1*x2)")
        assert b == curl2(P("x1^2*x2")).scale(2)

    def test_self_bracket_zero(self):
        f = V("(x1^2 + x2, x1*x2)")
        assert lie_bracket(f, f).is_zero

    @pytest.mark.parametrize("n", [0, 1, 2, 3, 4, 5, 7])
    def test_one_dimensional_convention(self, n):
        # D g f - D f g with f = x^n, g = x^2: 2x * x^n - n x^{n-1} x^2 = (2 - n) x^{n+1}
        f = PolyVectorField([Polynomial.monomial((n,))])
        g = PolyVectorField([Polynomial.monomial((2,))])
        expected = PolyVectorField([Polynomial.monomial((n + 1,), 2 - n)])
        assert lie_bracket(f, g) == expected

    def test_x2_x3_sign(self):
        a = V("(x1^2)")
        b = V("(x1^3)")
        assert lie_bracket(a, b) == V("(x1^4)")
        assert lie_bracket(b, a) == V("(-x1^4)")

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lie_bracket(V("(x1, x2)"), V("(x1)"))


class TestDivergenceCurl:
    def test_examples(self):
        assert divergence(curl2(P("x1^2*x2^2"))).is_zero
        assert divergence(V("(x1, x2)")) == Polynomial.constant(2, 2)
        assert divergence(V("(x1^3, x2^3)")) == P("3*x1^2 + 3*x2^2")

    def test_curl_examples(self):
        assert curl2(P("x1")) == V("(0, 1)")
        assert curl2(P("x2")) == V("(-1, 0)")
        assert curl2(P("x1^2*x2^2")) == V("(-2*x1^2*x2, 2*x1*x2^2)")
        assert curl2(Polynomial.constant(7, 2)).is_zero

    def test_curl_needs_planar(self):
        with pytest.raises(ValueError):
            curl2(P("x1", 3))


class TestEval:
    def test_examples(self):
        np.testing.assert_array_equal(eval_field(curl2(P("x1^2*x2^2")), [1, 1]), [-2, 2])
        np.testing.assert_array_equal(eval_field(V("(0, 1)"), [3.5, -2]), [0, 1])
        np.testing.assert_array_equal(eval_field(V("(x1^3, x2^3)"), [2, -1]), [8, -1])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            eval_field(V("(x1, x2)"), [1.0])

    def test_to_arrays_matches_evaluate(self):
        fs = [V("(x1^2 - x2, 3*x1*x2)"), V("(1, x2^3)")]
        E, C = to_arrays(fs)
        x = np.array([0.7, -1.3])
        mono = np.prod(x[None, :] ** E, axis=1)
        for k, f in enumerate(fs):
            np.testing.assert_allclose(C[k] @ mono, f.evaluate(x), rtol=1e-14)


class TestText:
    def test_canonical_order(self):
        assert str(P("-1/3*x2^3 + 2*x1^2*x2")) == "2*x1^2*x2 - 1/3*x2^3"
        assert str(Polynomial.zero(2)) == "0"

    def test_field_round_trip(self):
        f = V("(x1^2*x2 - 1/2, v)".replace(", v", ", 3*x2"))
        assert parse_field(str(f)) == f

    def test_curl_shorthand(self):
        assert V("v:x1^2*x2^2") == curl2(P("x1^2*x2^2"))

    def test_parse_error_position(self):
        with pytest.raises(ParseError) as info:
            parse_polynomial("x1 + * x2", 2)
        assert info.value.position == 5

    def test_unknown_variable(self):
        with pytest.raises(ParseError):
            parse_polynomial("x3", 2)

    @given(polynomials(2, 4))
    def test_round_trip_property(self, p):
        assert parse_polynomial(str(p), 2) == p


# -- algebraic properties ------------------------------------------------------------

@given(fields(2, 3), fields(2, 3))
def test_antisymmetry(f, g):
    assert lie_bracket(f, g) == -lie_bracket(g, f)


@given(st.integers(1, 3).flatmap(lambda d: st.tuples(fields(d, 3, 3), fields(d, 3, 3), fields(d, 3, 3))))
def test_jacobi_identity(fgh):
    f, g, h = fgh
    total = lie_bracket(f, lie_bracket(g, h)) + lie_bracket(g, lie_bracket(h, f)) + lie_bracket(h, lie_bracket(f, g))
    assert total.is_zero


@given(polynomials(2, 4), polynomials(2, 4))
def test_curl_bracket_identity(f, g):
    # [curl f, curl g] = curl(f_x1 g_x2 - f_x2 g_x1)
    lhs = lie_bracket(curl2(f), curl2(g))
    rhs = curl2(f.partial(0) * g.partial(1) - f.partial(1) * g.partial(0))
    assert lhs == rhs


@given(polynomials(2, 6))
def test_divergence_of_curl_vanishes(f):
    assert divergence(curl2(f)).is_zero


@given(polynomials(2, 8, 8), st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_horner_against_exact(p, x):
    # error measured against the sum of term magnitudes (the cancellation-free scale)
    exact = p.evaluate_exact([Fraction(v) for v in x])
    scale = sum(abs(float(c)) * np.prod(np.abs(np.array(x)) ** np.array(m)) for m, c in p.terms.items())
    assert abs(p.evaluate(x) - float(exact)) <= 1e-12 * max(scale, 1e-300) + 1e-300


@given(polynomials(2, 8, 8).map(lambda p: Polynomial(2, {m: abs(c) for m, c in p.terms.items()})),
       st.lists(st.floats(0.0, 10), min_size=2, max_size=2))
def test_horner_relative_without_cancellation(p, x):
    exact = float(p.evaluate_exact([Fraction(v) for v in x]))
    if exact == 0:
        assert p.evaluate(x) == 0
    else:
        assert abs(p.evaluate(x) - exact) <= 1e-12 * abs(exact)
