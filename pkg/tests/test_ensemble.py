import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowlab.ensemble import (
    DegenerateEnsembleError,
    Ensemble,
    curl_potential_fields,
    lie_rank,
    lift_eval,
    lift_fields,
    numerical_rank,
    span_rank,
    vandermonde_certificate,
)
from flowlab.families import ControlFamily, area_preserving_family, origin_fixed_family


class TestEnsemble:
    def test_rejects_duplicates(self):
        with pytest.raises(DegenerateEnsembleError):
            Ensemble(np.array([[0.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(DegenerateEnsembleError):
            Ensemble(np.array([[0.0, 0.0], [1e-12, 0.0]]))

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            Ensemble(np.zeros((0, 2)))
        with pytest.raises(ValueError):
            Ensemble(np.array([[np.nan, 1.0]]))

    def test_csv_round_trip(self, tmp_path):
        e = Ensemble.random(5, 2, seed=3)
        p = tmp_path / "pts.csv"
        e.to_csv(p)
        np.testing.assert_array_equal(Ensemble.from_csv(p).points, e.points)

    def test_csv_header_and_comments(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("x1,x2\n# comment\n0,1\n1,0\n")
        assert Ensemble.from_csv(p).N == 2

    def test_random_seeded(self):
        np.testing.assert_array_equal(Ensemble.random(4, 2, 7).points, Ensemble.random(4, 2, 7).points)


class TestLift:
    def test_area_preserving_example(self):
        np.testing.assert_array_equal(lift_eval(area_preserving_family(), [0, 0, 1], [[1, 1]]), [-2, 2])

    def test_single_param_vector_only(self):
        with pytest.raises(ValueError):
            lift_eval(area_preserving_family(), np.zeros((2, 3)), [[1, 1]])

    def test_lift_fields_is_linear_in_params(self):
        fam = area_preserving_family()
        X = Ensemble.random(4, 2, 1).points
        theta = np.array([0.3, -1.2, 0.7])
        np.testing.assert_allclose(theta @ lift_fields(fam.basis, X), lift_eval(fam, theta, X), atol=1e-14)


def test_numerical_rank_basic():
    M = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]])
    r, s = numerical_rank(M)
    assert r == 2 and s.shape == (3,)
    assert numerical_rank(np.zeros((2, 2)))[0] == 0


class TestRank:
    @pytest.mark.parametrize("N", [2, 3, 4])
    def test_area_preserving_full(self, N):
        rep = lie_rank(area_preserving_family(), Ensemble.random(N, 2, seed=N), degree_cap=2 * N + 2)
        assert rep.achieved_rank == 2 * N and rep.full_rank
        assert rep.method == "lie_exact" and len(rep.witnesses) == 2 * N

    def test_span_only_is_deficient(self):
        # three fields cannot span a 2N-dimensional lifted space for N >= 2
        rep = span_rank(area_preserving_family(), Ensemble.random(3, 2, seed=0))
        assert rep.method == "span_exact" and rep.achieved_rank == 3 and not rep.full_rank

    def test_origin_blocks_full_rank(self):
        X = np.array([[0.0, 0.0], [0.5, -0.3]])
        rep = lie_rank(origin_fixed_family(), X)
        assert rep.achieved_rank == 2 and rep.target_rank == 4

    def test_identity_activation_bound(self):
        # identity resnet fields are affine maps x -> W A x + W b: at most d^2 + d dims
        fam = ControlFamily.resnet(2, "identity")
        rep = span_rank(fam, Ensemble.random(6, 2, seed=0))
        assert rep.achieved_rank == 6 and "lower bound" in rep.notes

    def test_tanh_reaches_full_span(self):
        rep = span_rank(ControlFamily.resnet(2, "tanh"), Ensemble.random(4, 2, seed=0))
        assert rep.achieved_rank == 8

    def test_lie_rank_needs_affine(self):
        with pytest.raises(TypeError):
            lie_rank(ControlFamily.resnet(2), Ensemble.random(2, 2, 0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            span_rank(area_preserving_family(), Ensemble.random(3, 3, 0))

    def test_report_json(self):
        import json

        rep = lie_rank(area_preserving_family(), Ensemble.random(2, 2, seed=0))
        data = json.loads(rep.to_json())
        assert data["achieved_rank"] == 4 and data["method"] == "lie_exact"


@given(st.integers(2, 4), st.integers(0, 10_000), st.data())
def test_rank_permutation_invariant(N, seed, data):
    X = Ensemble.random(N, 2, seed).points
    perm = data.draw(st.permutations(range(N)))
    fam = ControlFamily.resnet(2, "tanh")
    a = span_rank(fam, X, num_samples=64).achieved_rank
    b = span_rank(fam, X[list(perm)], num_samples=64).achieved_rank
    assert a == b


@given(st.integers(1, 5), st.integers(0, 10_000))
def test_sampled_rank_monotone_in_samples(N, seed):
    fam = ControlFamily.resnet(2, "sigmoid")
    X = Ensemble.random(N, 2, seed)
    ranks = [span_rank(fam, X, num_samples=m).achieved_rank for m in (4, 16, 64)]
    assert ranks == sorted(ranks)


@given(st.integers(1, 8), st.integers(0, 10_000))
def test_identity_rank_never_exceeds_affine_bound(N, seed):
    fam = ControlFamily.resnet(2, "identity")
    assert span_rank(fam, Ensemble.random(N, 2, seed), num_samples=64).achieved_rank <= min(6, 2 * N)


class TestCertificate:
    @pytest.mark.parametrize("N", [1, 3, 6])
    def test_invertible(self, N):
        cert = vandermonde_certificate(Ensemble.random(N, 2, seed=N))
        assert cert.invertible and cert.exact_invertible
        assert cert.matrix.shape == (2 * N, 2 * N)

    def test_rows_match_exact_fields(self):
        X = Ensemble.random(3, 2, seed=5)
        cert = vandermonde_certificate(X)
        L = lift_fields(curl_potential_fields(3, cert.a, cert.b), X)  # point-major columns
        perm = [2 * k for k in range(3)] + [2 * k + 1 for k in range(3)]
        np.testing.assert_allclose(L[:, perm], cert.matrix, rtol=1e-12, atol=1e-12)

    def test_candidates_tried_first(self):
        X = Ensemble.random(3, 2, seed=2)
        cert = vandermonde_certificate(X, candidates=[(0.25, -0.75)])
        assert (cert.a, cert.b) == (0.25, -0.75) and cert.attempts == 1

    def test_skips_colliding_directions(self):
        # a = 1 makes u = x1 - x2 collide for these points
        X = np.array([[0.0, 0.0], [1.0, 1.0], [0.3, -0.5]])
        cert = vandermonde_certificate(X, candidates=[(1.0, 2.0), (0.5, 2.0)])
        assert cert.attempts == 2 and cert.exact_invertible

    def test_equal_slopes_singular(self):
        X = Ensemble.random(2, 2, seed=0)
        cert = vandermonde_certificate(X, candidates=[(0.5, 0.5 + 2e-9)])
        # nearly equal slopes: the blocks are almost linearly dependent
        assert cert.min_abs_det_scale < 1e-6

    def test_planar_only(self):
        with pytest.raises(ValueError):
            vandermonde_certificate(Ensemble.random(2, 3, 0))
