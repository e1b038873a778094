import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowlab.approx import (
    VOLUME_FLOOR,
    DomainSpec,
    TargetFunction,
    fixed_point_check,
    lp_distance,
    lp_error,
    lp_report,
    volume_floor_check,
)
from flowlab.families import ControlFamily, area_preserving_family, origin_fixed_family
from flowlab.flow import ControlSchedule

IDENTITY = ControlSchedule.constant([0.0, 0.0, 0.0], 0.1)


class TestDomain:
    def test_box_weights(self):
        pts, w = DomainSpec.box([-1, 0], [1, 3], resolution=11).nodes()
        assert pts.shape == (121, 2) and abs(w.sum() - 6.0) < 1e-12

    def test_box_trapezoid_exact_for_bilinear(self):
        pts, w = DomainSpec.box([0, 0], [1, 2], resolution=5).nodes()
        assert abs(np.sum(w * pts[:, 0] * pts[:, 1]) - 1.0) < 1e-12

    def test_disc_second_moment(self):
        pts, w = DomainSpec.disc().nodes()
        assert abs(w.sum() - math.pi) < 1e-12
        assert abs(np.sum(w * np.sum(pts**2, axis=1)) - math.pi / 2) < 1e-4

    def test_disc_points_inside(self):
        pts, _ = DomainSpec.disc(center=(1.0, -1.0), radius=0.5, radial=8, angular=16).nodes()
        assert np.all(np.linalg.norm(pts - [1.0, -1.0], axis=1) < 0.5)

    def test_monte_carlo(self):
        dom = DomainSpec.disc().monte_carlo(20000, seed=1)
        pts, w = dom.nodes()
        assert abs(w.sum() - math.pi) < 1e-9
        assert abs(np.sum(w * np.sum(pts**2, axis=1)) - math.pi / 2) < 0.05
        np.testing.assert_array_equal(pts, dom.nodes()[0])

    def test_round_trip(self):
        for dom in (DomainSpec.box([-1, -1], [1, 1], 21), DomainSpec.disc(radial=4, angular=8).monte_carlo(10, 3)):
            again = DomainSpec.from_dict(dom.to_dict())
            np.testing.assert_array_equal(again.nodes()[0], dom.nodes()[0])
        with pytest.raises(ValueError):
            DomainSpec.from_dict(DomainSpec.disc().to_dict() | {"bogus": 1})

    def test_validation(self):
        with pytest.raises(ValueError):
            DomainSpec.box([1, 0], [0, 1])
        with pytest.raises(ValueError):
            DomainSpec.disc(radius=-1)


class TestTargets:
    def test_kinds(self):
        X = np.array([[1.0, 2.0], [3.0, -4.0]])
        np.testing.assert_array_equal(TargetFunction.coordinate_swap()(X), X[:, ::-1])
        np.testing.assert_array_equal(TargetFunction.constant([1, 1])(X), np.ones((2, 2)))
        np.testing.assert_allclose(TargetFunction.polynomial("(x1^2, x1*x2)")(X), [[1, 2], [9, -12]])

    def test_tabulated_linear_exact(self):
        ax = np.linspace(-1, 1, 5)
        G = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
        t = TargetFunction.tabulated([ax, ax], 2 * G + 1)
        X = np.array([[0.13, -0.77]])
        np.testing.assert_allclose(t(X), 2 * X + 1)

    def test_dict_round_trip(self):
        t = TargetFunction.polynomial("(x2, x1)")
        X = np.random.default_rng(0).standard_normal((3, 2))
        np.testing.assert_array_equal(TargetFunction.from_dict(t.spec)(X), t(X))
        with pytest.raises(ValueError):
            TargetFunction.from_dict({"kind": "nope"})


class TestLp:
    def test_identity_flow_is_exact(self):
        dom = DomainSpec.box([-1, -1], [1, 1], 21)
        assert lp_error(area_preserving_family(), IDENTITY, lambda X: X, dom) < 1e-14

    def test_constant_shift(self):
        # flow by (t1 = -1): x -> x + (1, 0) over unit time, target identity: error 1 everywhere
        sch = ControlSchedule.constant([-1.0, 0.0, 0.0], 1.0)
        dom = DomainSpec.box([-1, -1], [1, 1], 11)
        assert abs(lp_error(area_preserving_family(), sch, lambda X: X, dom, p=1, normalize=True) - 1) < 1e-12
        assert abs(lp_error(area_preserving_family(), sch, lambda X: X, dom, p=2) - 2.0) < 1e-12

    def test_blowup_is_inf(self):
        fam = origin_fixed_family()
        sch = ControlSchedule.constant([0, 5.0, 0, 0, 0, 0], 5.0)
        assert lp_error(fam, sch, lambda X: X, DomainSpec.box([-1, -1], [1, 1], 5)) == math.inf

    def test_report(self):
        rep = lp_report(area_preserving_family(), IDENTITY, TargetFunction.coordinate_swap(),
                        DomainSpec.box([-1, -1], [1, 1], 11))
        assert rep["nodes"] == 121 and rep["error"] > 0

    def test_grid_refinement_converges(self):
        fam = ControlFamily.resnet(2, "tanh")
        sch = ControlSchedule.uniform(fam.sample_params(np.random.default_rng(0), 2), 1.0)
        tgt = TargetFunction.coordinate_swap()
        errs = [lp_error(fam, sch, tgt, DomainSpec.box([-1, -1], [1, 1], n), p=2) for n in (11, 41, 161)]
        assert abs(errs[2] - errs[1]) < abs(errs[1] - errs[0])

    def test_grid_agrees_with_monte_carlo(self):
        sch = ControlSchedule.uniform(np.random.default_rng(1).standard_normal((2, 3)) * 0.5, 1.0)
        dom = DomainSpec.disc()
        g = lp_error(area_preserving_family(), sch, TargetFunction.constant([0, 0]), dom)
        m = lp_error(area_preserving_family(), sch, TargetFunction.constant([0, 0]), dom.monte_carlo(20000, 0))
        assert abs(g - m) < 0.03 * g


@given(st.integers(0, 10_000), st.floats(1, 6))
def test_lp_distance_metric(seed, p):
    rng = np.random.default_rng(seed)
    A, B, C = rng.standard_normal((3, 20, 2))
    w = rng.uniform(0, 1, 20)
    dAB, dBA = lp_distance(A, B, w, p), lp_distance(B, A, w, p)
    assert dAB == pytest.approx(dBA) and lp_distance(A, A, w, p) == 0
    assert dAB <= lp_distance(A, C, w, p) + lp_distance(C, B, w, p) + 1e-12


@given(st.integers(0, 10_000), st.floats(1, 4), st.floats(0, 3))
def test_lp_monotone_in_p_on_probability_measures(seed, p, dp):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, 15, 2))
    w = rng.uniform(0.1, 1, 15)
    w /= w.sum()
    assert lp_distance(A, B, w, p) <= lp_distance(A, B, w, p + dp) * (1 + 1e-12)


def test_lp_distance_rejects_bad_p():
    with pytest.raises(ValueError):
        lp_distance(np.zeros((1, 2)), np.zeros((1, 2)), [1.0], 0.5)


class TestVolumeFloor:
    def test_identity_attains_floor(self):
        rep = volume_floor_check(IDENTITY)
        assert abs(rep.error_sq - VOLUME_FLOOR) < 1e-4 and rep.floor_respected
        assert rep.quadrature_estimate < 1e-3

    @pytest.mark.parametrize("seed", range(3))
    def test_random_schedules(self, seed):
        sch = ControlSchedule.uniform(np.random.default_rng(seed).standard_normal((3, 3)), 1.0)
        rep = volume_floor_check(sch)
        assert rep.applicable and rep.floor_respected and rep.error_sq >= VOLUME_FLOOR - 0.02

    def test_nonconservative_family_can_beat_floor(self):
        # a contracting linear field drives the disc towards 0, below pi/2
        from flowlab.polyvec import parse_field

        fam = ControlFamily.affine([parse_field("(-x1, -x2)")])
        rep = volume_floor_check(ControlSchedule.constant([1.0], 2.0), family=fam)
        assert not rep.floor_respected


class TestFixedPoint:
    @pytest.mark.parametrize("seed", range(5))
    def test_pinned(self, seed):
        sch = ControlSchedule.uniform(np.random.default_rng(seed).standard_normal((4, 6)), 1.0)
        rep = fixed_point_check(sch)
        assert rep.pinned and rep.origin_norm == 0.0

    def test_detects_moving_origin(self):
        rep = fixed_point_check(ControlSchedule.constant([1.0, 0, 0], 1.0), family=area_preserving_family())
        assert not rep.pinned
