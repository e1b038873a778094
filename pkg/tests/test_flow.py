import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowlab import _kernels
from flowlab.families import (
    ControlFamily,
    area_preserving_family,
    cubic_quadratic_family,
    family_from_spec,
    origin_fixed_family,
)
from flowlab.flow import (
    ControlSchedule,
    flow_points,
    gronwall_check,
    integrate,
    integrate_with_jacobian,
    monotone_1d_check,
    step_grid,
)


class TestSchedule:
    def test_validation(self):
        with pytest.raises(ValueError):
            ControlSchedule([], np.zeros((0, 3)))
        with pytest.raises(ValueError):
            ControlSchedule([1.0, 1.0], [[0, 0, 0]])
        with pytest.raises(ValueError):
            ControlSchedule([0.0], [[0, 0, 0]])

    def test_dict_round_trip(self, tmp_path):
        s = ControlSchedule([0.5, 0.25], [[1, 2, 3], [4, 5, 6]])
        p = tmp_path / "s.json"
        s.save(p)
        t = ControlSchedule.load(p)
        assert t.durations == s.durations
        np.testing.assert_array_equal(t.params, s.params)
        with pytest.raises(ValueError):
            ControlSchedule.from_dict({"segments": [], "extra": 1})

    def test_uniform_and_concat(self):
        s = ControlSchedule.uniform(np.ones((4, 2)), 2.0)
        assert s.durations == (0.5,) * 4 and s.total_time == 2.0
        assert (s + s).num_segments == 8


class TestStepGrid:
    def test_partial_last_step(self):
        hs, segs = step_grid([0.25, 0.1], 0.1)
        np.testing.assert_allclose(hs, [0.1, 0.1, 0.05, 0.1])
        np.testing.assert_array_equal(segs, [0, 0, 0, 1])

    def test_exact_multiples(self):
        hs, _ = step_grid([0.3], 0.1)
        assert len(hs) == 3

    @given(st.lists(st.floats(0.01, 3.0), min_size=1, max_size=5), st.floats(1e-3, 0.5))
    def test_sums_to_duration(self, durs, h):
        hs, segs = step_grid(durs, h)
        for s, tau in enumerate(durs):
            assert abs(hs[segs == s].sum() - tau) < 1e-9 * max(tau, 1)
        assert np.all(hs <= h * (1 + 1e-12))


class TestFamilies:
    def test_area_preserving_constant_field(self):
        fam = area_preserving_family()
        np.testing.assert_allclose(fam.evaluate([1, 0, 0], [[0.3, 0.7]]), [[-1, 0]])
        np.testing.assert_allclose(fam.evaluate([0, 1, 0], [[0.3, 0.7]]), [[0, 1]])

    def test_resnet_pack_unpack(self):
        fam = ControlFamily.resnet(3, "sigmoid")
        rng = np.random.default_rng(0)
        W, A, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3)), rng.standard_normal(3)
        W2, A2, b2 = fam.unpack(fam.pack(W, A, b))
        np.testing.assert_array_equal(W2, W)
        np.testing.assert_array_equal(A2, A)
        x = rng.standard_normal((1, 3))
        np.testing.assert_allclose(fam.evaluate(fam.pack(W, A, b), x)[0], W @ (1 / (1 + np.exp(-(A @ x[0] + b)))))

    @pytest.mark.parametrize("ws,count", [("full", 10), ("diagonal_W", 8), ("translation_only", 6), ("diagonal_W_and_A", 6)])
    def test_param_counts(self, ws, count):
        assert ControlFamily.resnet(2, "tanh", ws).num_params == count

    def test_spec_round_trip(self):
        for fam in (area_preserving_family(), ControlFamily.resnet(2, "relu", "diagonal_W")):
            again = family_from_spec(fam.describe())
            assert again.describe() == fam.describe()
        assert family_from_spec({"name": "origin_fixed"}).num_params == 6
        with pytest.raises(ValueError):
            family_from_spec({"kind": "resnet", "dimension": 2, "bogus": 1})

    def test_origin_fixed_vanishes_at_origin(self):
        rng = np.random.default_rng(1)
        fam = origin_fixed_family()
        for th in fam.sample_params(rng, 10):
            assert np.all(fam.evaluate(th, [[0.0, 0.0]]) == 0)


class TestIntegrate:
    def test_area_preserving_example(self):
        r = integrate(area_preserving_family(), ControlSchedule.constant([1, 0, 0], 1.0), [0, 0])
        np.testing.assert_allclose(r.endpoint, [-1, 0], atol=1e-12)
        assert not r.blew_up

    def test_blowup_time(self):
        fam = cubic_quadratic_family()
        r = integrate(fam, ControlSchedule.constant([0, 1], 2.0), [1.0], step=1e-3)
        assert r.blew_up and abs(r.blowup_time - 1.0) < 0.05
        assert "blow-up" in r.diagnostic

    def test_rk4_order(self):
        # x' = x^2, x(0) = 1/2 -> x(1) = 1
        fam = cubic_quadratic_family()
        sch = ControlSchedule.constant([0, 1], 1.0)
        e1 = abs(integrate(fam, sch, [0.5], step=0.1).endpoint[0] - 1.0)
        e2 = abs(integrate(fam, sch, [0.5], step=0.05).endpoint[0] - 1.0)
        assert e1 / e2 >= 12

    def test_composition(self):
        fam = ControlFamily.resnet(2, "tanh")
        rng = np.random.default_rng(0)
        a = ControlSchedule.uniform(fam.sample_params(rng, 2), 1.0)
        b = ControlSchedule.uniform(fam.sample_params(rng, 3), 0.6)
        x0 = np.array([0.2, -0.4])
        mid = integrate(fam, a, x0).endpoint
        np.testing.assert_allclose(integrate(fam, a + b, x0).endpoint, integrate(fam, b, mid).endpoint, atol=1e-12)

    def test_inverse_flow(self):
        fam = area_preserving_family()
        sch = ControlSchedule.uniform(np.random.default_rng(4).standard_normal((3, 3)) * 0.5, 1.0)
        x0 = np.array([0.3, 0.1])
        back = integrate(fam, sch.reversed(), integrate(fam, sch, x0, step=1e-3).endpoint, step=1e-3)
        np.testing.assert_allclose(back.endpoint, x0, atol=1e-9)

    def test_trajectory_record(self, tmp_path):
        r = integrate(area_preserving_family(), ControlSchedule.constant([1, 0, 0], 1.0), [0, 0], record_every=10)
        assert r.trajectory[0][0] == 0 and abs(r.trajectory[-1][0] - 1.0) < 1e-12
        r.write_trajectory_csv(tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().startswith("t,x_1,x_2")
        json.dumps(r.to_dict())

    def test_dimension_checked(self):
        with pytest.raises(ValueError):
            flow_points(area_preserving_family(), ControlSchedule.constant([1, 0, 0], 1.0), [[0, 0, 0]])


class TestJacobian:
    @pytest.mark.parametrize("fam", [ControlFamily.resnet(2, "tanh"), ControlFamily.resnet(3, "sigmoid"), origin_fixed_family()])
    def test_against_finite_differences(self, fam):
        rng = np.random.default_rng(7)
        sch = ControlSchedule.uniform(0.5 * fam.sample_params(rng, 3), 1.0)
        x0 = 0.5 * rng.uniform(-1, 1, fam.dimension)
        r = integrate_with_jacobian(fam, sch, x0)
        h = 1e-6
        fd = np.empty((fam.dimension, fam.dimension))
        for j in range(fam.dimension):
            e = np.zeros(fam.dimension)
            e[j] = h
            fd[:, j] = (integrate(fam, sch, x0 + e).endpoint - integrate(fam, sch, x0 - e).endpoint) / (2 * h)
        np.testing.assert_allclose(r.jacobian, fd, rtol=1e-4, atol=1e-8)

    def test_logdet_matches_det(self):
        fam = ControlFamily.resnet(2, "tanh")
        sch = ControlSchedule.uniform(fam.sample_params(np.random.default_rng(2), 4), 1.0)
        r = integrate_with_jacobian(fam, sch, [0.1, 0.2], step=1e-3)
        assert abs(r.logdet - np.log(abs(np.linalg.det(r.jacobian)))) < 1e-6

    def test_area_preserving_logdet_zero(self):
        fam = area_preserving_family()
        sch = ControlSchedule.uniform(np.random.default_rng(3).standard_normal((4, 3)), 1.0)
        r = integrate_with_jacobian(fam, sch, [0.2, -0.1])
        assert abs(r.logdet) < 1e-12
        assert abs(np.linalg.det(r.jacobian) - 1) < 1e-6

    def test_relu_flagged(self):
        r = integrate_with_jacobian(ControlFamily.resnet(2, "relu"), ControlSchedule.constant(np.ones(10) * 0.1, 0.5), [0.1, 0.1])
        assert r.nonsmooth


class TestChecks:
    def test_gronwall_holds(self):
        fam = ControlFamily.resnet(2, "tanh")
        W = np.array([[0.5, -0.5], [0.2, 0.3]])
        A = np.array([[1.0, -0.5], [0.3, 0.2]])
        sch = ControlSchedule.constant(fam.pack(W, A, np.zeros(2)), 2.0)
        L = 2 * np.abs(W).sum(1).max() * np.abs(A).sum(1).max()
        rep = gronwall_check(fam, sch, [0.3, -0.2], 1e-2, c1=2.0, c2=0.0, L=L)
        assert rep.bound_norm_ok and rep.bound_lip_ok and rep.max_lip_ratio <= 1 + 1e-9

    def test_gronwall_detects_violation(self):
        fam = ControlFamily.resnet(1, "identity")
        sch = ControlSchedule.constant(fam.pack(np.array([[1.0]]), np.array([[1.0]]), np.zeros(1)), 1.0)
        rep = gronwall_check(fam, sch, [1.0], 1e-2, c1=0.0, c2=0.0, L=0.5)
        assert not rep.bound_norm_ok and not rep.bound_lip_ok

    def test_monotone(self):
        fam = cubic_quadratic_family()
        sch = ControlSchedule.uniform([[1.0, -1.0], [-0.5, 2.0]], 1.0)
        assert monotone_1d_check(fam, sch, [-0.5, 0.0, 0.4]) is True
        blow = ControlSchedule.constant([0.0, 1.0], 3.0)
        assert monotone_1d_check(fam, blow, [0.5, 1.0]) is None
        with pytest.raises(ValueError):
            monotone_1d_check(fam, sch, [0.5, 0.1])


# -- backend agreement -------------------------------------------------------------

@pytest.mark.skipif(_kernels.BACKEND_NAME != "numba", reason="numba backend not active")
@pytest.mark.parametrize("fam", [ControlFamily.resnet(2, a) for a in ("tanh", "sigmoid", "relu", "identity")]
                         + [area_preserving_family(), origin_fixed_family(), cubic_quadratic_family()],
                         ids=lambda f: f.name or f.activation)
def test_numba_matches_numpy(fam):
    nb, npk = _kernels.get_backend("numba"), _kernels.get_backend("numpy")
    rng = np.random.default_rng(11)
    sch = ControlSchedule.uniform(0.5 * fam.sample_params(rng, 3), 0.9)
    kp = fam.kernel_params(sch.params)
    hs, segs = step_grid(sch.durations, 0.05)
    X0 = rng.uniform(-0.5, 0.5, (4, fam.dimension))
    a = nb.forward(*kp.args(), hs, segs, X0, 1e8, True)
    b = npk.forward(*kp.args(), hs, segs, X0, 1e8, True)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-13)
    va = nb.variational(*kp.args(), hs, segs, X0, 1e8)
    vb = npk.variational(*kp.args(), hs, segs, X0, 1e8)
    for u, v in zip(va[:3], vb[:3]):
        np.testing.assert_allclose(u, v, rtol=1e-11, atol=1e-12)
    Xbar = rng.standard_normal(X0.shape)
    ga = nb.adjoint(*kp.args(), hs, segs, a[1], Xbar)
    gb = npk.adjoint(*kp.args(), hs, segs, b[1], Xbar)
    for u, v in zip(ga, gb):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)
