import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gyronet import gyro
from gyronet.engine import finite_difference_jacobian
from gyronet.errors import ContractError

import oracles
from conftest import CURVATURES, ball

N = 1000


def batch(seed, c, n=N, dim=5, radius=0.9):
    return ball(np.random.default_rng(seed), (n, dim), c, radius)


def riemannian_norm(x, v, c):
    return gyro.conformal_factor(x, c)[..., 0] * np.linalg.norm(v, axis=-1)


# --------------------------------------------------------------------------
# hypothesis strategies


curvature = st.sampled_from(CURVATURES)
seeds = st.integers(0, 2**32 - 1)


@st.composite
def points(draw, count=2, dim=None):
    c = draw(curvature)
    n = dim or draw(st.integers(1, 8))
    rng = np.random.default_rng(draw(seeds))
    return c, [ball(rng, (n,), c, 0.9) for _ in range(count)]


class TestMobiusAdd:
    @pytest.mark.parametrize("c", CURVATURES)
    def test_zero_is_identity(self, c, rng):
        x = ball(rng, (10, 4), c)
        np.testing.assert_array_equal(gyro.mobius_add(x, np.zeros(4), c), x)
        np.testing.assert_allclose(gyro.mobius_add(np.zeros(4), x, c), x, atol=1e-15)

    @pytest.mark.parametrize("c", CURVATURES)
    def test_left_inverse(self, c, rng):
        x = ball(rng, (10, 4), c)
        np.testing.assert_allclose(gyro.mobius_add(-x, x, c), 0.0, atol=1e-12)

    def test_against_extended_precision(self, rng):
        c = 0.1
        for _ in range(20):
            x, y = ball(rng, (6,), c, 0.95), ball(rng, (6,), c, 0.95)
            expected = oracles.to_np(oracles.mobius_add(x, y, c))
            np.testing.assert_allclose(gyro.mobius_add(x, y, c), expected, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("c", CURVATURES)
    def test_left_cancellation_1000(self, c):
        x, y = batch(1, c), batch(2, c)
        back = gyro.mobius_add(-x, gyro.mobius_add(x, y, c), c)
        np.testing.assert_allclose(back, y, atol=1e-10 / math.sqrt(c))

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            gyro.mobius_add(np.zeros(3), np.zeros(4), 1.0)

    def test_bad_curvature(self):
        with pytest.raises(ContractError):
            gyro.mobius_add(np.zeros(3), np.zeros(3), -1.0)

    def test_backward_at_identity_elements(self, rng):
        u = rng.normal(size=3)
        x = ball(rng, (3,), 1.0)
        gx, _ = gyro.mobius_add_backward(u, x, np.zeros(3), 1.0)
        np.testing.assert_allclose(gx, u, atol=1e-15)
        _, gy = gyro.mobius_add_backward(u, np.zeros(3), x, 1.0)
        np.testing.assert_allclose(gy, u, atol=1e-15)

    @given(points())
    def test_stays_inside(self, args):
        c, (x, y) = args
        assert c * np.sum(gyro.project(gyro.mobius_add(x, y, c), c) ** 2) < 1.0


class TestScalarMul:
    @pytest.mark.parametrize("c", CURVATURES)
    def test_one_and_zero(self, c, rng):
        x = ball(rng, (10, 3), c)
        np.testing.assert_allclose(gyro.mobius_scalar_mul(1.0, x, c), x, atol=1e-13)
        np.testing.assert_array_equal(gyro.mobius_scalar_mul(0.0, x, c), 0.0)

    @pytest.mark.parametrize("c", CURVATURES)
    def test_half_distance(self, c, rng):
        x = ball(rng, (20, 3), c)
        origin = np.zeros(3)
        half = gyro.distance(origin, gyro.mobius_scalar_mul(0.5, x, c), c)
        np.testing.assert_allclose(half, 0.5 * gyro.distance(origin, x, c), rtol=1e-12)

    def test_colinear(self, rng):
        x = ball(rng, (3,), 1.0)
        y = gyro.mobius_scalar_mul(-1.7, x, 1.0)
        np.testing.assert_allclose(np.cross(x, y), 0.0, atol=1e-14)

    def test_zero_vector_gradient_limit(self):
        u = np.array([1.0, -2.0])
        gr, gx = gyro.mobius_scalar_mul_backward(u, 0.3, np.zeros(2), 1.0)
        np.testing.assert_allclose(gx, 0.3 * u)


class TestGyration:
    @pytest.mark.parametrize("c", CURVATURES)
    def test_trivial_gyrations(self, c, rng):
        x, z = ball(rng, (5, 4), c), rng.normal(size=(5, 4))
        np.testing.assert_allclose(gyro.gyration(x, np.zeros(4), z, c), z, atol=1e-14)
        np.testing.assert_allclose(gyro.gyration(np.zeros(4), x, z, c), z, atol=1e-14)

    @pytest.mark.parametrize("c", CURVATURES)
    def test_matches_definition(self, c, rng):
        x, y, z = (ball(rng, (50, 4), c) for _ in range(3))
        xy = gyro.mobius_add(x, y, c)
        definition = gyro.mobius_add(-xy, gyro.mobius_add(x, gyro.mobius_add(y, z, c), c), c)
        np.testing.assert_allclose(gyro.gyration(x, y, z, c), definition, atol=1e-10 / math.sqrt(c))

    @pytest.mark.parametrize("c", CURVATURES)
    def test_norm_preserving_and_origin_fixing_1000(self, c):
        x, y, z = batch(3, c), batch(4, c), batch(5, c)
        g = gyro.gyration(x, y, z, c)
        np.testing.assert_allclose(np.linalg.norm(g, axis=-1), np.linalg.norm(z, axis=-1),
                                   rtol=1e-10)
        np.testing.assert_array_equal(gyro.gyration(x, y, np.zeros_like(z), c), 0.0)

    @pytest.mark.parametrize("c", CURVATURES)
    def test_inverse_law_1000(self, c):
        x, y, z = batch(6, c), batch(7, c), batch(8, c)
        back = gyro.gyration(y, x, gyro.gyration(x, y, z, c), c)
        np.testing.assert_allclose(back, z, atol=1e-9 / math.sqrt(c))

    @given(points(count=5))
    def test_distance_invariant(self, args):
        c, (a, b, x, y, _) = args
        d = gyro.distance(x, y, c)
        d_rot = gyro.distance(gyro.gyration(a, b, x, c), gyro.gyration(a, b, y, c), c)
        np.testing.assert_allclose(d_rot, d, rtol=1e-8, atol=1e-10)


class TestDistance:
    @pytest.mark.parametrize("c", CURVATURES)
    def test_self_distance_zero(self, c, rng):
        x = ball(rng, (10, 3), c)
        np.testing.assert_allclose(gyro.distance(x, x, c), 0.0, atol=1e-14 / math.sqrt(c))

    @pytest.mark.parametrize("c", CURVATURES)
    def test_from_origin(self, c, rng):
        x = ball(rng, (10, 3), c)
        expected = 2 / math.sqrt(c) * np.arctanh(math.sqrt(c) * np.linalg.norm(x, axis=-1))
        np.testing.assert_allclose(gyro.distance(np.zeros(3), x, c), expected, rtol=1e-13)

    def test_against_extended_precision(self, rng):
        for c in CURVATURES:
            x, y = ball(rng, (4,), c, 0.95), ball(rng, (4,), c, 0.95)
            np.testing.assert_allclose(gyro.distance(x, y, c), float(oracles.distance(x, y, c)),
                                       rtol=1e-11)

    @given(points(count=3))
    def test_metric_axioms(self, args):
        c, (x, y, z) = args
        dxy, dyx = gyro.distance(x, y, c), gyro.distance(y, x, c)
        assert dxy >= 0
        np.testing.assert_allclose(dxy, dyx, rtol=1e-9, atol=1e-12)
        assert gyro.distance(x, z, c) <= dxy + gyro.distance(y, z, c) + 1e-9

    def test_zero_gradient_at_coincidence(self):
        x = np.array([0.1, 0.2])
        gx, gy = gyro.distance_backward(np.array(1.0), x, x, 1.0)
        np.testing.assert_array_equal(gx, 0.0)
        np.testing.assert_array_equal(gy, 0.0)


class TestConformalFactor:
    def test_origin(self):
        assert gyro.conformal_factor(np.zeros(3), 0.5)[0] == 2.0
        np.testing.assert_array_equal(gyro.conformal_factor_backward(np.ones(1), np.zeros(3), 0.5), 0.0)

    def test_fd(self, rng):
        x = ball(rng, (4,), 1.0)
        J = finite_difference_jacobian(lambda v: gyro.conformal_factor(v, 1.0), x)
        np.testing.assert_allclose(gyro.conformal_factor_backward(np.ones(1), x, 1.0), J[0],
                                   rtol=1e-6)


class TestExpLog:
    def test_origin_limits(self):
        z = np.zeros(3)
        np.testing.assert_array_equal(gyro.exp0(z, 1.0), 0.0)
        np.testing.assert_array_equal(gyro.log0(z, 1.0), 0.0)
        u = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(gyro.exp0_backward(u, z, 1.0), u)
        np.testing.assert_array_equal(gyro.log0_backward(u, z, 1.0), u)

    @pytest.mark.parametrize("c", CURVATURES)
    def test_origin_round_trips_1000(self, c):
        y = batch(9, c)
        np.testing.assert_allclose(gyro.exp0(gyro.log0(y, c), c), y, atol=1e-8 / math.sqrt(c))
        v = np.random.default_rng(10).normal(size=(N, 5)) / math.sqrt(c)
        np.testing.assert_allclose(gyro.log0(gyro.exp0(v, c), c), v, rtol=1e-9, atol=1e-9)

    @pytest.mark.parametrize("c", CURVATURES)
    def test_basepoint_round_trips_1000(self, c):
        x, y = batch(11, c), batch(12, c)
        back = gyro.exp_at(x, gyro.log_at(x, y, c), c)
        np.testing.assert_allclose(back, y, atol=1e-8 / math.sqrt(c))
        v = gyro.log_at(x, y, c)
        np.testing.assert_allclose(gyro.log_at(x, gyro.exp_at(x, v, c), c), v, rtol=1e-6,
                                   atol=1e-8 / math.sqrt(c))

    def test_basepoint_trivia(self, rng):
        c = 0.1
        x, v = ball(rng, (5, 3), c), rng.normal(size=(5, 3))
        np.testing.assert_array_equal(gyro.exp_at(x, np.zeros(3), c), x)
        np.testing.assert_allclose(gyro.log_at(x, x, c), 0.0, atol=1e-14)
        np.testing.assert_allclose(gyro.exp_at(np.zeros(3), v, c), gyro.exp0(v, c), atol=1e-15)

    def test_against_extended_precision(self, rng):
        for c in CURVATURES:
            x, y = ball(rng, (4,), c), ball(rng, (4,), c)
            v = rng.normal(size=4) / math.sqrt(c)
            np.testing.assert_allclose(gyro.exp_at(x, v, c), oracles.to_np(oracles.exp_at(x, v, c)),
                                       rtol=1e-11, atol=1e-14)
            np.testing.assert_allclose(gyro.log_at(x, y, c), oracles.to_np(oracles.log_at(x, y, c)),
                                       rtol=1e-10, atol=1e-13)

    @pytest.mark.parametrize("c", CURVATURES)
    def test_distance_is_riemannian_length_of_log(self, c, rng):
        # fitted ratio over 100 pairs is exactly 1
        x, y = ball(rng, (100, 4), c), ball(rng, (100, 4), c)
        ratio = riemannian_norm(x, gyro.log_at(x, y, c), c) / gyro.distance(x, y, c)
        np.testing.assert_allclose(ratio, 1.0, rtol=1e-10)

    @given(hnp.arrays(np.float64, st.integers(1, 6), elements=st.floats(-3, 3)), curvature)
    def test_exp0_interior(self, v, c):
        y = gyro.project(gyro.exp0(v, c), c)
        assert c * np.sum(y * y) < 1.0


class TestParallelTransport:
    @pytest.mark.parametrize("c", CURVATURES)
    def test_preserves_riemannian_norm_1000(self, c):
        x, y = batch(13, c), batch(14, c)
        v = np.random.default_rng(15).normal(size=(N, 5))
        p = gyro.parallel_transport(x, y, v, c)
        np.testing.assert_allclose(riemannian_norm(y, p, c), riemannian_norm(x, v, c), rtol=1e-9)

    def test_self_transport(self, rng):
        x, v = ball(rng, (5, 3), 1.0), rng.normal(size=(5, 3))
        np.testing.assert_allclose(gyro.parallel_transport(x, x, v, 1.0), v, atol=1e-12)

    def test_origin_round_trip(self, rng):
        c = 0.1
        y, v = ball(rng, (20, 3), c), rng.normal(size=(20, 3))
        z = np.zeros(3)
        back = gyro.parallel_transport(y, z, gyro.parallel_transport(z, y, v, c), c)
        np.testing.assert_allclose(back, v, atol=1e-9)

    @given(points(count=2, dim=3), hnp.arrays(np.float64, 3, elements=st.floats(-5, 5)),
           st.floats(-3, 3))
    def test_linear(self, args, v, a):
        c, (x, y) = args
        np.testing.assert_allclose(gyro.parallel_transport(x, y, a * v, c),
                                   a * gyro.parallel_transport(x, y, v, c), rtol=1e-9, atol=1e-9)


class TestProject:
    @pytest.mark.parametrize("c", CURVATURES)
    def test_interior_unchanged(self, c, rng):
        x = ball(rng, (10, 3), c)
        np.testing.assert_array_equal(gyro.project(x, c), x)
        u = rng.normal(size=(10, 3))
        np.testing.assert_array_equal(gyro.project_backward(u, x, c), u)

    @pytest.mark.parametrize("c", CURVATURES)
    def test_exterior_to_shell(self, c, rng):
        x = rng.normal(size=(10, 3))
        x *= 2.0 / (math.sqrt(c) * np.linalg.norm(x, axis=-1, keepdims=True))
        n = np.linalg.norm(gyro.project(x, c), axis=-1)
        np.testing.assert_allclose(n, (1 - gyro.EPS_BOUNDARY) / math.sqrt(c), rtol=1e-14)

    @pytest.mark.parametrize("c", CURVATURES)
    def test_idempotent_1000(self, c):
        x = np.random.default_rng(16).normal(size=(N, 5)) * 2 / math.sqrt(c)
        once = gyro.project(x, c)
        np.testing.assert_array_equal(gyro.project(once, c), once)


class TestBackwardOracle:
    """Spot checks; the full sweep lives in the verification harness."""

    @pytest.mark.parametrize("c", CURVATURES)
    def test_exp0_backward_norm_range(self, c, rng):
        for _ in range(10):
            v = rng.normal(size=4)
            v *= rng.uniform(0.1, 2.0) / np.linalg.norm(v)
            u = rng.normal(size=4)
            fd = u @ finite_difference_jacobian(lambda t: gyro.exp0(t, c), v)
            np.testing.assert_allclose(gyro.exp0_backward(u, v, c), fd, rtol=1e-6, atol=1e-9)

    def test_batched_backward_matches_rowwise(self, rng):
        c = 0.1
        x, y, u = ball(rng, (6, 3), c), ball(rng, (6, 3), c), rng.normal(size=(6, 3))
        gx, gy = gyro.log_at_backward(u, x, y, c)
        for i in range(6):
            gxi, gyi = gyro.log_at_backward(u[i], x[i], y[i], c)
            np.testing.assert_allclose(gx[i], gxi, rtol=1e-14)
            np.testing.assert_allclose(gy[i], gyi, rtol=1e-14)


class TestBeta:
    def test_known_values(self):
        assert gyro.beta_n(1) == pytest.approx(math.pi, rel=1e-14)
        assert gyro.beta_n(2) == pytest.approx(2.0, rel=1e-14)

    @pytest.mark.parametrize("n", [3, 7, 27, 144, 1000])
    def test_against_mpmath(self, n):
        assert gyro.beta_n(n) == pytest.approx(float(oracles.beta(n)), rel=1e-12)
