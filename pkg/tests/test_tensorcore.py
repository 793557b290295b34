import numpy as np
import pytest

from lumaflux import tensorcore as tc
from lumaflux.errors import DimensionError, DomainError, EvaluationError


def naive_matmul(a, b):
    """Triple-loop oracle, no vectorization."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def naive_dft2(field):
    """Direct double-sum 2-D DFT oracle."""
    rows, cols = field.shape
    out = np.zeros((rows, cols // 2 + 1), dtype=complex)
    for u in range(rows):
        for v in range(cols // 2 + 1):
            acc = 0.0 + 0.0j
            for r in range(rows):
                for c in range(cols):
                    acc += field[r, c] * np.exp(-2j * np.pi * (u * r / rows + v * c / cols))
            out[u, v] = acc
    return out


class TestMatmul:
    def test_against_naive_oracle(self):
        rng = np.random.default_rng(0)
        for m, k, n in [(3, 4, 5), (1, 7, 2), (6, 1, 6)]:
            a = rng.normal(size=(m, k))
            b = rng.normal(size=(k, n))
            np.testing.assert_allclose(tc.matmul(a, b), naive_matmul(a, b), atol=1e-12)

    def test_identity(self):
        a = np.random.default_rng(1).normal(size=(4, 4))
        np.testing.assert_array_equal(tc.matmul(a, np.eye(4)), a)

    def test_associativity(self):
        rng = np.random.default_rng(2)
        a, b, c = (rng.normal(size=(4, 4)) for _ in range(3))
        left = tc.matmul(tc.matmul(a, b), c)
        right = tc.matmul(a, tc.matmul(b, c))
        np.testing.assert_allclose(left, right, atol=1e-12)

    def test_deterministic_reruns(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(16, 16))
        b = rng.normal(size=(16, 16))
        first = tc.matmul(a, b)
        assert np.array_equal(first, tc.matmul(a, b))

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            tc.matmul(np.zeros((2, 3)), np.zeros((4, 2)))
        with pytest.raises(DimensionError):
            tc.matmul(np.zeros(3), np.zeros((3, 2)))


class TestSoftmaxRows:
    def test_rows_sum_to_one(self):
        m = np.random.default_rng(0).normal(size=(5, 7)) * 50
        s = tc.softmax_rows(m)
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(s > 0)

    def test_shift_invariance(self):
        m = np.random.default_rng(1).normal(size=(3, 4))
        np.testing.assert_allclose(tc.softmax_rows(m), tc.softmax_rows(m + 123.0), atol=1e-12)

    def test_overflow_safety(self):
        s = tc.softmax_rows(np.array([[1000.0, 1000.0, 0.0]]))
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s[0, 0], 0.5, atol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            tc.softmax_rows(np.array([[1.0, np.nan]]))


class TestLayerNorm:
    def test_moments(self):
        x = np.random.default_rng(0).normal(3.0, 2.0, size=(8, 64))
        y = tc.layer_norm(x)
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-6)

    def test_idempotence(self):
        x = np.random.default_rng(1).normal(size=(4, 32))
        y = tc.layer_norm(x)
        np.testing.assert_allclose(tc.layer_norm(y), y, atol=1e-6)

    def test_too_few_features(self):
        with pytest.raises(DimensionError):
            tc.layer_norm(np.zeros((3, 1)))


class TestRfft2:
    def test_against_naive_dft(self):
        rng = np.random.default_rng(0)
        for shape in [(4, 4), (3, 5), (6, 4)]:
            field = rng.normal(size=shape)
            spec = tc.rfft2(field)
            np.testing.assert_allclose(spec.bins, naive_dft2(field), atol=1e-9)

    def test_dc_bin_is_sum(self):
        field = np.random.default_rng(1).normal(size=(8, 8))
        spec = tc.rfft2(field)
        np.testing.assert_allclose(spec.bins[0, 0], field.sum(), atol=1e-9)

    def test_parseval(self):
        rng = np.random.default_rng(2)
        for shape in [(8, 8), (5, 7), (16, 12)]:
            field = rng.normal(size=shape)
            spec = tc.rfft2(field)
            spatial = np.sum(field**2) * shape[0] * shape[1]
            assert abs(spec.full_plane_power() - spatial) / spatial < 1e-12

    def test_rejects_3d(self):
        with pytest.raises(DimensionError):
            tc.rfft2(np.zeros((2, 2, 2)))


class TestFiniteDiffGrad:
    def test_quadratic_exact(self):
        theta = np.array([1.0, -2.0, 0.5])
        grad = tc.finite_diff_grad(lambda t: float(np.sum(t**2)), theta, 1e-6)
        np.testing.assert_allclose(grad, 2 * theta, atol=1e-8)

    def test_preserves_shape(self):
        theta = np.ones((2, 3))
        grad = tc.finite_diff_grad(lambda t: float(np.sum(t)), theta, 1e-6)
        assert grad.shape == (2, 3)
        np.testing.assert_allclose(grad, 1.0, atol=1e-8)

    def test_nonfinite_names_coordinate(self):
        def f(t):
            return float("nan") if t[1] != 0.0 else 0.0

        with pytest.raises(EvaluationError, match="coordinate 0"):
            tc.finite_diff_grad(f, np.array([0.0, 1.0]), 1e-6)

    def test_bad_step(self):
        with pytest.raises(DomainError):
            tc.finite_diff_grad(lambda t: 0.0, np.zeros(2), 0.0)
