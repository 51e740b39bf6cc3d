"""Tests for the shallow-network model: forward map, Jacobians, init."""

import numpy as np
import pytest

import overparamlab.network as network
from overparamlab.linalg import DimensionMismatchError, khatri_rao_rows, min_eig_sym
from overparamlab.network import (
    Dataset,
    ShallowNet,
    activation,
    forward,
    gradient,
    gram,
    init_theorem,
    jacobian,
    jacobian_spectral_bound,
    jtv,
    loss,
    mth_smallest_abs,
    residual,
    sign_flip_count,
)

RNG = np.random.default_rng(20240818)


def _unit_rows(n, d, rng=RNG):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1)[:, None]


def _random_net(k, d, kind="softplus", rng=RNG):
    return ShallowNet(
        W=rng.standard_normal((k, d)),
        v=rng.standard_normal(k),
        activation=activation(kind),
    )


def _forward_oracle(net, X):
    """Scalar double-loop reference for the forward map."""
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        for ell in range(net.k):
            out[i] += net.v[ell] * net.activation.value(net.W[ell] @ X[i])
    return out


class TestActivation:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            activation("tanh")

    def test_softplus_values(self):
        act = activation("softplus")
        assert act.value(np.array([0.0]))[0] == pytest.approx(np.log(2.0))
        assert act.derivative(np.array([0.0]))[0] == pytest.approx(0.5)
        # stability at extreme arguments
        assert np.isfinite(act.value(np.array([750.0]))[0])
        assert act.value(np.array([-750.0]))[0] == pytest.approx(0.0)
        assert act.derivative(np.array([750.0]))[0] == pytest.approx(1.0)

    def test_relu_subgradient_at_zero(self):
        act = activation("relu")
        assert act.derivative(np.array([0.0]))[0] == 1.0

    def test_bounds(self):
        assert activation("softplus").derivative_bound == 1.0
        assert activation("softplus").second_derivative_bound == 1.0
        assert activation("relu").derivative_bound == 1.0
        assert not np.isfinite(activation("quadratic").derivative_bound)


class TestDataset:
    def test_rejects_non_unit_rows(self):
        with pytest.raises(ValueError):
            Dataset(X=np.ones((2, 2)), y=np.zeros(2))

    def test_rejects_label_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            Dataset(X=np.eye(3), y=np.zeros(2))

    def test_rejects_nonfinite_labels(self):
        with pytest.raises(ValueError):
            Dataset(X=np.eye(2), y=np.array([1.0, np.inf]))


class TestForward:
    def test_identity_linear_model(self):
        X = _unit_rows(5, 3)
        w = RNG.standard_normal(3)
        net = ShallowNet(W=w[None, :], v=np.array([1.0]), activation=activation("identity"))
        np.testing.assert_allclose(forward(net, X), X @ w, atol=1e-14)

    def test_relu_cancellation(self):
        X = _unit_rows(4, 3)
        w = RNG.standard_normal(3)
        net = ShallowNet(
            W=np.stack([w, w]), v=np.array([1.0, -1.0]), activation=activation("relu")
        )
        np.testing.assert_allclose(forward(net, X), np.zeros(4), atol=1e-15)

    def test_matches_double_loop_oracle(self):
        X = _unit_rows(5, 4)
        net = _random_net(6, 4)
        np.testing.assert_allclose(forward(net, X), _forward_oracle(net, X), atol=1e-12)

    def test_dimension_mismatch(self):
        net = _random_net(3, 4)
        with pytest.raises(DimensionMismatchError):
            forward(net, np.eye(5))


class TestResidualLoss:
    def test_zero_residual(self):
        X = _unit_rows(4, 3)
        net = _random_net(3, 3)
        data = Dataset(X=X, y=forward(net, X))
        np.testing.assert_allclose(residual(net, data), np.zeros(4), atol=1e-15)
        assert loss(net, data) == pytest.approx(0.0, abs=1e-28)

    def test_loss_formula(self):
        # residual (3, 4) -> loss 12.5
        X = np.eye(2)
        net = ShallowNet(
            W=np.zeros((1, 2)), v=np.array([0.0]), activation=activation("identity")
        )
        data = Dataset(X=X, y=np.array([-3.0, -4.0]))
        np.testing.assert_allclose(residual(net, data), [3.0, 4.0])
        assert loss(net, data) == 12.5

    def test_loss_matches_scalar_sum(self):
        X = _unit_rows(6, 3)
        net = _random_net(4, 3)
        data = Dataset(X=X, y=RNG.standard_normal(6))
        r = forward(net, X) - data.y
        assert loss(net, data) == pytest.approx(0.5 * sum(ri * ri for ri in r))


class TestJacobian:
    def test_identity_single_unit(self):
        X = _unit_rows(5, 3)
        net = ShallowNet(
            W=RNG.standard_normal((1, 3)),
            v=np.array([1.0]),
            activation=activation("identity"),
        )
        np.testing.assert_allclose(jacobian(net, X), X, atol=1e-15)

    def test_quadratic_zero_weights(self):
        X = _unit_rows(4, 3)
        net = ShallowNet(
            W=np.zeros((2, 3)), v=np.ones(2), activation=activation("quadratic")
        )
        np.testing.assert_array_equal(jacobian(net, X), np.zeros((4, 6)))

    def test_block_form_matches_khatri_rao_form(self):
        # J^T = (diag(v) phi'(W X^T)) * X^T row-wise, i.e.
        # J = (phi'(X W^T) diag(v)) *_rows X with columns in vect(W) order.
        for _ in range(25):
            n, d, k = RNG.integers(2, 7, size=3)
            X = _unit_rows(int(n), int(d))
            net = _random_net(int(k), int(d))
            J = jacobian(net, X)
            D = net.activation.derivative(X @ net.W.T) * net.v[None, :]
            J_kr = khatri_rao_rows(D, X)
            assert np.max(np.abs(J - J_kr)) <= 1e-12

    def test_memory_cap(self, monkeypatch):
        monkeypatch.setattr(network, "JACOBIAN_MEMORY_CAP", 100)
        X = _unit_rows(4, 3)
        net = _random_net(5, 3)
        with pytest.raises(MemoryError):
            jacobian(net, X)


class TestJtv:
    def test_zero_vector(self):
        X = _unit_rows(4, 3)
        net = _random_net(5, 3)
        np.testing.assert_array_equal(jtv(net, X, np.zeros(4)), np.zeros((5, 3)))

    def test_basis_vector_structure(self):
        X = _unit_rows(4, 3)
        net = _random_net(5, 3)
        e1 = np.zeros(4)
        e1[1] = 1.0
        expected = np.outer(
            net.v * net.activation.derivative(net.W @ X[1]), X[1]
        )
        np.testing.assert_allclose(jtv(net, X, e1), expected, atol=1e-14)

    def test_matches_materialized_jacobian(self):
        for _ in range(10):
            n, d, k = RNG.integers(2, 7, size=3)
            X = _unit_rows(int(n), int(d))
            net = _random_net(int(k), int(d))
            u = RNG.standard_normal(int(n))
            expected = (jacobian(net, X).T @ u).reshape(int(k), int(d))
            assert np.max(np.abs(jtv(net, X, u) - expected)) <= 1e-12

    def test_length_mismatch(self):
        net = _random_net(3, 3)
        with pytest.raises(DimensionMismatchError):
            jtv(net, np.eye(3), np.zeros(4))


class TestGradient:
    def test_zero_residual_gives_zero_gradient(self):
        X = _unit_rows(4, 3)
        net = _random_net(3, 3)
        data = Dataset(X=X, y=forward(net, X))
        np.testing.assert_allclose(gradient(net, data), np.zeros((3, 3)), atol=1e-14)

    def test_finite_differences(self):
        X = _unit_rows(6, 4)
        net = _random_net(3, 4)
        data = Dataset(X=X, y=RNG.standard_normal(6))
        g = gradient(net, data)
        h = 1e-5
        fd = np.zeros_like(g)
        for a in range(net.k):
            for b in range(net.d):
                Wp, Wm = net.W.copy(), net.W.copy()
                Wp[a, b] += h
                Wm[a, b] -= h
                lp = loss(ShallowNet(Wp, net.v, net.activation), data)
                lm = loss(ShallowNet(Wm, net.v, net.activation), data)
                fd[a, b] = (lp - lm) / (2 * h)
        rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
        assert rel <= 1e-6

    def test_quadratic_single_sample_closed_form(self):
        # For phi(z) = z^2/2 and one sample: grad = r_1 * (v . (W x)) x^T.
        X = _unit_rows(1, 3)
        net = _random_net(4, 3, kind="quadratic")
        data = Dataset(X=X, y=np.array([0.3]))
        r1 = forward(net, X)[0] - 0.3
        expected = r1 * np.outer(net.v * (net.W @ X[0]), X[0])
        np.testing.assert_allclose(gradient(net, data), expected, atol=1e-13)

    def test_gradient_identity_many_instances(self):
        # gradient == mat(J^T r) over 100 random instances.
        rng = np.random.default_rng(7)
        for i in range(100):
            n, d, k = rng.integers(2, 6, size=3)
            kind = "softplus" if i % 2 == 0 else "quadratic"
            X = _unit_rows(int(n), int(d), rng)
            net = _random_net(int(k), int(d), kind=kind, rng=rng)
            data = Dataset(X=X, y=rng.standard_normal(int(n)))
            r = residual(net, data)
            expected = (jacobian(net, X).T @ r).reshape(int(k), int(d))
            assert np.max(np.abs(gradient(net, data) - expected)) <= 1e-10


class TestGram:
    def test_identity_single_unit(self):
        X = _unit_rows(5, 3)
        net = ShallowNet(
            W=RNG.standard_normal((1, 3)),
            v=np.array([1.0]),
            activation=activation("identity"),
        )
        np.testing.assert_allclose(gram(net, X), X @ X.T, atol=1e-14)

    def test_psd(self):
        for kind in ("softplus", "relu", "quadratic"):
            X = _unit_rows(5, 3)
            net = _random_net(4, 3, kind=kind)
            G = gram(net, X)
            np.testing.assert_allclose(G, G.T, atol=1e-14)
            assert min_eig_sym(G) >= -1e-10

    def test_matches_explicit_product(self):
        for kind in ("softplus", "relu", "quadratic"):
            X = _unit_rows(6, 4)
            net = _random_net(5, 4, kind=kind)
            J = jacobian(net, X)
            assert np.max(np.abs(gram(net, X) - J @ J.T)) <= 1e-10


class TestInitTheorem:
    def _data(self, n=7, d=4):
        return Dataset(X=_unit_rows(n, d), y=RNG.standard_normal(n))

    def test_output_weights_sum_to_zero_exactly(self):
        data = self._data()
        for k in (2, 5, 8, 11):
            net = init_theorem(k, 4, data, seed=3)
            assert np.sum(net.v) == 0.0

    def test_even_k_norm(self):
        data = self._data()
        net = init_theorem(10, 4, data, seed=3)
        expected = np.linalg.norm(data.y) / np.sqrt(data.n)
        assert np.linalg.norm(net.v) == pytest.approx(expected)

    def test_odd_k_norm(self):
        data = self._data()
        k = 9
        net = init_theorem(k, 4, data, seed=3)
        expected_sq = ((k - 1) / k) * np.linalg.norm(data.y) ** 2 / data.n
        assert np.linalg.norm(net.v) ** 2 == pytest.approx(expected_sq)
        assert np.count_nonzero(net.v) == k - 1

    def test_deterministic(self):
        data = self._data()
        a = init_theorem(6, 4, data, seed=11)
        b = init_theorem(6, 4, data, seed=11)
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.v, b.v)

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            init_theorem(1, 4, self._data(), seed=0)

    def test_d_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            init_theorem(4, 5, self._data(d=4), seed=0)


class TestJacobianSpectralBound:
    def test_formula_plug(self):
        # sqrt(k) B ||v||_inf ||X|| with k=4, B=1, ||v||_inf=0.5, ||X||=2
        X = 2.0 * np.eye(3)
        net = ShallowNet(
            W=RNG.standard_normal((4, 3)),
            v=np.array([0.5, -0.5, 0.25, 0.1]),
            activation=activation("softplus"),
        )
        assert jacobian_spectral_bound(net, X) == pytest.approx(2.0, rel=1e-9)

    def test_bounds_actual_norm(self):
        for _ in range(10):
            X = _unit_rows(5, 4)
            net = _random_net(6, 4)
            J = jacobian(net, X)
            actual = np.linalg.svd(J, compute_uv=False)[0]
            assert actual <= jacobian_spectral_bound(net, X) + 1e-9

    def test_identity_attained(self):
        X = _unit_rows(5, 3)
        net = ShallowNet(
            W=RNG.standard_normal((1, 3)),
            v=np.array([1.0]),
            activation=activation("identity"),
        )
        actual = np.linalg.svd(jacobian(net, X), compute_uv=False)[0]
        assert jacobian_spectral_bound(net, X) == pytest.approx(actual, rel=1e-8)

    def test_infinite_bound_rejected(self):
        net = _random_net(3, 3, kind="quadratic")
        with pytest.raises(ValueError):
            jacobian_spectral_bound(net, _unit_rows(4, 3))


class TestJacobianLipschitz:
    def test_softplus_lipschitz(self):
        # ||J(W~) - J(W)|| <= M ||v||_inf ||X|| ||W~ - W||_F
        for _ in range(10):
            X = _unit_rows(5, 4)
            net = _random_net(6, 4)
            W2 = net.W + 0.5 * RNG.standard_normal(net.W.shape)
            net2 = ShallowNet(W2, net.v, net.activation)
            diff = np.linalg.svd(
                jacobian(net2, X) - jacobian(net, X), compute_uv=False
            )[0]
            M = net.activation.second_derivative_bound
            bound = (
                M
                * np.max(np.abs(net.v))
                * np.linalg.svd(X, compute_uv=False)[0]
                * np.linalg.norm(W2 - net.W)
            )
            assert diff <= bound + 1e-8


class TestSignFlips:
    def test_no_flip(self):
        W = RNG.standard_normal((5, 3))
        X = _unit_rows(4, 3)
        assert sign_flip_count(W, W, X) == 0.0

    def test_single_flip(self):
        X = np.eye(3)
        W = np.ones((4, 3))
        W2 = W.copy()
        W2[2, 0] = -1.0  # flips unit 2 at sample 0 only
        assert sign_flip_count(W2, W, X) == 1.0

    def test_matches_brute_force(self):
        W = RNG.standard_normal((6, 4))
        W2 = W + 0.3 * RNG.standard_normal((6, 4))
        X = _unit_rows(5, 4)
        best = 0
        for i in range(5):
            flips = sum(
                int((W[l] @ X[i] >= 0) != (W2[l] @ X[i] >= 0)) for l in range(6)
            )
            best = max(best, flips)
        assert sign_flip_count(W2, W, X) == pytest.approx(np.sqrt(best))


class TestMthSmallestAbs:
    def test_examples(self):
        z = np.array([-3.0, 1.0, 2.0])
        assert mth_smallest_abs(z, 1) == 1.0
        assert mth_smallest_abs(z, 2) == 2.0
        assert mth_smallest_abs(z, 3) == 3.0

    def test_matches_sort_oracle(self):
        z = RNG.standard_normal(50)
        sorted_abs = sorted(abs(v) for v in z)
        for m in (1, 7, 25, 50):
            assert mth_smallest_abs(z, m) == sorted_abs[m - 1]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            mth_smallest_abs(np.ones(3), 4)
        with pytest.raises(ValueError):
            mth_smallest_abs(np.ones(3), 0)
