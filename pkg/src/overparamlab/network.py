"""One-hidden-layer network model.

The model is x -> v^T phi(W x) with trainable hidden weights W (k x d) and
fixed output weights v (length k).  The Jacobian of the network map with
respect to vect(W) (rows of W concatenated) is available materialized, as a
matrix-free transpose-vector product, and as its n x n Gram.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg import (
    DimensionMismatchError,
    as_matrix,
    hadamard,
    spectral_norm,
)

__all__ = [
    "Activation",
    "activation",
    "Dataset",
    "ShallowNet",
    "forward",
    "residual",
    "loss",
    "jacobian",
    "jtv",
    "gradient",
    "gram",
    "init_theorem",
    "jacobian_spectral_bound",
    "sign_flip_count",
    "mth_smallest_abs",
]

# Materialized n x (k d) Jacobians above this byte budget are refused.
JACOBIAN_MEMORY_CAP = 1 << 30

_UNIT_ROW_TOL = 1e-12


def _softplus(z):
    # log(1 + e^z) computed stably for large |z|
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    # branch-free stable form: exp(-|z|) never overflows
    t = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


@dataclass(frozen=True)
class Activation:
    """Scalar activation with its (generalized) derivative and bounds.

    ``derivative_bound`` bounds |phi'| and ``second_derivative_bound``
    bounds |phi''| where finite; they feed the theorem-side formulas.
    """

    kind: str
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    derivative_bound: float
    second_derivative_bound: float

    @property
    def is_smooth(self) -> bool:
        return self.kind != "relu"


_ACTIVATIONS = {
    "softplus": lambda: Activation(
        kind="softplus",
        value=_softplus,
        derivative=_sigmoid,
        derivative_bound=1.0,
        second_derivative_bound=1.0,
    ),
    # phi'(0) = 1: the indicator convention z >= 0
    "relu": lambda: Activation(
        kind="relu",
        value=lambda z: np.maximum(z, 0.0),
        derivative=lambda z: (z >= 0.0).astype(np.float64),
        derivative_bound=1.0,
        second_derivative_bound=np.inf,
    ),
    "quadratic": lambda: Activation(
        kind="quadratic",
        value=lambda z: 0.5 * z * z,
        derivative=lambda z: np.asarray(z, dtype=np.float64),
        derivative_bound=np.inf,
        second_derivative_bound=1.0,
    ),
    "identity": lambda: Activation(
        kind="identity",
        value=lambda z: np.asarray(z, dtype=np.float64),
        derivative=lambda z: np.ones_like(z, dtype=np.float64),
        derivative_bound=1.0,
        second_derivative_bound=0.0,
    ),
}


def activation(kind: str) -> Activation:
    """Return a built-in activation by name."""
    try:
        return _ACTIVATIONS[kind]()
    except KeyError:
        raise ValueError(
            f"unknown activation {kind!r}; choose from {sorted(_ACTIVATIONS)}"
        ) from None


@dataclass(frozen=True)
class Dataset:
    """Unit-norm input rows X (n x d) and labels y (length n)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = as_matrix(self.X, "X")
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0]:
            raise DimensionMismatchError(
                f"label count {y.shape[0]} != sample count {X.shape[0]}"
            )
        if not np.all(np.isfinite(y)):
            raise ValueError("labels contain non-finite entries")
        norms = np.linalg.norm(X, axis=1)
        if np.max(np.abs(norms - 1.0)) > _UNIT_ROW_TOL:
            raise ValueError("rows of X must have unit Euclidean norm")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass
class ShallowNet:
    """Hidden weights W (k x d), output weights v (k), and the activation."""

    W: np.ndarray
    v: np.ndarray
    activation: Activation

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        self.v = np.asarray(self.v, dtype=np.float64).ravel()
        if self.v.shape[0] != self.W.shape[0]:
            raise DimensionMismatchError(
                f"output weight count {self.v.shape[0]} != hidden units "
                f"{self.W.shape[0]}"
            )

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "ShallowNet":
        return ShallowNet(self.W.copy(), self.v.copy(), self.activation)


def _check_input(net: ShallowNet, X: np.ndarray) -> np.ndarray:
    X = as_matrix(X, "X")
    if X.shape[1] != net.d:
        raise DimensionMismatchError(
            f"input dimension {X.shape[1]} != network dimension {net.d}"
        )
    return X


# validation-free kernels shared by forward/jtv and the training hot loops;
# both paths must run the exact same float ops so SGD at n=1 reproduces GD
# bit for bit


def _forward_raw(act: Activation, W, v, X) -> np.ndarray:
    return act.value(X @ W.T) @ v


def _jtv_raw(act: Activation, W, v, X, u) -> np.ndarray:
    D = act.derivative(W @ X.T)  # (k, n)
    return (v[:, None] * D * u[None, :]) @ X


def forward(net: ShallowNet, X) -> np.ndarray:
    """Network outputs: entry i is v^T phi(W x_i)."""
    X = _check_input(net, X)
    return _forward_raw(net.activation, net.W, net.v, X)


def residual(net: ShallowNet, data: Dataset) -> np.ndarray:
    """Misfit vector f(W) - y."""
    return forward(net, data.X) - data.y


def loss(net: ShallowNet, data: Dataset) -> float:
    """Half squared Euclidean misfit."""
    r = residual(net, data)
    return 0.5 * float(r @ r)


def jacobian(net: ShallowNet, X) -> np.ndarray:
    """Materialized Jacobian of the network map w.r.t. vect(W).

    Shape (n, k*d); column block ell (of width d) is
    v_ell * diag(phi'(X w_ell)) X, matching the row-major vect(W) layout.
    """
    X = _check_input(net, X)
    n, d = X.shape
    k = net.k
    nbytes = n * k * d * 8
    if nbytes > JACOBIAN_MEMORY_CAP:
        raise MemoryError(
            f"materialized Jacobian needs {nbytes} bytes "
            f"(cap {JACOBIAN_MEMORY_CAP}); use jtv/gram instead"
        )
    D = net.activation.derivative(X @ net.W.T)  # (n, k)
    # J[i, ell*d + j] = v_ell * phi'(x_i . w_ell) * X[i, j]
    J = (D * net.v[None, :])[:, :, None] * X[:, None, :]
    return J.reshape(n, k * d)


def jtv(net: ShallowNet, X, u) -> np.ndarray:
    """mat(J^T u) without materializing J; shape (k, d)."""
    X = _check_input(net, X)
    u = np.asarray(u, dtype=np.float64).ravel()
    if u.shape[0] != X.shape[0]:
        raise DimensionMismatchError(
            f"vector length {u.shape[0]} != sample count {X.shape[0]}"
        )
    return _jtv_raw(net.activation, net.W, net.v, X, u)


def gradient(net: ShallowNet, data: Dataset) -> np.ndarray:
    """Loss gradient w.r.t. W; for relu the generalized gradient."""
    return jtv(net, data.X, residual(net, data))


def gram(net: ShallowNet, X) -> np.ndarray:
    """J J^T as (phi'(XW^T) diag(v)^2 phi'(WX^T)) entrywise XX^T."""
    X = _check_input(net, X)
    D = net.activation.derivative(X @ net.W.T)  # (n, k)
    Dv = D * net.v[None, :]
    return hadamard(Dv @ Dv.T, X @ X.T)


def init_theorem(
    k: int, d: int, data: Dataset, seed: int, act: Activation | str = "softplus"
) -> ShallowNet:
    """Theorem-prescribed initialization.

    W has i.i.d. standard normal entries from the seeded generator.  The
    output weights are fixed: magnitude ||y|| / sqrt(k n) with half the
    entries positive and half negative (one zero entry when k is odd,
    first half positive), so they sum to zero exactly.
    """
    if k < 2:
        raise ValueError(f"need at least 2 hidden units, got k={k}")
    if d != data.d:
        raise DimensionMismatchError(
            f"requested d={d} but dataset has d={data.d}"
        )
    if isinstance(act, str):
        act = activation(act)
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((k, d))
    mag = np.linalg.norm(data.y) / np.sqrt(k * data.n)
    half = k // 2
    if k % 2 == 0:
        v = np.concatenate([np.full(half, mag), np.full(half, -mag)])
    else:
        v = np.concatenate([np.full(half, mag), np.full(half, -mag), [0.0]])
    return ShallowNet(W=W, v=v, activation=act)


def jacobian_spectral_bound(net: ShallowNet, X) -> float:
    """Upper bound sqrt(k) * B * ||v||_inf * ||X|| on ||J(W)||."""
    X = _check_input(net, X)
    B = net.activation.derivative_bound
    if not np.isfinite(B):
        raise ValueError(
            f"activation {net.activation.kind!r} has no finite derivative bound"
        )
    return float(
        np.sqrt(net.k) * B * np.max(np.abs(net.v)) * spectral_norm(X)
    )


def sign_flip_count(W, W0, X) -> float:
    """Max over samples of ||phi'(W x_i) - phi'(W0 x_i)||_2 for relu.

    Equals the square root of the largest per-sample count of activation
    pattern flips between W and W0.
    """
    W = as_matrix(W, "W")
    W0 = as_matrix(W0, "W0")
    X = as_matrix(X, "X")
    if W.shape != W0.shape:
        raise DimensionMismatchError(f"shapes differ: {W.shape} vs {W0.shape}")
    if W.shape[1] != X.shape[1]:
        raise DimensionMismatchError(
            f"weight dimension {W.shape[1]} != input dimension {X.shape[1]}"
        )
    relu = activation("relu")
    P = relu.derivative(X @ W.T)
    P0 = relu.derivative(X @ W0.T)
    flips = np.sum((P != P0), axis=1)
    return float(np.sqrt(np.max(flips)))


def mth_smallest_abs(z, m: int) -> float:
    """m-th smallest absolute value of the entries of z (1-based)."""
    z = np.asarray(z, dtype=np.float64).ravel()
    if not 1 <= m <= z.shape[0]:
        raise ValueError(f"m={m} out of range for vector of length {z.shape[0]}")
    return float(np.sort(np.abs(z))[m - 1])
