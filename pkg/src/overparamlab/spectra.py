"""Covariance spectra of shallow networks over Gaussian weights.

Implements the network covariance Sigma(X) = E[(phi'(Xw) phi'(Xw)^T) . XX^T]
and the output feature covariance E[phi(Xw) phi(Xw)^T], their minimum
eigenvalues via Monte-Carlo estimation, the exact quadratic-activation
closed form, Hermite-coefficient machinery, and the lower bounds that chain
these quantities to Khatri-Rao minimum singular values and to the pairwise
separation of the data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import khatri_rao_power, min_eig_sym, min_singular, spectral_norm
from .network import Activation, activation

__all__ = [
    "hermite_mu",
    "mu",
    "mu_tilde",
    "gamma_phi",
    "nn_covariance_mc",
    "nn_covariance_quadratic",
    "lambda_estimate",
    "quadratic_lower_bound",
    "hermite_lower_bound",
    "output_covariance_mc",
    "lambda_tilde_estimate",
    "output_lower_bound",
    "separation",
    "separation_lambda_bound",
    "SpectralReport",
    "build_report",
]

_UNIT_ROW_TOL = 1e-10
_MIN_SAMPLES = 100
_MC_CHUNK = 4096

DEFAULT_REPORT_SAMPLES = 20_000
ACCEPTANCE_SAMPLES = 200_000


def _check_unit_rows(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    if np.max(np.abs(norms - 1.0)) > _UNIT_ROW_TOL:
        raise ValueError("rows of X must have unit Euclidean norm")
    return X


def _hermite_values(x: np.ndarray, r: int) -> np.ndarray:
    """Normalized probabilists' Hermite polynomial h_r = He_r / sqrt(r!)."""
    if r == 0:
        return np.ones_like(x)
    prev, cur = np.ones_like(x), x.copy()
    for n in range(1, r):
        prev, cur = cur, x * cur - n * prev
    return cur / math.sqrt(math.factorial(r))


def _he_at_zero(n: int) -> float:
    """He_n(0): zero for odd n, (-1)^(n/2) (n-1)!! for even n."""
    if n < 0:
        return 0.0
    if n % 2 == 1:
        return 0.0
    val = 1.0
    for m in range(1, n, 2):
        val *= m
    return val if (n // 2) % 2 == 0 else -val


def _relu_value_mu(r: int) -> float:
    # Closed forms for E[max(0,g) h_r(g)], avoiding quadrature on the kink.
    s2pi = math.sqrt(2.0 * math.pi)
    if r == 0:
        return 1.0 / s2pi
    if r == 1:
        return 0.5
    return (_he_at_zero(r) + r * _he_at_zero(r - 2)) / (
        s2pi * math.sqrt(math.factorial(r))
    )


def _relu_deriv_mu(r: int) -> float:
    # E[1{g>=0} h_r(g)]: the indicator is handled analytically.
    if r == 0:
        return 0.5
    return _he_at_zero(r - 1) / (
        math.sqrt(2.0 * math.pi) * math.sqrt(math.factorial(r))
    )


def _quadrature_mu(f, r: int, order: int) -> float:
    x, w = np.polynomial.hermite_e.hermegauss(order)
    vals = f(x) * _hermite_values(x, r)
    return float(w @ vals) / math.sqrt(2.0 * math.pi)


def hermite_mu(
    act: Activation | str,
    r: int,
    quad_order: int = 120,
    derivative: bool = False,
) -> float:
    """r-th normalized probabilists' Hermite coefficient of the activation.

    With ``derivative=True`` the coefficient is taken of phi' instead of
    phi.  ReLU (a kink in phi, a jump in phi') is evaluated in closed form;
    smooth activations use Gauss-Hermite quadrature, cross-checked at two
    successive orders.
    """
    if isinstance(act, str):
        act = activation(act)
    if r < 0:
        raise ValueError(f"Hermite order must be nonnegative, got {r}")
    if act.kind == "relu":
        return _relu_deriv_mu(r) if derivative else _relu_value_mu(r)
    if quad_order < 40:
        raise ValueError(f"quad_order must be >= 40, got {quad_order}")
    f = act.derivative if derivative else act.value
    est = _quadrature_mu(f, r, quad_order)
    check = _quadrature_mu(f, r, quad_order + 20)
    if abs(est - check) > 1e-8:
        raise RuntimeError(
            f"Gauss-Hermite quadrature not converged at order {quad_order}: "
            f"{est} vs {check}"
        )
    return check


def mu(act: Activation | str, quad_order: int = 120) -> float:
    """E[g phi'(g)]: the first Hermite coefficient of phi'."""
    return hermite_mu(act, 1, quad_order, derivative=True)


def mu_tilde(act: Activation | str, quad_order: int = 120) -> float:
    """E[phi'(g)]: the zeroth Hermite coefficient of phi'."""
    return hermite_mu(act, 0, quad_order, derivative=True)


def gamma_phi(act: Activation | str, quad_order: int = 120) -> float:
    """(1/sqrt(2)) E[phi(g)(g^2 - 1)]: the second Hermite coefficient of phi."""
    return hermite_mu(act, 2, quad_order, derivative=False)


def _mc_moments(X, act, samples, seed, use_derivative):
    """Entrywise mean and max standard error of phi'(Xw)phi'(Xw)^T . XX^T
    (or phi(Xw)phi(Xw)^T without the Hadamard factor)."""
    X = _check_unit_rows(X)
    if samples < _MIN_SAMPLES:
        raise ValueError(f"need at least {_MIN_SAMPLES} samples, got {samples}")
    if isinstance(act, str):
        act = activation(act)
    n, d = X.shape
    G = X @ X.T if use_derivative else None
    f = act.derivative if use_derivative else act.value

    # Fixed-size chunks with per-chunk child seeds: the estimate depends only
    # on (seed, samples), never on how chunks are scheduled.
    nchunks = (samples + _MC_CHUNK - 1) // _MC_CHUNK
    children = np.random.SeedSequence(seed).spawn(nchunks)
    s1 = np.zeros((n, n))
    s2 = np.zeros((n, n))
    remaining = samples
    for child in children:
        m = min(_MC_CHUNK, remaining)
        remaining -= m
        rng = np.random.default_rng(child)
        Wc = rng.standard_normal((m, d))
        D = f(X @ Wc.T)  # (n, m)
        A1 = D @ D.T
        A2 = (D * D) @ (D * D).T
        if use_derivative:
            s1 += A1 * G
            s2 += A2 * (G * G)
        else:
            s1 += A1
            s2 += A2
    mean = s1 / samples
    var = np.maximum(s2 / samples - mean * mean, 0.0) * (
        samples / (samples - 1)
    )
    sem = float(np.max(np.sqrt(var / samples)))
    mean = (mean + mean.T) / 2.0
    return mean, sem


def nn_covariance_mc(X, act, samples: int, seed: int):
    """Monte-Carlo estimate of Sigma(X) over w ~ N(0, I_d).

    Returns ``(sigma, std_err)`` where ``std_err`` is the maximum entrywise
    standard error of the mean.
    """
    return _mc_moments(X, act, samples, seed, use_derivative=True)


def nn_covariance_quadratic(X) -> np.ndarray:
    """Exact Sigma(X) for the quadratic activation: (XX^T) . (XX^T)."""
    X = _check_unit_rows(X)
    G = X @ X.T
    return G * G


def lambda_estimate(X, act, samples: int, seed: int):
    """Minimum eigenvalue of Sigma(X) with a conservative error bar.

    For the quadratic activation the exact closed form sigma_min^2(X*X) is
    used (std_err 0).  Otherwise the Monte-Carlo Sigma is diagonalized and
    the entrywise standard error is inflated by n (Weyl bound).
    """
    if isinstance(act, str):
        act = activation(act)
    if act.kind == "quadratic":
        X = _check_unit_rows(X)
        return min_singular(khatri_rao_power(X, 2)) ** 2, 0.0
    sigma, sem = nn_covariance_mc(X, act, samples, seed)
    return min_eig_sym(sigma), X.shape[0] * sem


def quadratic_lower_bound(X, act) -> float:
    """mu_phi^2 sigma_min^2(X*X), the quadratic-reduction bound on lambda(X)."""
    X = _check_unit_rows(X)
    return mu(act) ** 2 * min_singular(khatri_rao_power(X, 2)) ** 2


def hermite_lower_bound(X, act, r: int) -> float:
    """mu_r(phi')^2 sigma_min^2(X^{*(r+1)}); r=1 is the quadratic bound."""
    X = _check_unit_rows(X)
    coeff = hermite_mu(act, r, derivative=True)
    return coeff ** 2 * min_singular(khatri_rao_power(X, r + 1)) ** 2


def output_covariance_mc(X, act, samples: int, seed: int):
    """Monte-Carlo estimate of E[phi(Xw) phi(Xw)^T] with max entrywise SEM."""
    return _mc_moments(X, act, samples, seed, use_derivative=False)


def lambda_tilde_estimate(X, act, samples: int, seed: int):
    """Minimum eigenvalue of the output feature covariance, with error bar."""
    sigma, sem = output_covariance_mc(X, act, samples, seed)
    return min_eig_sym(sigma), X.shape[0] * sem


def output_lower_bound(X, act) -> float:
    """gamma_phi^2 sigma_min^2(X*X), lower-bounding lambda_tilde(X)."""
    X = _check_unit_rows(X)
    return gamma_phi(act) ** 2 * min_singular(khatri_rao_power(X, 2)) ** 2


def separation(X) -> float:
    """min over pairs of min(||x_i - x_j||, ||x_i + x_j||)."""
    X = _check_unit_rows(X)
    n = X.shape[0]
    if n < 2:
        raise ValueError("separation needs at least 2 samples")
    G = X @ X.T
    # ||x_i +- x_j||^2 = 2 -+ 2 x_i.x_j for unit rows
    iu = np.triu_indices(n, k=1)
    dots = np.abs(G[iu])
    return float(np.sqrt(np.maximum(2.0 - 2.0 * np.max(dots), 0.0)))


def separation_lambda_bound(delta: float, n: int) -> float:
    """delta / (100 n^2), the separation-based lower bound on lambda(X)."""
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return delta / (100.0 * n * n)


@dataclass
class SpectralReport:
    """All spectral quantities of a dataset in one record."""

    op_norm_X: float
    sigma_min_kr2: float
    lambda_mc: float
    lambda_mc_std_err: float
    lambda_quadratic_bound: float
    lambda_hermite_bounds: list = field(default_factory=list)
    lambda_tilde_mc: float = 0.0
    lambda_tilde_mc_std_err: float = 0.0
    delta_separation: float = 0.0
    separation_bound: float = 0.0
    samples_used: int = 0
    seed: int = 0

    def to_json(self) -> str:
        obj = {
            "op_norm_X": self.op_norm_X,
            "sigma_min_kr2": self.sigma_min_kr2,
            "lambda_mc": self.lambda_mc,
            "lambda_mc_std_err": self.lambda_mc_std_err,
            "lambda_quadratic_bound": self.lambda_quadratic_bound,
            "lambda_hermite_bounds": [list(t) for t in self.lambda_hermite_bounds],
            "lambda_tilde_mc": self.lambda_tilde_mc,
            "lambda_tilde_mc_std_err": self.lambda_tilde_mc_std_err,
            "delta_separation": self.delta_separation,
            "separation_bound": self.separation_bound,
            "samples_used": self.samples_used,
            "seed": self.seed,
        }
        return json.dumps(obj, indent=2)


def build_report(
    X,
    act,
    samples: int = DEFAULT_REPORT_SAMPLES,
    seed: int = 0,
    hermite_orders: tuple = (0, 1),
) -> SpectralReport:
    """Assemble the full spectral report for a dataset."""
    X = _check_unit_rows(X)
    if isinstance(act, str):
        act = activation(act)
    lam, lam_sem = lambda_estimate(X, act, samples, seed)
    lt, lt_sem = lambda_tilde_estimate(X, act, samples, seed)
    delta = separation(X) if X.shape[0] >= 2 else 0.0
    return SpectralReport(
        op_norm_X=spectral_norm(X),
        sigma_min_kr2=min_singular(khatri_rao_power(X, 2)),
        lambda_mc=lam,
        lambda_mc_std_err=lam_sem,
        lambda_quadratic_bound=quadratic_lower_bound(X, act),
        lambda_hermite_bounds=[
            (r, hermite_lower_bound(X, act, r)) for r in hermite_orders
        ],
        lambda_tilde_mc=lt,
        lambda_tilde_mc_std_err=lt_sem,
        delta_separation=delta,
        separation_bound=separation_lambda_bound(delta, X.shape[0]),
        samples_used=samples,
        seed=seed,
    )
