"""Theorem-side quantities: condition numbers, margins, rates, radii.

All functions are pure formula evaluations on top of the linear-algebra
primitives, so every report is exactly reproducible.  The theory's unknown
absolute constants are never guessed: margins are returned as ratios whose
comparison threshold is the caller's choice (1.0 is the nominal regime).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .linalg import khatri_rao_power, min_singular, spectral_norm
from .training import TrainTrace

__all__ = [
    "BoundReport",
    "kappa",
    "kappa_tilde",
    "overparam_margin_smooth",
    "overparam_margin_relu",
    "predicted_rate",
    "initial_misfit_bound",
    "radius_and_path",
    "phi_gram_eig_bound",
]


def kappa(X) -> float:
    """sqrt(d/n) ||X|| / sigma_min^2(X*X)."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    smin_sq = min_singular(khatri_rao_power(X, 2)) ** 2
    if smin_sq <= 0.0:
        raise ValueError(
            f"degenerate Khatri-Rao square: sigma_min^2 = {smin_sq}"
        )
    return math.sqrt(d / n) * spectral_norm(X) / smin_sq


def kappa_tilde(X, lam: float) -> float:
    """sqrt(d/n) ||X|| / lam, with lam a (lower bound on) lambda(X)."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if lam <= 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return math.sqrt(d / n) * spectral_norm(X) / lam


def overparam_margin_smooth(
    k: int, d: int, n: int, B: float, mu: float, delta_conf: float, X
) -> float:
    """Ratio sqrt(kd) / ((B^2/mu^2)(1+delta) kappa(X) n).

    Values above the unknown constant of the theory indicate the nominal
    smooth-activation regime; > 1 is reported as nominal.
    """
    if min(k, d, n) < 1 or B <= 0 or mu <= 0:
        raise ValueError("k, d, n, B, mu must all be positive")
    denom = (B * B / (mu * mu)) * (1.0 + delta_conf) * kappa(X) * n
    return math.sqrt(k * d) / denom


def overparam_margin_relu(k: int, n: int, X, lam: float, delta_conf: float) -> float:
    """Ratio k / ((1+delta)^2 n ||X||^6 / lam^4) for the ReLU width condition."""
    if lam <= 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    x_op = spectral_norm(X)
    return k / ((1.0 + delta_conf) ** 2 * n * x_op ** 6 / lam ** 4)


def predicted_rate(act_kind: str, eta_bar: float, B: float, mu_or_lam: float, X) -> float:
    """Per-iteration residual contraction factor of the chosen theorem.

    ``act_kind`` selects the formula: "smooth" takes mu_phi and B,
    "relu" ignores both (its constant is folded into 1/(48 pi)), and
    "meta_relu" takes lambda(X) directly.  The smooth and relu variants
    consume sigma_min^2(X*X); meta_relu consumes mu_or_lam as lambda.
    """
    if not 0.0 < eta_bar <= 1.0:
        raise ValueError(f"eta_bar must lie in (0, 1], got {eta_bar}")
    x_op_sq = spectral_norm(X) ** 2
    if act_kind == "smooth":
        smin_sq = min_singular(khatri_rao_power(X, 2)) ** 2
        rate = 1.0 - (eta_bar / 32.0) * (mu_or_lam ** 2 / B ** 2) * smin_sq / x_op_sq
    elif act_kind == "relu":
        smin_sq = min_singular(khatri_rao_power(X, 2)) ** 2
        rate = 1.0 - (eta_bar / (48.0 * math.pi)) * smin_sq / x_op_sq
    elif act_kind == "meta_relu":
        rate = 1.0 - (eta_bar / 24.0) * mu_or_lam / x_op_sq
    else:
        raise ValueError(f"unknown rate kind {act_kind!r}")
    if not 0.0 < rate < 1.0:
        raise ValueError(
            f"predicted rate {rate} outside (0, 1): inputs are outside the "
            "theorem regime"
        )
    return rate


def initial_misfit_bound(y_norm: float, B: float, delta_conf: float) -> float:
    """||y|| (1 + (1+delta) B), the high-probability initial misfit cap."""
    if y_norm < 0 or B < 0 or delta_conf < 0:
        raise ValueError("inputs must be nonnegative")
    return y_norm * (1.0 + (1.0 + delta_conf) * B)


def radius_and_path(trace: TrainTrace, data, lam_lower: float):
    """Radius R = 4 r0 / alpha and the total-path bound, with compliance.

    alpha = (1 / (2 sqrt(2))) (||y|| / sqrt(n)) sqrt(lam_lower).  Returns
    ``(R, path_bound, satisfied)`` where ``satisfied`` records whether the
    trace stayed inside radius R and under the path bound.
    """
    if not trace.residual_norms:
        raise ValueError("trace is empty")
    if lam_lower <= 0.0:
        raise ValueError(f"lam_lower must be positive, got {lam_lower}")
    n = data.n
    y_norm = float(np.linalg.norm(data.y))
    r0 = trace.residual_norms[0]
    alpha = (1.0 / (2.0 * math.sqrt(2.0))) * (y_norm / math.sqrt(n)) * math.sqrt(
        lam_lower
    )
    R = 4.0 * r0 / alpha if alpha > 0 else 0.0
    path_bound = (
        math.sqrt(32.0) * (math.sqrt(n) / y_norm) * r0 / math.sqrt(lam_lower)
        if y_norm > 0
        else 0.0
    )
    satisfied = (
        max(trace.frob_dist_to_init) <= R + 1e-12
        and trace.path_length[-1] <= path_bound + 1e-12
    )
    return R, path_bound, satisfied


def phi_gram_eig_bound(k: int, lambda_tilde: float, B: float, n: int) -> float:
    """(k/2) (lambda_tilde - 6B/n^100), with the correction in log space.

    For any n >= 2 with moderate B the correction 6B/n^100 is far below
    float64 resolution; it is reported as exactly 0 whenever it drops under
    machine epsilon, so e.g. lambda_tilde = 0 yields exactly 0.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    log_corr = math.log(6.0 * B) - 100.0 * math.log(n) if B > 0 else -math.inf
    log_eps = math.log(2.220446049250313e-16)
    correction = math.exp(log_corr) if log_corr > log_eps else 0.0
    return 0.5 * k * (lambda_tilde - correction)


@dataclass
class BoundReport:
    """Every computable theorem-side quantity paired with its empirical twin."""

    kappa: float
    kappa_tilde: float
    overparam_ratio_smooth: float
    overparam_ratio_relu: float
    predicted_rate_smooth: float
    predicted_rate_relu: float
    initial_misfit_bound: float
    initial_misfit_empirical: float
    radius_R: float
    path_length_bound: float
    delta_confidence: float
    eta_bar: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)
