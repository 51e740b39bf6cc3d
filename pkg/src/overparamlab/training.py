"""Gradient-descent and SGD drivers with theorem-prescribed step sizes.

Each run mutates the network's hidden weights in place and produces a
:class:`TrainTrace` recording residual norms, distances to the
initialization (Frobenius and spectral), and the cumulative gradient path
length.  Also houses the output-layer least-squares fit and trajectory
diagnostics (average Jacobian, Jacobian minimum singular value).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import (
    DimensionMismatchError,
    as_matrix,
    khatri_rao_power,
    min_eig_sym,
    min_singular,
    spectral_norm,
)
from .network import (
    Activation,
    Dataset,
    ShallowNet,
    _forward_raw,
    _jtv_raw,
    activation,
    gram,
    jacobian,
    residual,
)
from .spectra import mu

__all__ = [
    "StepRule",
    "TrainConfig",
    "TrainTrace",
    "DivergenceError",
    "SingularGramError",
    "theorem_step_size",
    "gd_train",
    "sgd_train",
    "fit_output_layer",
    "avg_jacobian",
    "jacobian_min_sing_at",
]

_DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """Training loss blew up; carries the partial trace."""

    def __init__(self, message: str, trace: "TrainTrace"):
        super().__init__(message)
        self.trace = trace


class SingularGramError(RuntimeError):
    """Phi Phi^T is numerically singular; carries its minimum eigenvalue."""

    def __init__(self, message: str, min_eig_gram: float):
        super().__init__(message)
        self.min_eig_gram = min_eig_gram


@dataclass(frozen=True)
class StepRule:
    """Step-size rule: one of the theorem prescriptions or a fixed value."""

    kind: str  # theorem_smooth | theorem_relu | theorem_sgd | fixed
    eta_bar: float = 1.0
    nu: float = 3.0
    eta: Optional[float] = None

    def __post_init__(self):
        kinds = ("theorem_smooth", "theorem_relu", "theorem_sgd", "fixed")
        if self.kind not in kinds:
            raise ValueError(f"unknown step rule {self.kind!r}")
        if self.kind != "fixed" and not 0.0 < self.eta_bar <= 1.0:
            raise ValueError(f"eta_bar must lie in (0, 1], got {self.eta_bar}")
        if self.kind == "theorem_sgd" and self.nu < 3.0:
            raise ValueError(f"nu must be >= 3 for the SGD rule, got {self.nu}")
        if self.kind == "fixed" and (self.eta is None or self.eta < 0):
            raise ValueError("fixed rule needs a nonnegative eta")


@dataclass
class TrainConfig:
    max_iters: int
    target_rel_residual: float = 0.0
    step_rule: StepRule = field(default_factory=lambda: StepRule("theorem_smooth"))
    seed: int = 0
    record_spectrum_every: Optional[int] = None
    algorithm: str = "gd"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.algorithm not in ("gd", "sgd"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class TrainTrace:
    """Per-iteration record of a training run.

    ``residual_norms[0]`` is the initial misfit; entry ``t`` corresponds to
    the state after ``t`` recorded updates (for SGD one record covers n
    steps, an epoch-equivalent).
    """

    residual_norms: list = field(default_factory=list)
    frob_dist_to_init: list = field(default_factory=list)
    spec_dist_to_init: list = field(default_factory=list)
    path_length: list = field(default_factory=list)
    step_size_used: float = 0.0
    iterations_run: int = 0
    converged: bool = False
    jacobian_min_sing_samples: Optional[list] = None

    def to_json(self) -> str:
        obj = {
            "residual_norms": self.residual_norms,
            "frob_dist_to_init": self.frob_dist_to_init,
            "spec_dist_to_init": self.spec_dist_to_init,
            "path_length": self.path_length,
            "step_size_used": self.step_size_used,
            "iterations_run": self.iterations_run,
            "converged": self.converged,
            "jacobian_min_sing_samples": self.jacobian_min_sing_samples,
        }
        return json.dumps(obj)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["iter", "residual", "frob_dist", "spec_dist", "path_length"]
            )
            for t in range(len(self.residual_norms)):
                writer.writerow(
                    [
                        t,
                        repr(self.residual_norms[t]),
                        repr(self.frob_dist_to_init[t]),
                        repr(self.spec_dist_to_init[t]),
                        repr(self.path_length[t]),
                    ]
                )


def theorem_step_size(data: Dataset, act: Activation | str, rule: StepRule) -> float:
    """Evaluate the step size a rule prescribes for this dataset."""
    if isinstance(act, str):
        act = activation(act)
    if rule.kind == "fixed":
        return float(rule.eta)
    y_sq = float(data.y @ data.y)
    if y_sq == 0.0:
        raise ValueError("zero label vector: theorem step sizes are undefined")
    x_op = spectral_norm(data.X)
    if x_op == 0.0:
        raise ValueError("degenerate data matrix with zero spectral norm")
    n = data.n
    if rule.kind == "theorem_smooth":
        B = act.derivative_bound
        if not np.isfinite(B):
            raise ValueError(
                f"activation {act.kind!r} has no finite derivative bound"
            )
        return n * rule.eta_bar / (2.0 * B * B * y_sq * x_op * x_op)
    if rule.kind == "theorem_relu":
        return n * rule.eta_bar / (3.0 * y_sq * x_op * x_op)
    # theorem_sgd
    B = act.derivative_bound
    if not np.isfinite(B):
        raise ValueError(
            f"activation {act.kind!r} has no finite derivative bound"
        )
    mu_sq = mu(act) ** 2
    smin_sq = min_singular(khatri_rao_power(data.X, 2)) ** 2
    return (
        (mu_sq / (9.0 * rule.nu * B ** 4))
        * (n / y_sq)
        * (smin_sq / (x_op * x_op))
        * rule.eta_bar
    )


def _record(trace, net, W0, r_norm, path_len):
    trace.residual_norms.append(float(r_norm))
    diff = net.W - W0
    trace.frob_dist_to_init.append(float(np.linalg.norm(diff)))
    # spectral norm via the small d x d Gram; k is typically >> d
    gram_small = diff.T @ diff if diff.shape[0] >= diff.shape[1] else diff @ diff.T
    top = float(np.linalg.eigvalsh(gram_small)[-1])
    trace.spec_dist_to_init.append(float(np.sqrt(max(top, 0.0))))
    trace.path_length.append(float(path_len))


def gd_train(net: ShallowNet, data: Dataset, config: TrainConfig) -> TrainTrace:
    """Full-batch gradient descent W <- W - eta * grad L(W)."""
    if config.algorithm != "gd":
        raise ValueError("config.algorithm must be 'gd'")
    eta = theorem_step_size(data, net.activation, config.step_rule)
    trace = TrainTrace(step_size_used=eta)
    if config.record_spectrum_every:
        trace.jacobian_min_sing_samples = []
    W0 = net.W.copy()
    X, y = data.X, data.y
    act, v = net.activation, net.v
    y_norm = np.linalg.norm(y)
    r = _forward_raw(act, net.W, v, X) - y
    r_norm = np.linalg.norm(r)
    init_loss = 0.5 * r_norm * r_norm
    path_len = 0.0
    _record(trace, net, W0, r_norm, path_len)
    for tau in range(config.max_iters):
        if y_norm > 0 and r_norm / y_norm <= config.target_rel_residual:
            trace.converged = True
            break
        if config.record_spectrum_every and tau % config.record_spectrum_every == 0:
            trace.jacobian_min_sing_samples.append(
                (tau, jacobian_min_sing_at(net, data.X))
            )
        step = eta * _jtv_raw(act, net.W, v, X, r)
        net.W -= step
        path_len += float(np.linalg.norm(step))
        r = _forward_raw(act, net.W, v, X) - y
        r_norm = np.linalg.norm(r)
        trace.iterations_run = tau + 1
        _record(trace, net, W0, r_norm, path_len)
        cur_loss = 0.5 * r_norm * r_norm
        if not np.isfinite(cur_loss) or (
            init_loss > 0 and cur_loss > _DIVERGENCE_FACTOR * init_loss
        ):
            raise DivergenceError(
                f"loss diverged at iteration {tau + 1}", trace
            )
    else:
        if y_norm > 0 and r_norm / y_norm <= config.target_rel_residual:
            trace.converged = True
    return trace


def sgd_train(net: ShallowNet, data: Dataset, config: TrainConfig) -> TrainTrace:
    """Single-sample SGD; the full residual is recorded every n steps."""
    if config.algorithm != "sgd":
        raise ValueError("config.algorithm must be 'sgd'")
    eta = theorem_step_size(data, net.activation, config.step_rule)
    trace = TrainTrace(step_size_used=eta)
    W0 = net.W.copy()
    n = data.n
    y_norm = np.linalg.norm(data.y)
    rng = np.random.default_rng(config.seed)
    r_norm = float(np.linalg.norm(residual(net, data)))
    init_loss = 0.5 * r_norm * r_norm
    path_len = 0.0
    _record(trace, net, W0, r_norm, path_len)
    steps_done = 0
    while steps_done < config.max_iters:
        if y_norm > 0 and r_norm / y_norm <= config.target_rel_residual:
            trace.converged = True
            break
        block = min(n, config.max_iters - steps_done)
        for _ in range(block):
            g = int(rng.integers(n))
            X_g = data.X[g : g + 1]
            # routed through the same kernels as gd_train so the n=1
            # trace is bit-identical to full-batch GD
            r_g = _forward_raw(net.activation, net.W, net.v, X_g) - data.y[g : g + 1]
            step = eta * _jtv_raw(net.activation, net.W, net.v, X_g, r_g)
            net.W -= step
            path_len += float(np.linalg.norm(step))
            steps_done += 1
        r_norm = float(np.linalg.norm(residual(net, data)))
        trace.iterations_run = steps_done
        _record(trace, net, W0, r_norm, path_len)
        cur_loss = 0.5 * r_norm * r_norm
        if not np.isfinite(cur_loss) or (
            init_loss > 0 and cur_loss > _DIVERGENCE_FACTOR * init_loss
        ):
            raise DivergenceError(f"loss diverged at step {steps_done}", trace)
    else:
        if y_norm > 0 and r_norm / y_norm <= config.target_rel_residual:
            trace.converged = True
    return trace


def fit_output_layer(X, W0, act: Activation | str, y):
    """Least-squares fit of the output weights with random hidden weights.

    Returns ``(v_hat, residual_norm, min_eig_gram)`` where v_hat is the
    minimum-norm interpolator Phi^T (Phi Phi^T)^{-1} y, Phi = phi(X W0^T).
    """
    X = as_matrix(X, "X")
    W0 = as_matrix(W0, "W0")
    if isinstance(act, str):
        act = activation(act)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = X.shape[0]
    if y.shape[0] != n:
        raise DimensionMismatchError(f"label count {y.shape[0]} != {n}")
    Phi = act.value(X @ W0.T)  # (n, k)
    G = Phi @ Phi.T
    eigs = np.linalg.eigvalsh((G + G.T) / 2.0)
    min_eig = float(eigs[0])
    if min_eig <= 1e-10 * np.trace(G) / n:
        raise SingularGramError(
            f"Phi Phi^T numerically singular (min eig {min_eig:.3e})", min_eig
        )
    alpha = np.linalg.solve(G, y)
    v_hat = Phi.T @ alpha
    res = float(np.linalg.norm(Phi @ v_hat - y))
    return v_hat, res, min_eig


def avg_jacobian(net_a: ShallowNet, net_b: ShallowNet, X, quad_points: int = 16):
    """Trapezoid-rule average of the Jacobian along the segment W_a -> W_b."""
    if net_a.W.shape != net_b.W.shape:
        raise DimensionMismatchError("endpoint weight shapes differ")
    if quad_points < 2:
        raise ValueError(f"need at least 2 quadrature points, got {quad_points}")
    alphas = np.linspace(0.0, 1.0, quad_points)
    weights = np.full(quad_points, 1.0 / (quad_points - 1))
    weights[0] = weights[-1] = 0.5 / (quad_points - 1)
    probe = net_a.copy()
    total = None
    for a, w in zip(alphas, weights):
        probe.W = net_a.W + a * (net_b.W - net_a.W)
        J = jacobian(probe, X)
        total = w * J if total is None else total + w * J
    return total


def jacobian_min_sing_at(net: ShallowNet, X) -> float:
    """sigma_min of the Jacobian, via the n x n Gram."""
    return float(np.sqrt(max(min_eig_sym(gram(net, X)), 0.0)))
