"""Phase-transition sweeps over (k, d) at fixed n.

Each cell trains a fresh theorem-initialized network on a fresh dataset;
success means the relative residual dropped below the threshold.  Cell
seeds come from a splitmix64 avalanche of (base_seed, k, d, trial), so the
grid is reproducible and independent of worker count and scheduling.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .data import gen_dataset
from .network import _forward_raw, _jtv_raw, init_theorem
from .training import (
    DivergenceError,
    StepRule,
    TrainConfig,
    gd_train,
    theorem_step_size,
)

__all__ = ["SweepConfig", "SweepResult", "mix_seed", "run_sweep", "emit_grid"]

ARTIFACT_VERSION = "0.1.0"

_MASK = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def mix_seed(*parts: int) -> int:
    """Avalanche a tuple of integers into one well-mixed 64-bit seed."""
    acc = 0x9E3779B97F4A7C15
    for p in parts:
        acc = _splitmix64(acc ^ (int(p) & _MASK))
    return acc


@dataclass
class SweepConfig:
    n: int
    d_values: list
    k_values: list
    trials: int = 5
    activation: str = "softplus"
    learning_rate: str | float = "theorem"  # "theorem" or a fixed eta
    max_iters: int = 15000
    success_threshold: float = 2.5e-3
    base_seed: int = 0
    workers: int = 1
    save_traces: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.success_threshold <= 0:
            raise ValueError("success_threshold must be positive")
        if not self.d_values or not self.k_values:
            raise ValueError("k and d grids must be nonempty")

    def step_rule(self) -> StepRule:
        if self.learning_rate == "theorem":
            kind = "theorem_relu" if self.activation == "relu" else "theorem_smooth"
            return StepRule(kind, eta_bar=1.0)
        return StepRule("fixed", eta=float(self.learning_rate))


@dataclass
class SweepResult:
    grid: dict  # (k, d) -> success probability
    per_cell: list  # per-trial outcome dicts
    config_echo: SweepConfig
    wall_time: float = 0.0
    traces: dict = field(default_factory=dict)  # (k, d, trial) -> TrainTrace


def _gd_fast(net, data, eta, max_iters, target_rel):
    """Trace-free GD loop for sweep cells.

    Mathematically the same iteration as ``gd_train`` (forward, residual,
    ``W -= eta * J^T r``, divergence guard) but with the per-iteration trace
    bookkeeping dropped and, for softplus/relu, the activation value and
    derivative fused into one preallocated-buffer pass sharing a single
    ``exp`` — at sweep sizes the loop is allocation- and ufunc-overhead
    bound.  Returns ``(converged, iterations, final_rel, diverged)``.
    """
    X, y = data.X, data.y
    act, v, W = net.activation, net.v, net.W
    y_norm = float(np.linalg.norm(y))
    if act.kind not in ("softplus", "relu"):
        return _gd_fast_generic(net, data, eta, max_iters, target_rel)
    relu = act.kind == "relu"
    k, _ = W.shape
    n = X.shape[0]
    Xt = np.ascontiguousarray(X.T)
    Z = np.empty((k, n))  # pre-activations W @ X^T
    T = np.empty((k, n))  # scratch: exp(-|Z|), then 1 + t, then v D r
    V = np.empty((k, n))  # activation values
    D = np.empty((k, n))  # activation derivatives
    M = np.empty((k, n), dtype=bool)
    G = np.empty_like(W)
    r = np.empty(n)

    def step_residual():
        np.dot(W, Xt, out=Z)
        if relu:
            np.maximum(Z, 0.0, out=V)
            np.greater_equal(Z, 0.0, out=M)
            np.copyto(D, M)
        else:
            np.abs(Z, out=T)
            np.negative(T, out=T)
            np.exp(T, out=T)  # t = exp(-|Z|)
            np.log1p(T, out=V)
            np.maximum(Z, 0.0, out=D)
            np.add(V, D, out=V)  # softplus(Z) = log1p(t) + max(Z, 0)
            np.add(T, 1.0, out=T)
            np.divide(1.0, T, out=D)  # sigmoid for Z >= 0
            np.less(Z, 0.0, out=M)
            np.subtract(1.0, D, out=D, where=M)  # t/(1+t) for Z < 0
        np.dot(v, V, out=r)
        np.subtract(r, y, out=r)
        return float(np.sqrt(np.dot(r, r)))

    r_norm = step_residual()
    init_loss = 0.5 * r_norm * r_norm
    iterations = 0
    target_abs = target_rel * y_norm
    for tau in range(max_iters):
        if y_norm > 0 and r_norm <= target_abs:
            return True, iterations, r_norm / y_norm, False
        np.multiply(D, r, out=T)
        T *= v[:, None]
        np.dot(T, X, out=G)
        G *= eta
        W -= G
        r_norm = step_residual()
        iterations = tau + 1
        cur_loss = 0.5 * r_norm * r_norm
        if not np.isfinite(cur_loss) or (
            init_loss > 0 and cur_loss > 1e6 * init_loss
        ):
            return False, iterations, r_norm / y_norm if y_norm > 0 else float("nan"), True
    converged = y_norm > 0 and r_norm <= target_abs
    final_rel = r_norm / y_norm if y_norm > 0 else float("nan")
    return converged, iterations, final_rel, False


def _gd_fast_generic(net, data, eta, max_iters, target_rel):
    """Trace-free GD on the shared kernels, for any activation."""
    X, y = data.X, data.y
    act, v, W = net.activation, net.v, net.W
    y_norm = float(np.linalg.norm(y))
    r = _forward_raw(act, W, v, X) - y
    r_norm = float(np.linalg.norm(r))
    init_loss = 0.5 * r_norm * r_norm
    iterations = 0
    for tau in range(max_iters):
        if y_norm > 0 and r_norm / y_norm <= target_rel:
            return True, iterations, r_norm / y_norm, False
        W -= eta * _jtv_raw(act, W, v, X, r)
        r = _forward_raw(act, W, v, X) - y
        r_norm = float(np.linalg.norm(r))
        iterations = tau + 1
        cur_loss = 0.5 * r_norm * r_norm
        if not np.isfinite(cur_loss) or (
            init_loss > 0 and cur_loss > 1e6 * init_loss
        ):
            return False, iterations, r_norm / y_norm if y_norm > 0 else float("nan"), True
    converged = y_norm > 0 and r_norm / y_norm <= target_rel
    final_rel = r_norm / y_norm if y_norm > 0 else float("nan")
    return converged, iterations, final_rel, False


def _run_cell(args):
    config, k, d, trial = args
    seed = mix_seed(config.base_seed, k, d, trial)
    outcome = {
        "k": k,
        "d": d,
        "trial": trial,
        "seed": seed,
        "converged": False,
        "iterations": 0,
        "final_rel_residual": float("nan"),
    }
    trace = None
    try:
        data = gen_dataset(config.n, d, "gaussian", seed=seed)
        net = init_theorem(k, d, data, seed=mix_seed(seed, 1), act=config.activation)
        if config.save_traces:
            tc = TrainConfig(
                max_iters=config.max_iters,
                target_rel_residual=config.success_threshold,
                step_rule=config.step_rule(),
                algorithm="gd",
            )
            trace = gd_train(net, data, tc)
            y_norm = float(np.linalg.norm(data.y))
            outcome["converged"] = trace.converged
            outcome["iterations"] = trace.iterations_run
            outcome["final_rel_residual"] = trace.residual_norms[-1] / y_norm
        else:
            eta = theorem_step_size(data, net.activation, config.step_rule())
            converged, iterations, final_rel, diverged = _gd_fast(
                net, data, eta, config.max_iters, config.success_threshold
            )
            outcome["converged"] = converged
            outcome["iterations"] = iterations
            outcome["final_rel_residual"] = final_rel
            if diverged:
                outcome["reason"] = "diverged"
    except DivergenceError as exc:
        trace = exc.trace
        outcome["reason"] = "diverged"
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        outcome["reason"] = f"{type(exc).__name__}: {exc}"
    return k, d, trial, outcome, (trace if config.save_traces else None)


def run_sweep(config: SweepConfig) -> SweepResult:
    """Run every (k, d, trial) cell and aggregate success probabilities."""
    t0 = time.perf_counter()
    tasks = [
        (config, k, d, t)
        for k in config.k_values
        for d in config.d_values
        for t in range(config.trials)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_cell, tasks, chunksize=4))
    else:
        results = [_run_cell(t) for t in tasks]

    per_cell = {}
    traces = {}
    successes = {}
    for k, d, trial, outcome, trace in results:
        per_cell[(k, d, trial)] = outcome
        if trace is not None:
            traces[(k, d, trial)] = trace
        successes.setdefault((k, d), 0)
        if outcome["converged"]:
            successes[(k, d)] += 1
    grid = {cell: count / config.trials for cell, count in successes.items()}
    ordered = [per_cell[key] for key in sorted(per_cell)]
    return SweepResult(
        grid=grid,
        per_cell=ordered,
        config_echo=config,
        wall_time=time.perf_counter() - t0,
        traces=traces,
    )


def _render_heatmap(result: SweepResult, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "overparamlab"

    config = result.config_echo
    ks = sorted(set(config.k_values))
    ds = sorted(set(config.d_values))
    Z = np.full((len(ks), len(ds)), np.nan)
    for (k, d), p in result.grid.items():
        Z[ks.index(k), ds.index(d)] = p
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.pcolormesh(
        ds, ks, Z, cmap="coolwarm", vmin=0.0, vmax=1.0, shading="nearest"
    )
    # kd = n boundary
    d_fine = np.linspace(min(ds), max(ds), 256)
    with np.errstate(divide="ignore"):
        ax.plot(d_fine, config.n / d_fine, color="white", linewidth=2.0)
    ax.set_xlim(min(ds) - 0.5, max(ds) + 0.5)
    ax.set_ylim(min(ks) - 0.5, max(ks) + 0.5)
    ax.set_xlabel("input dimension d")
    ax.set_ylabel("hidden units k")
    ax.set_title(f"fit success probability, n={config.n}, {config.activation}")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def emit_grid(result: SweepResult, out_dir, heatmap: bool = True) -> list:
    """Write grid.csv, manifest.json, optional grid.svg and per-cell traces.

    Returns the list of paths written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    grid_path = out / "grid.csv"
    with open(grid_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "d", "success_prob", "trials"])
        for (k, d) in sorted(result.grid):
            writer.writerow(
                [k, d, f"{result.grid[(k, d)]:.17g}", result.config_echo.trials]
            )
    written.append(grid_path)

    # wall_time and the worker count stay out of the manifest: identical
    # configs must produce bit-identical files regardless of scheduling
    manifest_path = out / "manifest.json"
    config_echo = asdict(result.config_echo)
    del config_echo["workers"]
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "config_echo": config_echo,
        "per_cell": result.per_cell,
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    written.append(manifest_path)

    if heatmap:
        svg_path = out / "grid.svg"
        _render_heatmap(result, svg_path)
        written.append(svg_path)

    if result.traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for (k, d, t), trace in sorted(result.traces.items()):
            tpath = tdir / f"cell_k{k}_d{d}_t{t}.csv"
            trace.write_csv(tpath)
            written.append(tpath)
    return written


def parse_grid_values(spec: str) -> list:
    """Parse 'a..b' inclusive ranges or comma lists into sorted ints."""
    spec = spec.strip()
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty range {spec!r}")
        return list(range(lo, hi + 1))
    vals = sorted({int(tok) for tok in spec.split(",") if tok.strip()})
    if not vals:
        raise ValueError(f"empty grid spec {spec!r}")
    return vals
