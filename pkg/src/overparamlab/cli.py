"""Command-line front end.

Subcommands: gen-data, train, spectra, bounds, fit-output, sweep.
Exit codes: 0 success, 1 usage error, 2 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from . import spectra as spectra_mod
from .data import gen_dataset, load_dataset, save_dataset
from .network import activation, forward, init_theorem
from .sweep import SweepConfig, emit_grid, parse_grid_values, run_sweep
from .training import (
    SingularGramError,
    StepRule,
    TrainConfig,
    fit_output_layer,
    gd_train,
    sgd_train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="base RNG seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument(
        "--workers",
        type=int,
        default=int(os.environ.get("OVERPARAM_LAB_WORKERS", "1")),
        help="worker pool size (default from OVERPARAM_LAB_WORKERS)",
    )
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="overparam-lab")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a unit-sphere dataset CSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--label-mode", choices=("gaussian", "signs"), default="gaussian")
    _add_common(p)

    p = sub.add_parser("train", help="train a shallow network, save the trace")
    p.add_argument("--data", help="dataset CSV; generated when omitted")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--k", type=int, required=True)
    p.add_argument(
        "--activation",
        choices=("softplus", "relu", "quadratic", "identity"),
        default="softplus",
    )
    p.add_argument("--algorithm", choices=("gd", "sgd"), default="gd")
    p.add_argument(
        "--step-rule",
        choices=("theorem_smooth", "theorem_relu", "theorem_sgd", "fixed"),
        default="theorem_smooth",
    )
    p.add_argument("--eta", type=float, help="step size for the fixed rule")
    p.add_argument("--eta-bar", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=3.0)
    p.add_argument("--max-iters", type=int, default=15000)
    p.add_argument("--target", type=float, default=2.5e-3)
    _add_common(p)

    p = sub.add_parser("spectra", help="spectral report for a dataset")
    p.add_argument("--data", help="dataset CSV; generated when omitted")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--d", type=int, default=6)
    p.add_argument(
        "--activation",
        choices=("softplus", "relu", "quadratic", "identity"),
        default="softplus",
    )
    p.add_argument("--samples", type=int, default=spectra_mod.DEFAULT_REPORT_SAMPLES)
    _add_common(p)

    p = sub.add_parser("bounds", help="theorem-side bound report")
    p.add_argument("--data", help="dataset CSV; generated when omitted")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--k", type=int, required=True)
    p.add_argument(
        "--activation", choices=("softplus", "relu"), default="softplus"
    )
    p.add_argument("--eta-bar", type=float, default=1.0)
    p.add_argument("--delta-conf", type=float, default=1.0)
    _add_common(p)

    p = sub.add_parser("fit-output", help="least-squares output-layer fit")
    p.add_argument("--data", help="dataset CSV; generated when omitted")
    p.add_argument("--n", type=int, default=15)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--k", type=int, required=True)
    p.add_argument(
        "--activation",
        choices=("softplus", "relu", "quadratic", "identity"),
        default="relu",
    )
    _add_common(p)

    p = sub.add_parser("sweep", help="phase-transition sweep over (k, d)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", required=True, help="grid: 'a..b' or comma list")
    p.add_argument("--d", required=True, help="grid: 'a..b' or comma list")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument(
        "--activation", choices=("softplus", "relu"), default="softplus"
    )
    p.add_argument(
        "--learning-rate",
        default="theorem",
        help="'theorem' or a fixed numeric step size",
    )
    p.add_argument("--max-iters", type=int, default=15000)
    p.add_argument("--threshold", type=float, default=2.5e-3)
    p.add_argument("--save-traces", action="store_true")
    p.add_argument("--no-heatmap", action="store_true")
    _add_common(p)

    return parser


def _load_or_gen(args, n, d, label_mode="gaussian"):
    if args.data:
        return load_dataset(args.data)
    return gen_dataset(n, d, label_mode, seed=args.seed)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_residual_figure(trace, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "overparamlab"
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(trace.residual_norms)
    ax.set_xlabel("recorded iteration")
    ax.set_ylabel("residual norm")
    ax.set_title("training residual")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def _cmd_gen_data(args) -> int:
    out = _outdir(args)
    data = gen_dataset(args.n, args.d, args.label_mode, seed=args.seed)
    path = out / "dataset.csv"
    save_dataset(data, path)
    print(path)
    return EXIT_OK


def _cmd_train(args) -> int:
    out = _outdir(args)
    data = _load_or_gen(args, args.n, args.d)
    net = init_theorem(args.k, data.d, data, seed=args.seed, act=args.activation)
    rule = StepRule(
        args.step_rule, eta_bar=args.eta_bar, nu=args.nu, eta=args.eta
    )
    config = TrainConfig(
        max_iters=args.max_iters,
        target_rel_residual=args.target,
        step_rule=rule,
        seed=args.seed,
        algorithm=args.algorithm,
    )
    trainer = sgd_train if args.algorithm == "sgd" else gd_train
    trace = trainer(net, data, config)
    trace.write_csv(out / "trace.csv")
    with open(out / "trace.json", "w") as fh:
        fh.write(trace.to_json())
    _save_residual_figure(trace, out / "residual.svg")
    y_norm = float(np.linalg.norm(data.y))
    print(
        json.dumps(
            {
                "converged": trace.converged,
                "iterations": trace.iterations_run,
                "final_rel_residual": trace.residual_norms[-1] / y_norm,
                "step_size": trace.step_size_used,
            }
        )
    )
    return EXIT_OK


def _cmd_spectra(args) -> int:
    out = _outdir(args)
    data = _load_or_gen(args, args.n, args.d)
    report = spectra_mod.build_report(
        data.X, args.activation, samples=args.samples, seed=args.seed
    )
    path = out / "spectra.json"
    with open(path, "w") as fh:
        fh.write(report.to_json())
    print(report.to_json())
    return EXIT_OK


def _cmd_bounds(args) -> int:
    out = _outdir(args)
    data = _load_or_gen(args, args.n, args.d)
    act = activation(args.activation)
    X = data.X
    mu_phi = spectra_mod.mu(act)
    lam_lower = spectra_mod.quadratic_lower_bound(X, act)
    B = 1.0  # softplus and relu both have |phi'| <= 1
    net = init_theorem(args.k, data.d, data, seed=args.seed, act=act)
    misfit_emp = float(np.linalg.norm(forward(net, X) - data.y))
    y_norm = float(np.linalg.norm(data.y))
    rate_smooth = bounds_mod.predicted_rate("smooth", args.eta_bar, B, mu_phi, X)
    rate_relu = bounds_mod.predicted_rate("relu", args.eta_bar, B, mu_phi, X)
    report = bounds_mod.BoundReport(
        kappa=bounds_mod.kappa(X),
        kappa_tilde=bounds_mod.kappa_tilde(X, lam_lower),
        overparam_ratio_smooth=bounds_mod.overparam_margin_smooth(
            args.k, data.d, data.n, B, mu_phi, args.delta_conf, X
        ),
        overparam_ratio_relu=bounds_mod.overparam_margin_relu(
            args.k, data.n, X, lam_lower, args.delta_conf
        ),
        predicted_rate_smooth=rate_smooth,
        predicted_rate_relu=rate_relu,
        initial_misfit_bound=bounds_mod.initial_misfit_bound(
            y_norm, B, args.delta_conf
        ),
        initial_misfit_empirical=misfit_emp,
        radius_R=4.0
        * misfit_emp
        / ((1.0 / (2.0 * np.sqrt(2.0))) * (y_norm / np.sqrt(data.n)) * np.sqrt(lam_lower)),
        path_length_bound=np.sqrt(32.0)
        * (np.sqrt(data.n) / y_norm)
        * misfit_emp
        / np.sqrt(lam_lower),
        delta_confidence=args.delta_conf,
        eta_bar=args.eta_bar,
    )
    path = out / "bounds.json"
    with open(path, "w") as fh:
        fh.write(report.to_json())
    print(report.to_json())
    return EXIT_OK


def _cmd_fit_output(args) -> int:
    out = _outdir(args)
    data = _load_or_gen(args, args.n, args.d)
    rng = np.random.default_rng(args.seed)
    W0 = rng.standard_normal((args.k, data.d))
    v_hat, res, min_eig = fit_output_layer(data.X, W0, args.activation, data.y)
    result = {
        "residual_norm": res,
        "min_eig_gram": min_eig,
        "v_hat_norm": float(np.linalg.norm(v_hat)),
        "k": args.k,
    }
    path = out / "fit_output.json"
    with open(path, "w") as fh:
        json.dump(result, fh, indent=2)
    print(json.dumps(result))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    out = _outdir(args)
    lr = args.learning_rate
    if lr != "theorem":
        lr = float(lr)
    config = SweepConfig(
        n=args.n,
        d_values=parse_grid_values(args.d),
        k_values=parse_grid_values(args.k),
        trials=args.trials,
        activation=args.activation,
        learning_rate=lr,
        max_iters=args.max_iters,
        success_threshold=args.threshold,
        base_seed=args.seed,
        workers=args.workers,
        save_traces=args.save_traces,
    )
    result = run_sweep(config)
    written = emit_grid(result, out, heatmap=not args.no_heatmap)
    print(
        json.dumps(
            {
                "cells": len(result.grid),
                "wall_time": result.wall_time,
                "files": [str(p) for p in written],
            }
        )
    )
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "spectra": _cmd_spectra,
    "bounds": _cmd_bounds,
    "fit-output": _cmd_fit_output,
    "sweep": _cmd_sweep,
}


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (
        FileNotFoundError,
        ValueError,
        RuntimeError,
        MemoryError,
        SingularGramError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"overparam-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
