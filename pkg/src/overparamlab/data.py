"""Dataset generation and CSV persistence.

CSV layout: no header, one row per sample, d feature columns followed by
one label column, serialized with 17 significant digits so a round trip is
exact at float64.
"""

from __future__ import annotations

import numpy as np

from .network import Dataset

__all__ = ["gen_dataset", "save_dataset", "load_dataset"]


def gen_dataset(n: int, d: int, label_mode: str = "gaussian", seed: int = 0) -> Dataset:
    """Uniform-on-sphere inputs with gaussian or random-sign labels.

    Rows are normalized standard-normal draws (the exact uniform law on the
    sphere).  Deterministic in ``seed``.
    """
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be positive, got n={n}, d={d}")
    if label_mode not in ("gaussian", "signs"):
        raise ValueError(f"unknown label mode {label_mode!r}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    norms = np.linalg.norm(X, axis=1)
    for i in np.flatnonzero(norms == 0.0):
        X[i] = rng.standard_normal(d)  # probability-zero event, one retry
        norms[i] = np.linalg.norm(X[i])
        if norms[i] == 0.0:
            raise RuntimeError(f"zero-norm draw for row {i} twice in a row")
    X /= norms[:, None]
    if label_mode == "gaussian":
        y = rng.standard_normal(n)
    else:
        y = rng.choice([-1.0, 1.0], size=n)
    return Dataset(X=X, y=y)


def save_dataset(data: Dataset, path) -> None:
    with open(path, "w") as fh:
        for i in range(data.n):
            row = [f"{v:.17g}" for v in data.X[i]] + [f"{data.y[i]:.17g}"]
            fh.write(",".join(row) + "\n")


def load_dataset(path) -> Dataset:
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    if raw.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column plus labels")
    return Dataset(X=raw[:, :-1], y=raw[:, -1])
