"""Overparameterized shallow-network lab.

Linear-algebra kernels, a one-hidden-layer network model, covariance
spectra estimators, theorem-prescribed training drivers, bound reports,
and a phase-transition sweep CLI.
"""

from .linalg import (
    ConvergenceError,
    DimensionMismatchError,
    hadamard,
    khatri_rao_power,
    khatri_rao_rows,
    min_eig_sym,
    min_singular,
    spectral_norm,
)
from .network import (
    Activation,
    Dataset,
    ShallowNet,
    activation,
    forward,
    gradient,
    gram,
    init_theorem,
    jacobian,
    jtv,
    loss,
    residual,
)
from .data import gen_dataset, load_dataset, save_dataset
from .training import (
    DivergenceError,
    SingularGramError,
    StepRule,
    TrainConfig,
    TrainTrace,
    fit_output_layer,
    gd_train,
    sgd_train,
    theorem_step_size,
)
from .sweep import SweepConfig, SweepResult, emit_grid, run_sweep

__version__ = "0.1.0"
