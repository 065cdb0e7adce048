"""Discrete and continuous residual graph convolutions, from first principles.

Core pieces: a reverse-mode autodiff tape over float64 arrays (tensor),
CSR graph operators and the dataset directory format (graph), convolution
layers and the continuous residual field (layers), fixed and adaptive ODE
solvers with two gradient modes (odeint), the model zoo (models), the
training harness (training), nonparametric statistics (stats), and the
experiment CLI (cli).
"""

from .graph import (
    Dataset,
    DatasetError,
    GraphError,
    SparseMatrix,
    add_self_loops,
    build_operator,
    degree_normalize,
    load_dataset,
    save_dataset,
    spmm,
)
from .layers import (
    Binding,
    GroupNormParams,
    LayerParams,
    OdeField,
    Parameter,
    gcn_forward,
    init_group_norm,
    init_params,
    ode_field_eval,
    res_gcn_forward,
)
from .models import (
    VARIANTS,
    Model,
    ModelSpec,
    build_model,
    build_two_layer_slice,
    load_checkpoint,
    save_checkpoint,
)
from .odeint import (
    DivergenceError,
    OdeSolverConfig,
    SolveStats,
    StiffnessError,
    adjoint_backward,
    dopri5_integrate,
    integrate,
    ode_solve_node,
    rk4_integrate,
    solve_with_grad,
)
from .stats import (
    Histogram,
    TestResult,
    chi2_sf,
    histogram,
    kruskal_wallis,
    mann_whitney_u,
    midranks,
    normal_sf,
)
from .tensor import (
    ConfigError,
    ContractError,
    GradMap,
    ShapeError,
    Tape,
    Tensor,
    add,
    add_bias,
    backward,
    concat_time_column,
    dropout,
    group_norm,
    log_softmax,
    matmul,
    mul,
    nll_loss,
    relu,
    scale,
    set_finite_checks,
    slice_cols,
    tsum,
)
from .training import (
    AdamState,
    AggregateStats,
    EarlyStopRule,
    RunRecord,
    TrainConfig,
    adam_step,
    evaluate,
    multi_seed,
    train_run,
)

__version__ = "0.1.0"
