"""## Reverse-mode automatic differentiation

float64 tensors recorded on a graph, differentiable Cholesky/triangular solves, Adam, and a
finite-difference gradient oracle. Everything the ELBO needs to be optimized end to end through
the filter recursion.
"""

from .tensor import (
    ContractViolation,
    Gradients,
    Tensor,
    add,
    arcsinh,
    as_tensor,
    backward,
    broadcast_to,
    clamp_min,
    concat,
    div,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sinh,
    softplus,
    sqrt,
    square,
    stack,
    sub,
    sum,
    transpose,
)
from .linalg import (
    DecompositionException,
    cholesky,
    cholesky_factor,
    diagonal,
    logdet_from_cholesky,
    solve_triangular,
    tril,
)
from .optim import Adam, AdamState, adam_step
from .check import OracleFailureException, finite_difference_check, parameter_gradient_check
