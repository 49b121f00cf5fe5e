"""## Exact Kalman filter

Closed-form filtering for linear-Gaussian systems `x_t = A x_{t−1} + N(0, Q)`, `y_t = C x_t + N(0, R)`.
Serves as the oracle the ensemble filter converges to, and as the filter for known linear dynamics.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg
from dataclasses import dataclass

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class KalmanResult:
    means: np.ndarray
    """Filtered means, `(T, d_x)`."""
    covs: np.ndarray
    """Filtered covariances, `(T, d_x, d_x)`."""
    pred_covs: np.ndarray
    """One-step predicted covariances, `(T, d_x, d_x)`."""
    loglik: float
    """Log-evidence `log p(y_{1:T})`."""


def _matrix(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.diag(np.broadcast_to(x, (d,))) if x.ndim < 2 else x


def exact_kalman_filter(A, C, Q, R, m0, P0, y) -> KalmanResult:
    """Kalman filter over `y` (`(T, d_y)`); `Q`, `R` may be given as diagonals."""
    A, C = np.asarray(A, dtype=np.float64), np.asarray(C, dtype=np.float64)
    d_y, d_x = C.shape
    Q, R, P = _matrix(Q, d_x), _matrix(R, d_y), _matrix(P0, d_x)
    m = np.asarray(m0, dtype=np.float64).reshape(d_x)
    y = np.asarray(y, dtype=np.float64).reshape(-1, d_y)

    means, covs, pred_covs = [], [], []
    loglik = 0.0
    for y_t in y:
        m = A @ m
        P = A @ P @ A.T + Q
        pred_covs.append(P)

        S = C @ P @ C.T + R
        factor = scipy.linalg.cho_factor(S, lower=True)
        resid = y_t - C @ m
        loglik += -0.5 * (
            resid @ scipy.linalg.cho_solve(factor, resid)
            + 2.0 * np.sum(np.log(np.diag(factor[0])))
            + d_y * LOG_2PI
        )
        gain = scipy.linalg.cho_solve(factor, C @ P).T
        m = m + gain @ resid
        P = P - gain @ C @ P
        P = 0.5 * (P + P.T)
        means.append(m)
        covs.append(P)

    shape = (0, d_x)
    return KalmanResult(
        means=np.array(means) if means else np.zeros(shape),
        covs=np.array(covs) if covs else np.zeros(shape + (d_x,)),
        pred_covs=np.array(pred_covs) if pred_covs else np.zeros(shape + (d_x,)),
        loglik=float(loglik),
    )
