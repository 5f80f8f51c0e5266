"""Linear algebra on the transformed-scale Gaussian model.

The joint distribution is carried in regression form: node j satisfies

    X_j = E X_j + sum_i B_ij (X_i - E X_i) + eps_j,   Var eps_j = v_j

with B strictly upper triangular in a parent-before-child order, so the
full covariance follows from a forward recursion over that order.
Evidence is folded in by Gaussian conditioning on the evidence rows, and
correlations are read off the conditioned covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "GaussianState",
    "ConditioningError",
    "propagate_covariance",
    "condition",
    "condition_sequential",
    "correlation",
]

# Above this condition number the evidence block is treated as singular.
_MAX_CONDITION = 1e12


class ConditioningError(RuntimeError):
    """The evidence block of the covariance is singular or nearly so.

    ``condition_estimate`` carries the estimated condition number (may be
    infinite).  This usually indicates a broken model, e.g. two copies of
    a deterministic observation of the same quantity.
    """

    def __init__(self, message: str, condition_estimate: float):
        super().__init__(message)
        self.condition_estimate = condition_estimate


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Mean vector, regression coefficients, and noise variances, in order.

    ``order`` names the nodes; ``coeffs[i, j]`` is the coefficient of node
    i in node j's regression and must vanish on and below the diagonal;
    ``cond_var[j]`` is the noise variance of node j (zero exactly for
    deterministic nodes); ``cov`` is filled by
    :func:`propagate_covariance`.
    """

    order: tuple[str, ...]
    mean: np.ndarray
    coeffs: np.ndarray
    cond_var: np.ndarray
    cov: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = len(self.order)
        if self.mean.shape != (n,):
            raise ValueError(f"mean must have shape ({n},), got {self.mean.shape}")
        if self.coeffs.shape != (n, n):
            raise ValueError(f"coeffs must have shape ({n}, {n}), got {self.coeffs.shape}")
        if self.cond_var.shape != (n,):
            raise ValueError(f"cond_var must have shape ({n},), got {self.cond_var.shape}")
        if np.any(np.tril(self.coeffs) != 0.0):
            raise ValueError("coeffs must be strictly upper triangular in the node order")
        if np.any(self.cond_var < 0.0):
            raise ValueError("conditional variances must be >= 0")
        if self.cov is not None and self.cov.shape != (n, n):
            raise ValueError(f"cov must have shape ({n}, {n}), got {self.cov.shape}")


def propagate_covariance(st: GaussianState) -> GaussianState:
    """Fill the covariance by the forward recursion over the node order.

    With s the indices before j:  Sigma_sj = Sigma_ss B_sj  and
    Sigma_jj = v_j + B_sj' Sigma_ss B_sj, which together equal the closed
    form (I - B)^-T diag(v) (I - B)^-1.
    """
    n = len(st.order)
    cov = np.zeros((n, n))
    for j in range(n):
        if j:
            b = st.coeffs[:j, j]
            cross = cov[:j, :j] @ b
            cov[:j, j] = cross
            cov[j, :j] = cross
            cov[j, j] = st.cond_var[j] + b @ cross
        else:
            cov[j, j] = st.cond_var[j]
    return replace(st, cov=cov)


def _split_indices(n: int, obs: Mapping[int, float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ev = np.array(sorted(obs), dtype=int)
    if len(ev) and (ev[0] < 0 or ev[-1] >= n):
        raise ValueError(f"evidence index out of range: {ev.tolist()}")
    if len(set(obs)) != len(obs):
        raise ValueError("duplicate evidence indices")
    keep = np.array([i for i in range(n) if i not in set(ev.tolist())], dtype=int)
    d = np.array([obs[i] for i in ev.tolist()])
    return ev, keep, d


def condition(
    st: GaussianState, obs: Mapping[int, float]
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of the unobserved nodes given ``obs``.

    ``obs`` maps node positions (in ``st.order``) to observed values.
    The evidence block is solved through a Cholesky factorization behind a
    condition-number guard; rows and columns of observed nodes do not
    appear in the result.
    """
    if st.cov is None:
        raise ValueError("covariance not populated; call propagate_covariance first")
    n = len(st.order)
    ev, keep, d = _split_indices(n, obs)
    if len(ev) == 0:
        return st.mean.copy(), st.cov.copy()

    s_dd = st.cov[np.ix_(ev, ev)]
    s_nd = st.cov[np.ix_(keep, ev)]
    cond_est = float(np.linalg.cond(s_dd))
    if not np.isfinite(cond_est) or cond_est >= _MAX_CONDITION:
        raise ConditioningError(
            f"evidence covariance block is ill-conditioned (estimate {cond_est:.3e})",
            cond_est,
        )
    try:
        factor = cho_factor(s_dd, lower=True)
    except np.linalg.LinAlgError as err:  # pragma: no cover - guarded above
        raise ConditioningError(
            f"evidence covariance block is not positive definite: {err}", cond_est
        ) from err

    gain = cho_solve(factor, s_nd.T).T  # Sigma_ND Sigma_DD^-1
    post_mean = st.mean[keep] + gain @ (d - st.mean[ev])
    post_cov = st.cov[np.ix_(keep, keep)] - gain @ s_nd.T
    post_cov = 0.5 * (post_cov + post_cov.T)
    return post_mean, post_cov


def condition_sequential(
    st: GaussianState, obs: Mapping[int, float]
) -> tuple[np.ndarray, np.ndarray]:
    """Same contract as :func:`condition`, by rank-one updates per observation.

    Useful when the evidence set is large; verified equivalent to the
    joint form.  Each step divides by the current marginal variance of the
    observation being absorbed, with the same singularity guard.
    """
    if st.cov is None:
        raise ValueError("covariance not populated; call propagate_covariance first")
    n = len(st.order)
    ev, keep, d = _split_indices(n, obs)
    mean = st.mean.copy()
    cov = st.cov.copy()
    for k, idx in enumerate(ev.tolist()):
        var_k = cov[idx, idx]
        if var_k <= 0.0 or not np.isfinite(var_k):
            raise ConditioningError(
                f"observation at position {idx} has non-positive marginal variance {var_k}",
                np.inf,
            )
        col = cov[:, idx].copy()
        mean = mean + col * ((d[k] - mean[idx]) / var_k)
        cov = cov - np.outer(col, col) / var_k
        cov = 0.5 * (cov + cov.T)
    return mean[keep], cov[np.ix_(keep, keep)]


def correlation(post_cov: np.ndarray, i: int, j: int) -> float:
    """Correlation read from a covariance matrix, with the zero-variance rule.

    When either diagonal entry is zero (a fully determined quantity) the
    correlation is defined to be 0; otherwise the usual ratio, clamped to
    [-1, 1] against rounding.
    """
    vi = post_cov[i, i]
    vj = post_cov[j, j]
    if vi <= 0.0 or vj <= 0.0:
        return 0.0
    r = post_cov[i, j] / np.sqrt(vi * vj)
    return float(min(1.0, max(-1.0, r)))
