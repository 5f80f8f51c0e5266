"""The iterative linear-approximation solver.

Each iteration rebuilds a Gaussian model of the transformed variables
around the previous posterior point, conditions it on the evidence, and
maps the conditioned moments back to the natural scale:

1.  *Linearize* every deterministic node about the previous posterior
    means (chain rule through the transforms), unless the node was
    recognized as exactly linear, in which case its constant
    coefficients are reused.
2.  *Update means* of deterministic nodes to first order, propagate the
    covariance through the triangular recursion, and *condition* on all
    evidence entries.
3.  *Invert the moment maps* to get natural-scale posterior moments per
    parameter, and measure the relative change of the posterior means on
    the transformed scale.

The loop stops when the largest relative change drops below the
tolerance, when it has grown strictly for ``divergence_window``
consecutive comparisons (divergence), or at the iteration cap.  On
divergence the result reports the best iterate seen (smallest change
measure) so the user still gets the most self-consistent answer
available, clearly labelled with the diverged status.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evidence import LikelihoodApprox, pool as pool_likelihoods, to_likelihood
from .gaussian import (
    ConditioningError,
    GaussianState,
    condition,
    correlation,
    propagate_covariance,
)
from .model import (
    BASIC,
    DETERMINISTIC,
    EVIDENCE,
    Diagram,
    EvalError,
    Node,
    ensure_valid,
    eval_expr,
    diff_expr,
    recognize_linear,
    topological_order,
)
from .transforms import (
    BETA,
    LOG_SCALED,
    LOGISTIC_SCALED,
    LOGNORMAL,
    NORMAL,
    SCALED,
    MomentPair,
    derivative,
    forward_moments,
    forward_point,
    inverse_moments,
)

__all__ = [
    "CONVERGED",
    "DIVERGED",
    "MAX_ITERATIONS",
    "SolverConfig",
    "IterationRecord",
    "SolverResult",
    "SolverError",
    "InitializationError",
    "IterationError",
    "SolverState",
    "initialize",
    "linearize",
    "update_means",
    "step",
    "solve",
]

CONVERGED = "converged"
DIVERGED = "diverged"
MAX_ITERATIONS = "max_iterations"

# Transform kind -> family whose moment identities invert that scale.
_KIND_FAMILY = {
    SCALED: NORMAL,
    LOG_SCALED: LOGNORMAL,
    LOGISTIC_SCALED: BETA,
}


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls.

    ``epsilon`` is the convergence tolerance on the maximum relative
    change of transformed posterior means; ``divergence_window`` is the
    number of consecutive strict increases of that measure that declares
    divergence; ``pool_evidence`` combines all observations on one
    parameter into a single precision-weighted entry before solving.
    """

    epsilon: float = 1e-6
    divergence_window: int = 3
    max_iterations: int = 50
    pool_evidence: bool = True

    def __post_init__(self) -> None:
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.divergence_window < 1:
            raise ValueError(
                f"divergence_window must be >= 1, got {self.divergence_window}"
            )
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True, eq=False)
class IterationRecord:
    """Snapshot of one iteration.

    ``prior_mean_x`` spans the full node order (parameters then evidence
    entries); ``posterior_mean_x``, ``posterior_var_x`` and ``r`` span the
    parameter nodes only.  ``r`` is the per-parameter relative change of
    the transformed posterior mean against the previous iteration, and
    ``r_max`` its maximum.
    """

    t: int
    prior_mean_x: np.ndarray
    posterior_mean_x: np.ndarray
    posterior_var_x: np.ndarray
    r: np.ndarray
    r_max: float


@dataclass(frozen=True, eq=False)
class SolverResult:
    """Outcome of a solve.

    ``posterior_y`` maps parameter ids to natural-scale moments from the
    reported iteration — the final one for ``converged`` and
    ``max_iterations``, the best (smallest r_max) for ``diverged``.
    ``posterior_correlations`` is indexed like ``param_ids``.
    """

    status: str
    iterations: list[IterationRecord]
    posterior_y: dict[str, MomentPair]
    posterior_correlations: np.ndarray
    param_ids: tuple[str, ...]
    reported_iteration: int


class SolverError(RuntimeError):
    """Base class for solve failures; carries the offending node id when known."""

    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message)
        self.node_id = node_id


class InitializationError(SolverError):
    """The prior point could not be evaluated or transformed."""


class IterationError(SolverError):
    """An iteration failed; ``records`` holds the iterations completed so far."""

    def __init__(self, message: str, node_id: str | None, records: list[IterationRecord]):
        super().__init__(message, node_id)
        self.records = records


@dataclass(eq=False)
class SolverState:
    """Mutable working state of one solve; created by :func:`initialize`."""

    diagram: Diagram
    config: SolverConfig
    param_ids: tuple[str, ...]
    order: tuple[str, ...]
    ev_parent: np.ndarray  # parameter index observed by each evidence entry
    ev_obs: np.ndarray
    prior_mean: np.ndarray  # E X over the full order, current iteration
    cond_var: np.ndarray  # noise variances over the full order
    post_x: np.ndarray  # previous posterior means of parameters (transformed scale)
    post_y: np.ndarray  # previous posterior means of parameters (natural scale)
    linear_coeffs: dict[str, dict[str, float]]
    t: int = 0
    records: list[IterationRecord] = field(default_factory=list)
    post_moments: list[dict[str, MomentPair]] = field(default_factory=list)
    post_covs: list[np.ndarray] = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return len(self.param_ids)


def _natural_prior_mean(node: Node) -> float:
    p = node.prior
    if p.family == BETA:
        t = p.transform
        return t.a + (t.b - t.a) * p.alpha / (p.alpha + p.beta)
    return p.mean


def initialize(d: Diagram, cfg: SolverConfig | None = None) -> SolverState:
    """Build the starting state: prior moments, prior point, evidence entries.

    Deterministic nodes take the value of their expression at the parent
    prior means, with conditional variance zero; their transformed means
    follow by applying their transform at that point.  Evidence entries
    are resolved to (observation, variance) pairs, pooled per parameter
    when the configuration asks for it.  The iteration-0 "posterior"
    point is defined to be this prior point.
    """
    cfg = cfg or SolverConfig()
    ensure_valid(d)
    topo = topological_order(d)
    param_ids = tuple(i for i in topo if d.nodes[i].kind != EVIDENCE)
    index = {pid: k for k, pid in enumerate(param_ids)}

    n = len(param_ids)
    mean_y = np.zeros(n)
    mean_x = np.zeros(n)
    cond_var = np.zeros(n)
    for k, pid in enumerate(param_ids):
        node = d.nodes[pid]
        if node.kind == BASIC:
            m = forward_moments(node.prior)
            mean_x[k] = m.mean
            cond_var[k] = m.variance
            mean_y[k] = _natural_prior_mean(node)
        else:
            env = {p: mean_y[index[p]] for p in node.parents}
            try:
                y = eval_expr(node.expr, env)
            except EvalError as err:
                raise InitializationError(
                    f"cannot evaluate {pid!r} at the prior point: {err}", pid
                ) from err
            if not node.transform.contains(y):
                raise InitializationError(
                    f"prior value {y} of {pid!r} lies outside its transform support "
                    f"{node.transform.support()}",
                    pid,
                )
            mean_y[k] = y
            mean_x[k] = forward_point(node.transform, y)
            cond_var[k] = 0.0

    # Evidence entries: one per node, or one pooled entry per observed
    # parameter, in order of first appearance.
    entries: list[tuple[str, int, float, float]] = []  # label, parent idx, d, v
    if cfg.pool_evidence:
        grouped: dict[str, list[LikelihoodApprox]] = {}
        labels: dict[str, str] = {}
        for node in d.evidence_nodes():
            parent = node.parents[0]
            grouped.setdefault(parent, []).append(_resolve(node, d))
            labels.setdefault(parent, node.id)
        for parent, items in grouped.items():
            pooled = pool_likelihoods(items)
            entries.append((labels[parent], index[parent], pooled.d, pooled.v))
    else:
        for node in d.evidence_nodes():
            like = _resolve(node, d)
            entries.append((node.id, index[node.parents[0]], like.d, like.v))

    order = param_ids + tuple(label for label, _, _, _ in entries)
    ev_parent = np.array([p for _, p, _, _ in entries], dtype=int)
    ev_obs = np.array([o for _, _, o, _ in entries])
    ev_var = np.array([v for _, _, _, v in entries])

    full_mean = np.concatenate([mean_x, mean_x[ev_parent]])
    full_cond_var = np.concatenate([cond_var, ev_var])

    linear = {}
    for pid in param_ids:
        node = d.nodes[pid]
        if node.kind == DETERMINISTIC:
            coeffs = recognize_linear(node, d)
            if coeffs is not None:
                linear[pid] = coeffs

    return SolverState(
        diagram=d,
        config=cfg,
        param_ids=param_ids,
        order=order,
        ev_parent=ev_parent,
        ev_obs=ev_obs,
        prior_mean=full_mean,
        cond_var=full_cond_var,
        post_x=mean_x.copy(),
        post_y=mean_y.copy(),
        linear_coeffs=linear,
    )


def _resolve(node: Node, d: Diagram) -> LikelihoodApprox:
    parent = d.nodes[node.parents[0]]
    try:
        return to_likelihood(node.obs, parent.transform, parent.prior)
    except ValueError as err:
        raise InitializationError(
            f"cannot resolve observation {node.id!r}: {err}", node.id
        ) from err


def linearize(state: SolverState) -> np.ndarray:
    """Coefficient matrix B at the previous posterior point.

    Deterministic node j with parent i gets
    ``B_ij = T'_j(f_j(y*)) * (df_j/dy_i)(y*) / T'_i(y*_i)`` with y* the
    previous natural-scale posterior means; recognized-linear nodes keep
    their constants; each evidence entry observes its parameter with
    coefficient one.
    """
    d = state.diagram
    n = state.n_params
    total = len(state.order)
    index = {pid: k for k, pid in enumerate(state.param_ids)}
    coeffs = np.zeros((total, total))

    for k, pid in enumerate(state.param_ids):
        node = d.nodes[pid]
        if node.kind != DETERMINISTIC:
            continue
        fixed = state.linear_coeffs.get(pid)
        if fixed is not None:
            for parent, c in fixed.items():
                coeffs[index[parent], k] = c
            continue
        env = {p: state.post_y[index[p]] for p in node.parents}
        try:
            y = eval_expr(node.expr, env)
            if not node.transform.contains(y):
                raise IterationError(
                    f"value {y} of {pid!r} left its transform support "
                    f"{node.transform.support()} at iteration {state.t + 1}",
                    pid,
                    state.records,
                )
            t_out = derivative(node.transform, y)
            for parent in node.parents:
                grad = eval_expr(diff_expr(node.expr, parent), env)
                t_in = derivative(d.nodes[parent].transform, env[parent])
                coeffs[index[parent], k] = t_out * grad / t_in
        except (EvalError, ValueError) as err:
            raise IterationError(
                f"cannot linearize {pid!r} at iteration {state.t + 1}: {err}",
                pid,
                state.records,
            ) from err

    for e, parent in enumerate(state.ev_parent.tolist()):
        coeffs[parent, n + e] = 1.0
    return coeffs


def update_means(state: SolverState, coeffs: np.ndarray) -> np.ndarray:
    """First-order update of the transformed means, in topological order.

    Basic parameters keep their prior-moment means; deterministic node j
    becomes ``T_j(f_j(y*)) + sum_i B_ij (E X_i - post_x_i)``, where E X_i
    is the parent's already-updated mean this iteration and post_x the
    previous posterior; evidence entries track their parameter's mean.
    """
    d = state.diagram
    n = state.n_params
    index = {pid: k for k, pid in enumerate(state.param_ids)}
    new_mean = state.prior_mean.copy()

    for k, pid in enumerate(state.param_ids):
        node = d.nodes[pid]
        if node.kind != DETERMINISTIC:
            continue  # basic parameters never move
        env = {p: state.post_y[index[p]] for p in node.parents}
        try:
            y = eval_expr(node.expr, env)
        except EvalError as err:
            raise IterationError(
                f"cannot evaluate {pid!r} at iteration {state.t + 1}: {err}",
                pid,
                state.records,
            ) from err
        if not node.transform.contains(y):
            raise IterationError(
                f"value {y} of {pid!r} left its transform support "
                f"{node.transform.support()} at iteration {state.t + 1}",
                pid,
                state.records,
            )
        base = forward_point(node.transform, y)
        corr = 0.0
        for parent in node.parents:
            pk = index[parent]
            corr += coeffs[pk, k] * (new_mean[pk] - state.post_x[pk])
        new_mean[k] = base + corr

    for e, parent in enumerate(state.ev_parent.tolist()):
        new_mean[n + e] = new_mean[parent]
    return new_mean


def step(state: SolverState) -> IterationRecord:
    """Run one full iteration and append its record to the state."""
    d = state.diagram
    n = state.n_params
    coeffs = linearize(state)
    new_mean = update_means(state, coeffs)

    st = GaussianState(
        order=state.order,
        mean=new_mean,
        coeffs=coeffs,
        cond_var=state.cond_var,
    )
    st = propagate_covariance(st)
    obs = {n + e: float(state.ev_obs[e]) for e in range(len(state.ev_obs))}
    try:
        post_mean, post_cov = condition(st, obs)
    except (ConditioningError, ValueError, np.linalg.LinAlgError) as err:
        raise IterationError(
            f"conditioning failed at iteration {state.t + 1}: {err}",
            None,
            state.records,
        ) from err

    post_var = np.maximum(np.diag(post_cov).copy(), 0.0)
    moments: dict[str, MomentPair] = {}
    new_post_y = np.zeros(n)
    for k, pid in enumerate(state.param_ids):
        node = d.nodes[pid]
        family = _KIND_FAMILY[node.transform.kind]
        try:
            m = inverse_moments(
                family, node.transform, MomentPair(float(post_mean[k]), float(post_var[k]))
            )
        except (ValueError, OverflowError) as err:
            raise IterationError(
                f"cannot map {pid!r} back to its natural scale at iteration "
                f"{state.t + 1}: {err}",
                pid,
                state.records,
            ) from err
        moments[pid] = m
        new_post_y[k] = m.mean

    r = np.array(
        [_relative_change(float(post_mean[k]), float(state.post_x[k])) for k in range(n)]
    )
    r_max = float(r.max()) if n else 0.0

    state.t += 1
    record = IterationRecord(
        t=state.t,
        prior_mean_x=new_mean.copy(),
        posterior_mean_x=post_mean.copy(),
        posterior_var_x=post_var.copy(),
        r=r,
        r_max=r_max,
    )
    state.records.append(record)
    state.post_moments.append(moments)
    state.post_covs.append(post_cov)
    state.prior_mean = new_mean
    state.post_x = post_mean.copy()
    state.post_y = new_post_y
    return record


def _relative_change(new: float, old: float) -> float:
    if new == old:
        return 0.0
    return abs(new - old) / max(abs(new), abs(old))


def solve(d: Diagram, cfg: SolverConfig | None = None) -> SolverResult:
    """Iterate to convergence, divergence, or the iteration cap.

    Convergence: the maximum relative change drops below ``epsilon``.
    Divergence: it rises strictly across ``divergence_window``
    consecutive comparisons (the increase counter resets on any
    non-increase).  The reported posterior comes from the last iteration,
    except on divergence, where the iterate with the smallest change
    measure is reported instead.
    """
    cfg = cfg or SolverConfig()
    state = initialize(d, cfg)
    status = MAX_ITERATIONS
    increase_run = 0
    for _ in range(cfg.max_iterations):
        record = step(state)
        if record.r_max < cfg.epsilon:
            status = CONVERGED
            break
        if state.t >= 2 and record.r_max > state.records[-2].r_max:
            increase_run += 1
            if increase_run >= cfg.divergence_window:
                status = DIVERGED
                break
        else:
            increase_run = 0

    if status == DIVERGED:
        best = min(range(len(state.records)), key=lambda i: state.records[i].r_max)
    else:
        best = len(state.records) - 1

    post_cov = state.post_covs[best]
    n = state.n_params
    corr = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            c = correlation(post_cov, i, j)
            corr[i, j] = c
            corr[j, i] = c
    for i in range(n):
        corr[i, i] = 1.0 if post_cov[i, i] > 0.0 else 0.0

    return SolverResult(
        status=status,
        iterations=state.records,
        posterior_y=dict(state.post_moments[best]),
        posterior_correlations=corr,
        param_ids=state.param_ids,
        reported_iteration=state.records[best].t if state.records else 0,
    )
