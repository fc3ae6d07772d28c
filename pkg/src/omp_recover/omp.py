"""Orthogonal matching pursuit with a normalized-residual stopping rule.

At step ``i`` the statistic for every undetected column ``j`` is

    Z_ij = X_j . R_{i-1} / ||R_{i-1}||

and the run stops as soon as ``max_j |Z_ij| <= threshold``.  Otherwise the
arg-max column (or, under hard thresholding, every column above the
threshold) joins the detected set and the residual is refreshed by least
squares on all detected columns.

The least-squares refit keeps a lower-triangular factor of the Gram matrix
of the detected columns and extends it by one row per added column, so a
step costs O(n |d| + |d|^2) instead of a full re-solve.

Two data layouts run through the same loop: an explicit
:class:`RegressionInstance` holding ``X`` and ``Y``, and a
:class:`GramInstance` holding only ``X^T X``, ``X^T Y`` and ``||Y||^2``.
Everything the algorithm computes is a function of those sufficient
statistics, so both give the same detected sequence.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, GramSingular, ZeroResidual

__all__ = [
    "SelectionRule",
    "StopReason",
    "RegressionInstance",
    "GramInstance",
    "OmpConfig",
    "StepRecord",
    "OmpTrace",
    "FitState",
    "compute_statistics",
    "select_indices",
    "update_fit",
    "least_squares_on_support",
    "run_omp",
]


class SelectionRule(str, enum.Enum):
    ARGMAX_SINGLE = "argmax"
    HARD_THRESHOLD_ALL = "hard_threshold"


class StopReason(str, enum.Enum):
    THRESHOLD_NOT_EXCEEDED = "threshold_not_exceeded"
    MAX_STEPS_REACHED = "max_steps_reached"
    RESIDUAL_ZERO = "residual_zero"
    GRAM_SINGULAR = "gram_singular"


def _as_vector(name, value, length=None):
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionMismatch(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


@dataclass(frozen=True, eq=False)
class RegressionInstance:
    """One realization of ``Y = X beta + noise``.

    ``response`` is stored as constructed; use :meth:`build` to form it from
    the other parts.
    """

    x_matrix: np.ndarray
    beta: np.ndarray
    noise: np.ndarray
    response: np.ndarray
    sigma: float

    def __post_init__(self):
        x = np.asarray(self.x_matrix, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DimensionMismatch(f"x_matrix must be a non-empty 2-D array, got shape {x.shape}")
        n, p = x.shape
        object.__setattr__(self, "x_matrix", x)
        object.__setattr__(self, "beta", _as_vector("beta", self.beta, p))
        object.__setattr__(self, "noise", _as_vector("noise", self.noise, n))
        object.__setattr__(self, "response", _as_vector("response", self.response, n))
        if not self.sigma >= 0:
            raise DimensionMismatch(f"sigma must be non-negative, got {self.sigma}")

    @classmethod
    def build(cls, x_matrix, beta, noise, sigma):
        x = np.asarray(x_matrix, dtype=float)
        b = np.asarray(beta, dtype=float)
        e = np.asarray(noise, dtype=float)
        if x.ndim != 2 or b.shape != (x.shape[1],) or e.shape != (x.shape[0],):
            raise DimensionMismatch(
                f"incompatible shapes X{x.shape}, beta{b.shape}, noise{e.shape}"
            )
        return cls(x, b, e, x @ b + e, float(sigma))

    @property
    def n(self):
        return self.x_matrix.shape[0]

    @property
    def p(self):
        return self.x_matrix.shape[1]


@dataclass(frozen=True, eq=False)
class GramInstance:
    """Sufficient statistics of a regression instance.

    ``gram = X^T X``, ``xty = X^T Y`` and ``yty = ||Y||^2``.  ``noise_energy``
    is ``||noise||^2`` when known.
    """

    gram: np.ndarray
    xty: np.ndarray
    yty: float
    n: int
    sigma: float
    beta: np.ndarray | None = None
    noise_energy: float | None = None

    def __post_init__(self):
        g = np.asarray(self.gram, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 1:
            raise DimensionMismatch(f"gram must be square, got shape {g.shape}")
        p = g.shape[0]
        object.__setattr__(self, "gram", g)
        object.__setattr__(self, "xty", _as_vector("xty", self.xty, p))
        if self.beta is not None:
            object.__setattr__(self, "beta", _as_vector("beta", self.beta, p))
        if self.n < 1:
            raise DimensionMismatch(f"n must be positive, got {self.n}")
        if not self.yty >= 0:
            raise DimensionMismatch(f"yty must be non-negative, got {self.yty}")

    @classmethod
    def from_instance(cls, instance: RegressionInstance):
        x, y = instance.x_matrix, instance.response
        return cls(
            gram=x.T @ x,
            xty=x.T @ y,
            yty=float(y @ y),
            n=instance.n,
            sigma=instance.sigma,
            beta=instance.beta,
            noise_energy=float(instance.noise @ instance.noise),
        )

    @property
    def p(self):
        return self.gram.shape[0]


@dataclass
class OmpConfig:
    """Run parameters.

    ``zero_residual_tolerance`` is relative to ``||Y||``: a residual at or
    below it counts as zero and ends the run.  ``singular_tolerance`` is
    relative to the first Gram pivot.
    """

    threshold: float
    max_steps: int | None = None
    selection_rule: SelectionRule = SelectionRule.ARGMAX_SINGLE
    singular_tolerance: float = 1e-10
    zero_residual_tolerance: float = 1e-12

    def __post_init__(self):
        self.selection_rule = SelectionRule(self.selection_rule)
        if not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps must be positive, got {self.max_steps}")
        if not self.singular_tolerance > 0:
            raise ValueError("singular_tolerance must be positive")

    def steps_for(self, n, p):
        cap = min(n, p)
        if self.max_steps is None:
            return cap
        if self.max_steps > cap:
            raise DimensionMismatch(f"max_steps={self.max_steps} exceeds min(n, p)={cap}")
        return self.max_steps


@dataclass(frozen=True, eq=False)
class StepRecord:
    step_index: int
    candidates: np.ndarray
    statistics: np.ndarray
    selected: tuple
    residual_norm_before: float
    max_statistic: float


@dataclass(eq=False)
class OmpTrace:
    steps: list
    detected: list
    stop_reason: StopReason
    beta_hat: np.ndarray
    residual_final: np.ndarray | None
    residual_norm_final: float
    final_max_statistic: float | None = None

    @property
    def support(self):
        return frozenset(self.detected)


def compute_statistics(instance, residual, candidates=None):
    """Inner products of the candidate columns with the normalized residual.

    Raises
    ------
    ZeroResidual
        If ``residual`` is identically zero.
    """
    x = instance.x_matrix
    r = _as_vector("residual", residual, x.shape[0])
    norm = float(np.linalg.norm(r))
    if norm == 0.0:
        raise ZeroResidual("residual is zero; the normalized statistic is undefined")
    if candidates is None:
        return x.T @ r / norm
    return x[:, np.asarray(candidates, dtype=int)].T @ r / norm


def select_indices(statistics, threshold, rule=SelectionRule.ARGMAX_SINGLE, candidates=None):
    """Indices chosen from one step's statistics.

    Returns positions into ``statistics``, or the matching entries of
    ``candidates`` when given.  An empty list means the threshold was not
    exceeded.  Arg-max ties go to the first (lowest-index) candidate.
    """
    stats = np.abs(np.asarray(statistics, dtype=float))
    if stats.size == 0:
        raise ValueError("statistics must be non-empty")
    if SelectionRule(rule) is SelectionRule.ARGMAX_SINGLE:
        best = int(np.argmax(stats))
        chosen = [best] if stats[best] > threshold else []
    else:
        chosen = np.flatnonzero(stats > threshold).tolist()
    if candidates is None:
        return chosen
    cand = np.asarray(candidates, dtype=int)
    return [int(cand[i]) for i in chosen]


class _GramFactor:
    # Lower-triangular L with L L^T = X_d^T X_d and z = L^{-1} X_d^T Y.

    def __init__(self, capacity, singular_tolerance):
        capacity = max(int(capacity), 1)
        self.L = np.zeros((capacity, capacity))
        self.z = np.zeros(capacity)
        self.size = 0
        self.lead = None
        self.tol = singular_tolerance

    def _grow(self):
        cap = 2 * self.L.shape[0]
        L = np.zeros((cap, cap))
        m = self.size
        L[:m, :m] = self.L[:m, :m]
        z = np.zeros(cap)
        z[:m] = self.z[:m]
        self.L, self.z = L, z

    def append(self, cross, sq, rhs, column=None):
        m = self.size
        if m == self.L.shape[0]:
            self._grow()
        if m:
            w = solve_triangular(self.L[:m, :m], cross, lower=True, check_finite=False)
        else:
            w = np.zeros(0)
        pivot_sq = sq - w @ w
        lead = sq if m == 0 else self.lead
        if not pivot_sq > self.tol * lead:
            raise GramSingular(
                f"Schur pivot {pivot_sq:.3e} below {self.tol:.1e} x leading pivot {lead:.3e}",
                column=column,
            )
        d = np.sqrt(pivot_sq)
        self.L[m, :m] = w
        self.L[m, m] = d
        self.z[m] = (rhs - w @ self.z[:m]) / d
        if m == 0:
            self.lead = sq
        self.size = m + 1

    def truncate(self, size):
        self.size = size
        if size == 0:
            self.lead = None

    def coefficients(self):
        m = self.size
        if m == 0:
            return np.zeros(0)
        return solve_triangular(self.L[:m, :m], self.z[:m], lower=True, trans="T", check_finite=False)

    def solve(self, rhs):
        m = self.size
        L = self.L[:m, :m]
        t = solve_triangular(L, rhs, lower=True, check_finite=False)
        return solve_triangular(L, t, lower=True, trans="T", check_finite=False)

    def explained_energy(self):
        z = self.z[: self.size]
        return float(z @ z)


class _DenseProblem:
    def __init__(self, instance: RegressionInstance):
        self.x = instance.x_matrix
        self.y = instance.response
        self.n, self.p = self.x.shape
        self.response_norm = float(np.linalg.norm(self.y))
        self.residual = self.y.copy()
        self.coef = np.zeros(0)

    def column_products(self, detected, j):
        xj = self.x[:, j]
        cross = self.x[:, detected].T @ xj if detected else np.zeros(0)
        return cross, float(xj @ xj), float(xj @ self.y)

    def refit(self, factor, detected):
        xd = self.x[:, detected]
        coef = factor.coefficients()
        r = self.y - xd @ coef
        # one step of iterative refinement against normal-equation round-off
        coef = coef + factor.solve(xd.T @ r)
        self.residual = self.y - xd @ coef
        self.coef = coef

    def correlations(self):
        return self.x.T @ self.residual

    def residual_norm(self, factor):
        return float(np.linalg.norm(self.residual))


class _GramProblem:
    # Subtractive residual norms cannot resolve below ~sqrt(eps) * ||Y||.
    zero_floor = 1.5e-8

    def __init__(self, instance: GramInstance):
        self.g = instance.gram
        self.xty = instance.xty
        self.yty = float(instance.yty)
        self.p = self.g.shape[0]
        self.n = int(instance.n)
        self.response_norm = float(np.sqrt(self.yty))
        self.detected = []
        self.coef = np.zeros(0)
        self.residual = None

    def column_products(self, detected, j):
        cross = self.g[detected, j] if detected else np.zeros(0)
        return cross, float(self.g[j, j]), float(self.xty[j])

    def refit(self, factor, detected):
        self.detected = list(detected)
        self.coef = factor.coefficients()

    def correlations(self):
        if not self.detected:
            return self.xty.copy()
        return self.xty - self.g[:, self.detected] @ self.coef

    def residual_norm(self, factor):
        return float(np.sqrt(max(self.yty - factor.explained_energy(), 0.0)))


def _problem_for(instance):
    if isinstance(instance, RegressionInstance):
        return _DenseProblem(instance)
    if isinstance(instance, GramInstance):
        return _GramProblem(instance)
    raise DimensionMismatch(f"unsupported instance type {type(instance).__name__}")


def _pursue(problem, config: OmpConfig) -> OmpTrace:
    n, p = problem.n, problem.p
    max_steps = config.steps_for(n, p)
    factor = _GramFactor(min(n, p), config.singular_tolerance)
    zero_tol = max(config.zero_residual_tolerance, getattr(problem, "zero_floor", 0.0))
    detected = []
    available = np.ones(p, dtype=bool)
    steps = []
    final_max = None

    while True:
        r_norm = problem.residual_norm(factor)
        if r_norm <= zero_tol * problem.response_norm:
            stop = StopReason.RESIDUAL_ZERO
            break
        if len(steps) >= max_steps or not available.any():
            stop = StopReason.MAX_STEPS_REACHED
            break
        candidates = np.flatnonzero(available)
        stats = problem.correlations()[candidates] / r_norm
        selected = select_indices(stats, config.threshold, config.selection_rule, candidates)
        max_stat = float(np.max(np.abs(stats)))
        if not selected:
            final_max = max_stat
            stop = StopReason.THRESHOLD_NOT_EXCEEDED
            break
        size_before = factor.size
        grown = list(detected)
        try:
            for j in selected:
                factor.append(*problem.column_products(grown, j), column=j)
                grown.append(j)
        except GramSingular:
            factor.truncate(size_before)
            final_max = max_stat
            stop = StopReason.GRAM_SINGULAR
            break
        detected = grown
        available[selected] = False
        problem.refit(factor, detected)
        steps.append(
            StepRecord(
                step_index=len(steps) + 1,
                candidates=candidates,
                statistics=stats,
                selected=tuple(selected),
                residual_norm_before=r_norm,
                max_statistic=max_stat,
            )
        )

    beta_hat = np.zeros(p)
    if detected:
        beta_hat[detected] = problem.coef
    return OmpTrace(
        steps=steps,
        detected=detected,
        stop_reason=stop,
        beta_hat=beta_hat,
        residual_final=None if problem.residual is None else problem.residual.copy(),
        residual_norm_final=problem.residual_norm(factor),
        final_max_statistic=final_max,
    )


def run_omp(instance, config: OmpConfig) -> OmpTrace:
    """Run OMP on an explicit or Gram-form instance.

    Parameters
    ----------
    instance : RegressionInstance or GramInstance
    config : OmpConfig

    Returns
    -------
    OmpTrace
        ``beta_hat`` is the least-squares fit on the final detected set,
        zero elsewhere.  ``residual_final`` is ``None`` for Gram input.
    """
    return _pursue(_problem_for(instance), config)


@dataclass(eq=False)
class FitState:
    """Incremental least-squares state carried between :func:`update_fit` calls."""

    factor: _GramFactor
    detected: list = field(default_factory=list)
    coef: np.ndarray = field(default_factory=lambda: np.zeros(0))


def update_fit(instance: RegressionInstance, detected, new_indices, state: FitState | None = None,
               singular_tolerance=1e-10):
    """Project ``Y`` onto span(X_{detected + new}) and return the residual.

    ``state`` must be the one returned for ``detected`` by the previous call;
    pass ``None`` to start from scratch.  Raises :class:`GramSingular` when a
    new column is numerically dependent on those already in, leaving
    ``state`` untouched.
    """
    problem = _DenseProblem(instance)
    detected = [int(j) for j in detected]
    if state is None:
        state = FitState(_GramFactor(min(problem.n, problem.p), singular_tolerance))
        todo = detected + [int(j) for j in new_indices]
    else:
        if list(state.detected) != detected:
            raise ValueError("state does not correspond to the given detected set")
        todo = [int(j) for j in new_indices]
    size_before = state.factor.size
    grown = list(state.detected)
    try:
        for j in todo:
            state.factor.append(*problem.column_products(grown, j), column=j)
            grown.append(j)
    except GramSingular:
        state.factor.truncate(size_before)
        raise
    state.detected = grown
    if grown:
        problem.refit(state.factor, grown)
        state.coef = problem.coef
    return problem.residual, state


def least_squares_on_support(instance, support, singular_tolerance=1e-10):
    """Least-squares coefficients on ``support`` embedded in a length-p vector."""
    problem = _problem_for(instance)
    cols = sorted(int(j) for j in set(support))
    beta = np.zeros(problem.p)
    if not cols:
        return beta
    factor = _GramFactor(len(cols), singular_tolerance)
    grown = []
    for j in cols:
        factor.append(*problem.column_products(grown, j), column=j)
        grown.append(j)
    problem.refit(factor, grown)
    beta[grown] = problem.coef
    return beta
