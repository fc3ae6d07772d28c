"""Random designs, coefficient vectors and noise, plus condition checks.

Every sampler is a pure function of its spec and an integer seed.  Seeds for
independent streams are derived with :func:`derive_seed`, which hashes a
tuple of integers through :class:`numpy.random.SeedSequence`.

:func:`sample_gram` draws the joint Gram matrix of ``[X, noise]`` directly
from its Wishart law (Bartlett decomposition).  For Gaussian designs and
noise this has exactly the distribution of the Gram matrix of an explicit
draw, at O(p^3) cost independent of ``n``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InfeasibleTail, SigmaNotPD
from .omp import GramInstance
from .theory import mu_n

__all__ = [
    "Ensemble",
    "NoiseKind",
    "SigmaKind",
    "SigmaSpec",
    "DesignSpec",
    "CoefficientKind",
    "Magnitudes",
    "SignRule",
    "SupportRule",
    "CoefficientSpec",
    "ConditionReport",
    "derive_seed",
    "load_sigma_csv",
    "sample_design",
    "sample_coefficients",
    "sample_noise",
    "sample_gram",
    "verify_conditions",
    "verify_conditions_gram",
    "coherence_sigma",
]

UNIT_DIAGONAL_TOL = 1e-9
# relative gap kept between any coefficient and the large-set boundary
BOUNDARY_MARGIN = 1e-6


class Ensemble(str, enum.Enum):
    IID_GAUSSIAN = "iid_gaussian"
    IID_RADEMACHER = "iid_rademacher"
    CORRELATED_GAUSSIAN = "correlated_gaussian"


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"


class SigmaKind(str, enum.Enum):
    IDENTITY = "identity"
    CONSTANT = "constant"
    EXPLICIT = "explicit"


def derive_seed(*words):
    """Deterministic 63-bit seed from a tuple of non-negative integers."""
    state = np.random.SeedSequence([int(w) for w in words]).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


@dataclass(frozen=True, eq=False)
class SigmaSpec:
    """Population correlation matrix recipe.

    ``constant`` builds unit diagonal with every off-diagonal entry equal to
    ``c / kbar``.
    """

    kind: SigmaKind = SigmaKind.IDENTITY
    c: float = 0.0
    kbar: int = 1
    matrix: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SigmaKind(self.kind))
        if self.kind is SigmaKind.CONSTANT:
            if self.kbar < 1:
                raise ValueError("kbar must be >= 1")
            if not abs(self.c / self.kbar) < 1:
                raise SigmaNotPD(f"|c/kbar| = {abs(self.c / self.kbar)} must be < 1")
        if self.kind is SigmaKind.EXPLICIT:
            if self.matrix is None:
                raise ValueError("explicit SigmaSpec needs a matrix")
            m = np.array(self.matrix, dtype=float)
            _check_correlation(m)
            object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls):
        return cls(SigmaKind.IDENTITY)

    @classmethod
    def constant(cls, c, kbar):
        return cls(SigmaKind.CONSTANT, c=float(c), kbar=int(kbar))

    @classmethod
    def explicit(cls, matrix):
        return cls(SigmaKind.EXPLICIT, matrix=matrix)

    def build(self, p):
        if self.kind is SigmaKind.IDENTITY:
            return np.eye(p)
        if self.kind is SigmaKind.CONSTANT:
            rho = self.c / self.kbar
            # eigenvalues are 1 - rho and 1 + (p - 1) rho
            if not 1.0 + (p - 1) * rho > 0:
                raise SigmaNotPD(f"constant correlation {rho} is not positive definite at p={p}")
            m = np.full((p, p), rho)
            np.fill_diagonal(m, 1.0)
            return m
        if self.matrix.shape != (p, p):
            raise DimensionMismatch(f"Sigma is {self.matrix.shape}, design has p={p}")
        _cholesky(self.matrix)
        return self.matrix.copy()


def _check_correlation(m):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"Sigma must be square, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0, atol=UNIT_DIAGONAL_TOL):
        raise SigmaNotPD("Sigma must be symmetric")
    if np.max(np.abs(np.diag(m) - 1.0)) > UNIT_DIAGONAL_TOL:
        raise SigmaNotPD("Sigma must have unit diagonal (tolerance 1e-9)")


def load_sigma_csv(path):
    """Read an explicit correlation matrix from a headerless CSV file."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    try:
        m = np.array([[float(c) for c in row] for row in rows], dtype=float)
    except ValueError as exc:
        raise DimensionMismatch(f"{path}: non-numeric entry ({exc})") from None
    if m.ndim != 2:
        raise DimensionMismatch(f"{path}: rows have unequal lengths")
    return SigmaSpec.explicit(m)


def _cholesky(sigma_matrix):
    try:
        return np.linalg.cholesky(sigma_matrix)
    except np.linalg.LinAlgError:
        raise SigmaNotPD("Sigma is not positive definite") from None


@dataclass(frozen=True)
class DesignSpec:
    n: int
    p: int
    ensemble: Ensemble = Ensemble.IID_GAUSSIAN
    sigma: SigmaSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "ensemble", Ensemble(self.ensemble))
        if self.n < 1 or self.p < 1:
            raise DimensionMismatch(f"need n, p >= 1, got n={self.n}, p={self.p}")
        if self.ensemble is Ensemble.CORRELATED_GAUSSIAN and self.sigma is None:
            object.__setattr__(self, "sigma", SigmaSpec.identity())

    @property
    def is_gaussian(self):
        return self.ensemble is not Ensemble.IID_RADEMACHER

    def covariance(self):
        if self.ensemble is Ensemble.CORRELATED_GAUSSIAN:
            return self.sigma.build(self.p)
        return np.eye(self.p)

    def with_n(self, n):
        return DesignSpec(n, self.p, self.ensemble, self.sigma)


def _row_factor(spec: DesignSpec):
    # None stands for the identity factor
    if spec.ensemble is not Ensemble.CORRELATED_GAUSSIAN or spec.sigma.kind is SigmaKind.IDENTITY:
        return None
    return _cholesky(spec.sigma.build(spec.p))


def sample_design(spec: DesignSpec, rng_seed):
    """Draw an ``n x p`` design; correlated rows are ``L z`` with ``Sigma = L L^T``."""
    rng = np.random.default_rng(rng_seed)
    n, p = spec.n, spec.p
    if spec.ensemble is Ensemble.IID_RADEMACHER:
        return rng.integers(0, 2, size=(n, p)).astype(float) * 2.0 - 1.0
    factor = _row_factor(spec)
    z = rng.standard_normal((n, p))
    if factor is None:
        return z
    return z @ factor.T


class CoefficientKind(str, enum.Enum):
    EXACT_SPARSE = "exact"
    COMPRESSIBLE = "compressible"


class Magnitudes(str, enum.Enum):
    ALL_EQUAL = "equal"
    UNIFORM_ABOVE_MIN = "uniform"


class SignRule(str, enum.Enum):
    RANDOM = "random"
    ALL_POSITIVE = "positive"


class SupportRule(str, enum.Enum):
    UNIFORM_RANDOM = "uniform"
    FIRST_K = "first"


@dataclass(frozen=True)
class CoefficientSpec:
    """Recipe for beta.

    Large entries have magnitude ``beta_min`` (``equal``) or uniform on
    ``[beta_min, (1 + spread) beta_min]`` (``uniform``).  A compressible
    tail holds l1 mass ``sigma * eta * mu_n`` in entries capped just below
    ``sigma * nu * mu_n``.
    """

    kind: CoefficientKind = CoefficientKind.EXACT_SPARSE
    k: int = 0
    beta_min: float = 1.0
    magnitudes: Magnitudes = Magnitudes.ALL_EQUAL
    eta: float = 0.0
    nu: float = 0.0
    sign_rule: SignRule = SignRule.RANDOM
    support_rule: SupportRule = SupportRule.UNIFORM_RANDOM
    spread: float = 1.0

    def __post_init__(self):
        for name, enum_type in (
            ("kind", CoefficientKind),
            ("magnitudes", Magnitudes),
            ("sign_rule", SignRule),
            ("support_rule", SupportRule),
        ):
            object.__setattr__(self, name, enum_type(getattr(self, name)))
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        if self.k > 0 and not self.beta_min > 0:
            raise ValueError("beta_min must be positive")
        if self.eta < 0 or self.nu < 0 or self.spread < 0:
            raise ValueError("eta, nu and spread must be non-negative")

    def with_beta_min(self, beta_min):
        return CoefficientSpec(
            self.kind, self.k, beta_min, self.magnitudes, self.eta, self.nu,
            self.sign_rule, self.support_rule, self.spread,
        )


def _tail_values(budget, cap, room):
    if budget == 0:
        return np.zeros(0)
    if cap <= 0:
        raise InfeasibleTail(f"tail budget {budget:.3g} with zero per-entry cap")
    full = int(budget // cap)
    rest = budget - full * cap
    values = [cap] * full
    if rest > 1e-12 * cap:
        values.append(rest)
    if len(values) > room:
        raise InfeasibleTail(
            f"tail needs {len(values)} entries below the cap but only {room} are outside the large set"
        )
    # the shave keeps every entry strictly below the boundary and the sum inside the budget
    return np.array(values) * (1.0 - BOUNDARY_MARGIN)


def sample_coefficients(spec: CoefficientSpec, p, n, sigma, rng_seed):
    """Draw beta and its large set S.

    Returns
    -------
    beta : ndarray, shape (p,)
    s_set : ndarray of int
        Sorted indices of the large entries (the support for exactly sparse
        vectors).
    """
    if spec.k > p:
        raise DimensionMismatch(f"k={spec.k} exceeds p={p}")
    rng = np.random.default_rng(rng_seed)
    k = spec.k

    if spec.kind is CoefficientKind.COMPRESSIBLE:
        level = sigma * mu_n(p, n)
        boundary = spec.nu * level
        if k and spec.beta_min <= boundary * (1.0 + BOUNDARY_MARGIN) + 1e-9:
            raise ValueError(
                f"beta_min={spec.beta_min:.6g} must clear the large-set boundary {boundary:.6g}"
            )
        if spec.nu == 0 and spec.eta > 0:
            raise InfeasibleTail("nu = 0 leaves no room for a non-zero tail")
        tail = _tail_values(spec.eta * level, boundary, p - k)
    else:
        tail = np.zeros(0)

    if spec.support_rule is SupportRule.FIRST_K:
        order = np.arange(p)
    else:
        order = rng.permutation(p)
    s_set = np.sort(order[:k])
    tail_idx = order[k : k + tail.size]

    if spec.magnitudes is Magnitudes.UNIFORM_ABOVE_MIN:
        mags = spec.beta_min * (1.0 + spec.spread * rng.random(k))
    else:
        mags = np.full(k, spec.beta_min)
    if spec.sign_rule is SignRule.RANDOM:
        signs = rng.choice([-1.0, 1.0], size=k + tail.size)
    else:
        signs = np.ones(k + tail.size)

    beta = np.zeros(p)
    beta[s_set] = signs[:k] * mags
    beta[tail_idx] = signs[k:] * tail

    if spec.kind is CoefficientKind.COMPRESSIBLE:
        rest = np.delete(np.abs(beta), s_set)
        if rest.sum() > spec.eta * level or (rest.size and rest.max() > boundary):
            raise InfeasibleTail("tail construction violated its bounds")
    return beta, s_set


def sample_noise(n, sigma, rng_seed, kind=NoiseKind.GAUSSIAN):
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(rng_seed)
    if NoiseKind(kind) is NoiseKind.RADEMACHER:
        e = rng.integers(0, 2, size=n).astype(float) * 2.0 - 1.0
    else:
        e = rng.standard_normal(n)
    return sigma * e


def sample_gram(spec: DesignSpec, beta, sigma, rng_seed):
    """Draw the sufficient statistics of ``Y = X beta + noise`` without forming X.

    ``[X, noise]^T [X, noise]`` is Wishart with ``n`` degrees of freedom and
    scale ``diag(Sigma, sigma^2)``; it is sampled via the Bartlett
    decomposition.  Only Gaussian designs with Gaussian noise qualify, and
    ``n`` must be at least ``p + 1``.
    """
    if not spec.is_gaussian:
        raise ValueError("Wishart sampling requires a Gaussian design")
    n, p = spec.n, spec.p
    m = p + 1
    if n < m:
        raise DimensionMismatch(f"Wishart sampling needs n >= p + 1, got n={n}, p={p}")
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (p,):
        raise DimensionMismatch(f"beta has shape {beta.shape}, expected ({p},)")
    rng = np.random.default_rng(rng_seed)
    b = np.zeros((m, m))
    b[np.diag_indices(m)] = np.sqrt(rng.chisquare(n - np.arange(m)))
    rows, cols = np.tril_indices(m, -1)
    b[rows, cols] = rng.standard_normal(rows.size)

    factor = _row_factor(spec)
    if factor is not None:
        b[:p] = factor @ b[:p]
    b[p] *= sigma
    w = b @ b.T

    gram = w[:p, :p]
    x_noise = w[:p, p]
    noise_energy = float(w[p, p])
    g_beta = gram @ beta
    xty = g_beta + x_noise
    yty = float(beta @ g_beta + 2.0 * beta @ x_noise + noise_energy)
    return GramInstance(
        gram=gram, xty=xty, yty=max(yty, 0.0), n=n, sigma=float(sigma), beta=beta,
        noise_energy=noise_energy,
    )


@dataclass(frozen=True)
class ConditionReport:
    """Empirical check of the on-support eigenvalue band and noise energy.

    Eigenvalue fields are ``None`` for an empty support; the band then holds
    vacuously.  ``coherence_x`` is computed on columns rescaled to
    ``||X_j||^2 / n = 1``.
    """

    lambda_min_hat: float | None
    lambda_max_hat: float | None
    noise_energy: float
    coherence_x: float
    condition1_ok: bool | None
    condition2_ok: bool | None

    def to_dict(self):
        return dict(self.__dict__)


def _normalized_coherence(gram):
    d = np.sqrt(np.clip(np.diag(gram), 0.0, None))
    if gram.shape[0] < 2:
        return 0.0
    scale = np.outer(d, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(scale > 0, gram / scale, 0.0)
    np.fill_diagonal(c, 0.0)
    return float(np.max(np.abs(c)))


def _report(gram, n, support, noise_sq, sigma, lambda_min, lambda_max, lam):
    support = sorted(int(j) for j in set(support))
    if support:
        sub = gram[np.ix_(support, support)] / n
        eig = np.linalg.eigvalsh((sub + sub.T) / 2.0)
        lo, hi = float(eig[0]), float(eig[-1])
        c1 = None
        if lambda_min is not None and lambda_max is not None:
            c1 = bool(lambda_min <= lo and hi <= lambda_max)
    else:
        lo = hi = None
        c1 = True
    if sigma > 0:
        energy = noise_sq / (n * sigma**2)
    else:
        energy = 0.0 if noise_sq == 0 else float("inf")
    c2 = None if lam is None else bool(energy <= lam)
    return ConditionReport(lo, hi, float(energy), _normalized_coherence(gram), c1, c2)


def verify_conditions(x_matrix, support, noise, sigma, lambda_min=None, lambda_max=None, lam=None):
    """Compare the realized design and noise with a theoretical band."""
    x = np.asarray(x_matrix, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch(f"x_matrix must be 2-D, got shape {x.shape}")
    e = np.zeros(x.shape[0]) if noise is None else np.asarray(noise, dtype=float)
    if e.shape != (x.shape[0],):
        raise DimensionMismatch(f"noise has shape {e.shape}, expected ({x.shape[0]},)")
    return _report(x.T @ x, x.shape[0], support, float(e @ e), sigma, lambda_min, lambda_max, lam)


def verify_conditions_gram(instance: GramInstance, support, lambda_min=None, lambda_max=None, lam=None):
    noise_sq = 0.0 if instance.noise_energy is None else instance.noise_energy
    return _report(instance.gram, instance.n, support, noise_sq, instance.sigma, lambda_min, lambda_max, lam)


def coherence_sigma(sigma_matrix):
    """Largest absolute off-diagonal entry."""
    m = np.asarray(sigma_matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] < 2:
        return 0.0
    off = np.abs(m - np.diag(np.diag(m)))
    return float(off.max())
