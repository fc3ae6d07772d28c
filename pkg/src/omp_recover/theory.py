"""Closed-form constants, thresholds, sample sizes and failure bounds.

Two regimes are covered:

* sub-Gaussian: i.i.d. scale-1 design entries, exactly sparse ``beta``, with
  the design/noise conditions expressed through a caller-supplied eigenvalue
  band ``(lambda_min, lambda_max)`` and noise-energy bound ``lam``;
* Gaussian: rows drawn from ``N_p(0, Sigma)`` with coherence at most
  ``omega0 / (2 kbar)`` and a coefficient tail with l1 norm at most
  ``sigma * eta * mu_n``.  The eigenvalue band is then derived from
  ``(omega0, nu, eta)`` and depends on ``n``.

All logarithms are natural.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError, HNotLessThanOne

__all__ = [
    "Regime",
    "NRule",
    "mu_n",
    "tau",
    "tau1",
    "f_delta",
    "r1_r2_subgaussian",
    "PopulationConstants",
    "derive_population_constants",
    "GaussianLambdas",
    "gaussian_lambdas",
    "r2_gaussian",
    "rho",
    "xi",
    "xi_and_n",
    "corollary_constants",
    "failure_bound",
    "clamp_probability",
    "oracle_constant",
    "oracle_bound",
    "r2_star",
    "OracleBound",
    "SubGaussianRegimeParams",
    "GaussianRegimeParams",
    "TheoryConstants",
    "plan",
]


class Regime(str, enum.Enum):
    SUBGAUSSIAN = "subgaussian"
    GAUSSIAN = "gaussian"


class NRule(str, enum.Enum):
    EXPLICIT = "explicit"
    THEOREM = "theorem"
    COROLLARY = "corollary"


def _positive(name, value):
    if not value > 0:
        raise DomainError(f"{name} must be positive, got {value}")


def mu_n(p, n):
    """Noise-level factor sqrt(2 log p / n)."""
    if p < 2 or n < 1:
        raise DomainError(f"mu_n needs p >= 2 and n >= 1, got p={p}, n={n}")
    return math.sqrt(2.0 * math.log(p) / n)


def tau(p, a):
    """Base threshold sqrt(2 (1 + a) log p)."""
    _positive("a", a)
    if not p > 1:
        raise DomainError(f"tau needs p > 1, got {p}")
    return math.sqrt(2.0 * (1.0 + a) * math.log(p))


def tau1(tau_value, rho_value):
    if rho_value < 1:
        raise DomainError(f"rho must be >= 1, got {rho_value}")
    return rho_value * tau_value


def f_delta(delta):
    _positive("delta", delta)
    return 1.0 / (1.0 - 1.0 / math.sqrt(1.0 + delta)) ** 2


def _check_r2(r2, r1):
    # r2 >= sqrt(r1) holds by construction; a failure means corrupted inputs
    if not r2 >= math.sqrt(r1):
        raise DomainError(f"r2={r2} < sqrt(r1)={math.sqrt(r1)}")


def r1_r2_subgaussian(lambda_min, lambda_max, lam):
    _positive("lambda_min", lambda_min)
    _positive("lambda_max", lambda_max)
    _positive("lambda", lam)
    r1 = max(lambda_max, lam) / lambda_min**3
    r2 = 1.0 / math.sqrt(lambda_min) + math.sqrt(r1)
    _check_r2(r2, r1)
    return r1, r2


@dataclass(frozen=True)
class PopulationConstants:
    s_min: float
    s_max: float
    omega: float
    nu1_tilde: float
    nu1: float
    eta_bar: float


def derive_population_constants(omega0, nu, eta, kbar) -> PopulationConstants:
    """Eigenvalue/irrepresentability/tail constants implied by coherence omega0/(2 kbar)."""
    if not 0 <= omega0 < 1:
        raise DomainError(f"omega0 must lie in [0, 1), got {omega0}")
    if kbar < 1:
        raise DomainError(f"kbar must be >= 1, got {kbar}")
    if nu < 0 or eta < 0:
        raise DomainError("nu and eta must be non-negative")
    eta_bar = eta / kbar
    return PopulationConstants(
        s_min=1.0 - omega0 / 2.0,
        s_max=1.0 + omega0 / 2.0,
        omega=omega0,
        nu1_tilde=omega0 * eta_bar,
        nu1=nu + omega0 * eta_bar,
        eta_bar=eta_bar,
    )


@dataclass(frozen=True)
class GaussianLambdas:
    lambda_min: float
    lambda_max: float
    lam: float
    h: float
    h_ell: float
    h_u: float


def _lambdas(pop: PopulationConstants, h, kbar):
    if not h < 1:
        raise HNotLessThanOne(f"h = sqrt(kbar/n) + mu_n = {h:.6g} must be < 1; increase n")
    h_ell = (1.0 - h) ** 2
    h_u = (1.0 + h) ** 2
    lam = (1.0 + pop.s_max**2 * pop.nu1_tilde**2 + pop.nu1 * pop.eta_bar) * (1.0 + kbar**-0.5) ** 2
    return GaussianLambdas(pop.s_min * h_ell, pop.s_max * h_u, lam, h, h_ell, h_u)


def r2_gaussian(omega, nu1_tilde, nu1, eta_bar, lambda_min, r1):
    _positive("lambda_min", lambda_min)
    r2 = (1.0 - omega) * (nu1_tilde + math.sqrt((1.0 + nu1 * eta_bar) / lambda_min)) + math.sqrt(r1)
    _check_r2(r2, r1)
    return r2


def rho(nu1, omega, kbar):
    """Threshold inflation factor; equals 1 exactly when nu1 = omega = 0."""
    if not 0 <= omega < 1:
        raise DomainError(f"omega must lie in [0, 1), got {omega}")
    if nu1 < 0 or kbar < 1:
        raise DomainError("rho needs nu1 >= 0 and kbar >= 1")
    return (nu1 * (1.0 + kbar**-0.5) + 1.0) / (1.0 - omega)


def xi(r1, r2, sigma, kbar, alpha, delta):
    """max{(1 + delta) r1, sigma^2 r2^2 f(delta) / (kbar alpha)}."""
    first = (1.0 + delta) * r1
    if sigma == 0:
        return first
    _positive("alpha", alpha)
    return max(first, sigma**2 * r2**2 * f_delta(delta) / (kbar * alpha))


def xi_and_n(r1, r2, sigma, kbar, alpha, delta, tau_effective):
    value = xi(r1, r2, sigma, kbar, alpha, delta)
    return value, math.ceil(value * kbar * tau_effective**2)


def corollary_constants(r2, rho_value, a):
    """(xi_bar, r) = (32 (r2 rho)^2 (1 + a), 2 r2 rho sqrt(1 + a))."""
    _positive("a", a)
    scaled = r2 * rho_value
    return 32.0 * scaled**2 * (1.0 + a), 2.0 * scaled * math.sqrt(1.0 + a)


def failure_bound(k, p, a, tau_value, regime, p_econd=0.0):
    """Raw (unclamped) failure-probability bound for sparsity k."""
    if k < 0:
        raise DomainError(f"k must be >= 0, got {k}")
    regime = Regime(regime)
    if regime is Regime.SUBGAUSSIAN:
        if k == 0:
            return 2.0 / p**a
        return p_econd + 2.0 * (k + 1) / p**a + 2.0 * k / p ** (1 + a)
    c = math.sqrt(2.0 / math.pi) / tau_value
    if k == 0:
        return 1.0 / p + c / p**a
    return 4.0 / p + c * ((k + 1) / p**a + k / p ** (1 + a))


def clamp_probability(value):
    return min(1.0, max(0.0, value))


def oracle_constant(r):
    return 4.0 / 9.0 * r**2


def oracle_bound(beta, sigma, mu_n_value, c_constant):
    """C * sum_j min(beta_j^2, sigma^2 mu_n^2)."""
    _positive("c_constant", c_constant)
    b2 = np.asarray(beta, dtype=float) ** 2
    return float(c_constant * np.minimum(b2, (sigma * mu_n_value) ** 2).sum())


def r2_star(omega0, lambda_min, r1):
    """r2 specialised to nu = 1, eta = kbar (exactly sparse beta)."""
    _positive("lambda_min", lambda_min)
    value = (1.0 - omega0) * (omega0 + math.sqrt((2.0 + omega0) / lambda_min)) + math.sqrt(r1)
    _check_r2(value, r1)
    return value


@dataclass(frozen=True)
class OracleBound:
    c_constant: float
    r2_star: float | None = None

    def __post_init__(self):
        _positive("c_constant", self.c_constant)

    def bound_value(self, beta, sigma, mu_n_value):
        return oracle_bound(beta, sigma, mu_n_value, self.c_constant)


@dataclass(frozen=True)
class SubGaussianRegimeParams:
    p: int
    kbar: int
    a: float
    sigma: float
    lambda_min: float
    lambda_max: float
    lam: float
    alpha: float | None = None
    delta: float = 3.0

    def __post_init__(self):
        if self.p < 2 or self.kbar < 1:
            raise DomainError("need p >= 2 and kbar >= 1")
        _positive("a", self.a)
        _positive("delta", self.delta)
        if self.sigma < 0:
            raise DomainError("sigma must be non-negative")
        _positive("lambda_min", self.lambda_min)
        if self.lambda_min > self.lambda_max:
            raise DomainError("lambda_min must not exceed lambda_max")
        _positive("lambda", self.lam)
        if self.alpha is not None:
            _positive("alpha", self.alpha)

    @property
    def alpha_value(self):
        if self.alpha is not None:
            return self.alpha
        return self.sigma**2 / ((1.0 + self.delta) * self.kbar)


@dataclass(frozen=True)
class GaussianRegimeParams:
    p: int
    kbar: int
    a: float
    sigma: float
    omega0: float
    nu: float
    eta: float
    n: int | None = None
    alpha: float | None = None
    delta: float = 3.0

    def __post_init__(self):
        if self.p < 2 or self.kbar < 1:
            raise DomainError("need p >= 2 and kbar >= 1")
        _positive("a", self.a)
        _positive("delta", self.delta)
        if self.sigma < 0:
            raise DomainError("sigma must be non-negative")
        if self.alpha is not None:
            _positive("alpha", self.alpha)
        derive_population_constants(self.omega0, self.nu, self.eta, self.kbar)

    @property
    def alpha_value(self):
        if self.alpha is not None:
            return self.alpha
        return self.sigma**2 / ((1.0 + self.delta) * self.kbar)

    @property
    def population(self):
        return derive_population_constants(self.omega0, self.nu, self.eta, self.kbar)

    @property
    def rho(self):
        pop = self.population
        return rho(pop.nu1, pop.omega, self.kbar)

    def h(self, n):
        return math.sqrt(self.kbar / n) + mu_n(self.p, n)

    def min_valid_n(self):
        """Smallest n with h < 1."""
        c = (math.sqrt(self.kbar) + math.sqrt(2.0 * math.log(self.p))) ** 2
        n = max(1, math.floor(c))
        while not self.h(n) < 1:
            n += 1
        return n


def gaussian_lambdas(params: GaussianRegimeParams, n=None) -> GaussianLambdas:
    n = params.n if n is None else n
    if n is None:
        raise DomainError("gaussian_lambdas needs n")
    return _lambdas(params.population, params.h(n), params.kbar)


def _gaussian_r(params, n):
    pop = params.population
    lams = gaussian_lambdas(params, n)
    r1, _ = r1_r2_subgaussian(lams.lambda_min, lams.lambda_max, lams.lam)
    r2 = r2_gaussian(pop.omega, pop.nu1_tilde, pop.nu1, pop.eta_bar, lams.lambda_min, r1)
    return lams, r1, r2


def _smallest_sufficient_n(params, required):
    # required(n) is non-increasing in n, so n - required(n) is increasing
    lo = params.min_valid_n()
    if lo >= required(lo):
        return lo
    hi = 2 * lo
    while hi < required(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mid >= required(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _gaussian_n(params: GaussianRegimeParams, rule: NRule):
    kbar, p = params.kbar, params.p
    t1 = params.rho * tau(p, params.a)

    def theorem(n):
        _, r1, r2 = _gaussian_r(params, n)
        return xi(r1, r2, params.sigma, kbar, params.alpha_value, params.delta) * kbar * t1**2

    def corollary(n):
        _, _, r2 = _gaussian_r(params, n)
        return corollary_constants(r2, params.rho, params.a)[0] * kbar * math.log(p)

    return _smallest_sufficient_n(params, theorem if rule is NRule.THEOREM else corollary)


@dataclass(frozen=True)
class TheoryConstants:
    regime: Regime
    p: int
    k: int
    kbar: int
    a: float
    sigma: float
    n: int
    mu_n: float
    tau: float
    tau1: float
    rho: float
    lambda_min: float
    lambda_max: float
    lam: float
    r1: float
    r2: float
    f_delta: float
    alpha: float
    delta: float
    xi: float
    n_sufficient: int
    xi_bar: float
    n_corollary: int
    r_recovery: float
    perr_bound: float
    perr_bound_clamped: float
    p_econd: float
    oracle_c: float
    r2_star: float | None = None

    @property
    def threshold(self):
        return self.tau1

    def to_dict(self):
        d = asdict(self)
        d["regime"] = self.regime.value
        return d


def plan(params, k=None, n_rule=NRule.COROLLARY, n=None, p_econd=0.0) -> TheoryConstants:
    """Evaluate every constant for one parameter set.

    ``n_rule`` picks the sample size at which ``mu_n`` (and, in the
    Gaussian regime, the eigenvalue band) is evaluated: the theorem's
    ``xi kbar tau_eff^2``, the corollary's ``xi_bar kbar log p``, or an
    explicit ``n``.  In the Gaussian regime the band itself depends on
    ``n``, so the theorem and corollary sizes are the smallest integers
    satisfying their own inequality.
    """
    n_rule = NRule(n_rule)
    k = params.kbar if k is None else k
    if k < 0 or k > params.kbar:
        raise DomainError(f"k must lie in [0, kbar={params.kbar}], got {k}")
    if n_rule is NRule.EXPLICIT:
        if n is None or n < 1:
            raise DomainError("explicit n_rule needs a positive n")
    p, kbar, a, sigma = params.p, params.kbar, params.a, params.sigma
    t = tau(p, a)
    fd = f_delta(params.delta)
    alpha = params.alpha_value

    if isinstance(params, SubGaussianRegimeParams):
        regime = Regime.SUBGAUSSIAN
        rho_value = 1.0
        lmin, lmax, lam = params.lambda_min, params.lambda_max, params.lam
        r1, r2 = r1_r2_subgaussian(lmin, lmax, lam)
        xi_value, n_thm = xi_and_n(r1, r2, sigma, kbar, alpha, params.delta, t)
        xi_bar, r = corollary_constants(r2, 1.0, a)
        n_cor = math.ceil(xi_bar * kbar * math.log(p))
        chosen = {NRule.THEOREM: n_thm, NRule.COROLLARY: n_cor, NRule.EXPLICIT: n}[n_rule]
        star = None
    elif isinstance(params, GaussianRegimeParams):
        regime = Regime.GAUSSIAN
        rho_value = params.rho
        n_thm = _gaussian_n(params, NRule.THEOREM)
        n_cor = _gaussian_n(params, NRule.COROLLARY)
        chosen = {NRule.THEOREM: n_thm, NRule.COROLLARY: n_cor, NRule.EXPLICIT: n}[n_rule]
        lams, r1, r2 = _gaussian_r(params, chosen)
        lmin, lmax, lam = lams.lambda_min, lams.lambda_max, lams.lam
        xi_value = xi(r1, r2, sigma, kbar, alpha, params.delta)
        xi_bar, r = corollary_constants(r2, rho_value, a)
        # k-sparse variant: evaluate with nu = 1, eta = kbar
        sparse = GaussianRegimeParams(p, kbar, a, sigma, params.omega0, 1.0, float(kbar), chosen)
        s_lams, s_r1, _ = _gaussian_r(sparse, chosen)
        star = r2_star(params.omega0, s_lams.lambda_min, s_r1)
    else:
        raise TypeError(f"unsupported parameter type {type(params).__name__}")

    raw = failure_bound(k, p, a, t, regime, p_econd)
    return TheoryConstants(
        regime=regime,
        p=p,
        k=k,
        kbar=kbar,
        a=a,
        sigma=sigma,
        n=int(chosen),
        mu_n=mu_n(p, chosen),
        tau=t,
        tau1=tau1(t, rho_value),
        rho=rho_value,
        lambda_min=lmin,
        lambda_max=lmax,
        lam=lam,
        r1=r1,
        r2=r2,
        f_delta=fd,
        alpha=alpha,
        delta=params.delta,
        xi=xi_value,
        n_sufficient=int(n_thm),
        xi_bar=xi_bar,
        n_corollary=int(n_cor),
        r_recovery=r,
        perr_bound=raw,
        perr_bound_clamped=clamp_probability(raw),
        p_econd=p_econd,
        oracle_c=oracle_constant(r),
        r2_star=star,
    )
