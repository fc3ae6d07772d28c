"""Seeded Monte Carlo experiments scored against the recovery guarantees.

A trial draws ``(X, beta, noise)`` from seeds derived from
``(master_seed, trial_index)``, runs OMP at the regime's threshold and scores
the detected set against the generator's true large set ``S``.  Trials are
independent, so :func:`run_experiment` may farm them out to worker processes;
the reduction runs over outcomes sorted by trial index and does not depend on
execution order.
"""

from __future__ import annotations

import csv
import enum
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .designs import (
    CoefficientKind,
    CoefficientSpec,
    DesignSpec,
    Ensemble,
    Magnitudes,
    NoiseKind,
    SigmaKind,
    SigmaSpec,
    SignRule,
    SupportRule,
    derive_seed,
    sample_coefficients,
    sample_design,
    sample_gram,
    sample_noise,
)
from .errors import ConfigError, TooLarge
from .omp import OmpConfig, RegressionInstance, SelectionRule, StopReason, run_omp
from .theory import (
    GaussianRegimeParams,
    NRule,
    Regime,
    SubGaussianRegimeParams,
    TheoryConstants,
    clamp_probability,
    mu_n,
    plan,
    tau,
)

__all__ = [
    "Sampler",
    "ExperimentConfig",
    "TrialOutcome",
    "ExperimentReport",
    "TailBoundReport",
    "TRIAL_CSV_COLUMNS",
    "run_trial",
    "run_experiment",
    "brute_force_best_subset",
    "check_tail_bounds",
    "mc_slack",
    "default_workers",
]

TRIAL_CSV_COLUMNS = (
    "trial_index",
    "seed",
    "n",
    "p",
    "k",
    "steps",
    "subset_ok",
    "partial_ok",
    "exact_ok",
    "large_recovered",
    "l2_error_sq",
    "oracle_bound_value",
    "stop_reason",
)

# explicit sampling is used below this many design entries under ``auto``
GRAM_AUTO_ENTRIES = 1_000_000


class Sampler(str, enum.Enum):
    AUTO = "auto"
    EXPLICIT = "explicit"
    GRAM = "gram"


def mc_slack(bound, trials):
    """Three binomial standard errors at the clamped bound."""
    b = clamp_probability(bound)
    return 3.0 * math.sqrt(b * (1.0 - b) / trials)


def default_workers():
    env = os.environ.get("OMP_RECOVER_WORKERS")
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


_ENUM_FIELDS = {
    "regime": Regime,
    "n_rule": NRule,
    "ensemble": Ensemble,
    "coefficient_kind": CoefficientKind,
    "magnitudes": Magnitudes,
    "sign_rule": SignRule,
    "support_rule": SupportRule,
    "noise": NoiseKind,
    "sampler": Sampler,
    "selection_rule": SelectionRule,
}


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``beta_min_factor`` sets the large-coefficient magnitude to
    ``factor * r * sigma * mu_n`` once ``r`` and ``mu_n`` are known; use
    ``beta_min`` for an absolute value instead.  Correlated Gaussian designs
    default to the constant-correlation matrix with coherence exactly
    ``omega0 / (2 kbar)``.
    """

    regime: Regime
    p: int
    k: int
    kbar: int
    a: float
    sigma: float
    trials: int
    master_seed: int = 0
    n_rule: NRule = NRule.COROLLARY
    n: int | None = None
    ensemble: Ensemble = Ensemble.IID_GAUSSIAN
    sigma_matrix: SigmaSpec | None = None
    coefficient_kind: CoefficientKind = CoefficientKind.EXACT_SPARSE
    beta_min: float | None = None
    beta_min_factor: float | None = None
    magnitudes: Magnitudes = Magnitudes.ALL_EQUAL
    sign_rule: SignRule = SignRule.RANDOM
    support_rule: SupportRule = SupportRule.UNIFORM_RANDOM
    lambda_min: float | None = None
    lambda_max: float | None = None
    lam: float | None = None
    p_econd: float = 0.0
    omega0: float = 0.0
    nu: float = 0.0
    eta: float = 0.0
    alpha: float | None = None
    delta: float = 3.0
    noise: NoiseKind = NoiseKind.GAUSSIAN
    sampler: Sampler = Sampler.AUTO
    selection_rule: SelectionRule = SelectionRule.ARGMAX_SINGLE
    record_traces: bool = False

    def __post_init__(self):
        for name, enum_type in _ENUM_FIELDS.items():
            try:
                object.__setattr__(self, name, enum_type(getattr(self, name)))
            except ValueError:
                choices = ", ".join(e.value for e in enum_type)
                raise ConfigError(f"{name}: {getattr(self, name)!r} is not one of {choices}") from None
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.p < 2:
            raise ConfigError("p must be >= 2")
        if not 0 <= self.k <= self.kbar:
            raise ConfigError(f"need 0 <= k <= kbar, got k={self.k}, kbar={self.kbar}")
        if self.k > self.p:
            raise ConfigError("k must not exceed p")
        if self.n_rule is NRule.EXPLICIT and (self.n is None or self.n < 1):
            raise ConfigError("n_rule 'explicit' needs a positive n")
        if self.k > 0 and (self.beta_min is None) == (self.beta_min_factor is None):
            raise ConfigError("give exactly one of beta_min and beta_min_factor")
        if self.regime is Regime.SUBGAUSSIAN:
            if None in (self.lambda_min, self.lambda_max, self.lam):
                raise ConfigError("subgaussian regime needs lambda_min, lambda_max and lambda")
            if self.ensemble is Ensemble.CORRELATED_GAUSSIAN:
                raise ConfigError("subgaussian regime assumes i.i.d. design entries")
            if self.coefficient_kind is CoefficientKind.COMPRESSIBLE:
                raise ConfigError("subgaussian regime covers exactly sparse coefficients only")
        else:
            if self.ensemble is Ensemble.IID_RADEMACHER:
                raise ConfigError("gaussian regime needs a Gaussian design")
            if self.noise is not NoiseKind.GAUSSIAN:
                raise ConfigError("gaussian regime needs Gaussian noise")
        if self.sampler is Sampler.GRAM and not (
            self.ensemble is not Ensemble.IID_RADEMACHER and self.noise is NoiseKind.GAUSSIAN
        ):
            raise ConfigError("gram sampler needs a Gaussian design and Gaussian noise")

    def theory_params(self):
        if self.regime is Regime.SUBGAUSSIAN:
            return SubGaussianRegimeParams(
                self.p, self.kbar, self.a, self.sigma, self.lambda_min, self.lambda_max,
                self.lam, self.alpha, self.delta,
            )
        return GaussianRegimeParams(
            self.p, self.kbar, self.a, self.sigma, self.omega0, self.nu, self.eta,
            self.n, self.alpha, self.delta,
        )

    def plan(self) -> TheoryConstants:
        return plan(self.theory_params(), self.k, self.n_rule, self.n, self.p_econd)

    def sigma_spec(self):
        if self.ensemble is not Ensemble.CORRELATED_GAUSSIAN:
            return None
        if self.sigma_matrix is not None:
            return self.sigma_matrix
        return SigmaSpec.constant(self.omega0 / 2.0, self.kbar)

    def design_spec(self, n):
        return DesignSpec(n, self.p, self.ensemble, self.sigma_spec())

    def coefficient_spec(self, theory: TheoryConstants):
        if self.beta_min is not None:
            bmin = self.beta_min
        elif self.beta_min_factor is not None:
            bmin = self.beta_min_factor * theory.r_recovery * self.sigma * theory.mu_n
        else:
            bmin = 1.0
        return CoefficientSpec(
            kind=self.coefficient_kind,
            k=self.k,
            beta_min=bmin,
            magnitudes=self.magnitudes,
            eta=self.eta,
            nu=self.nu,
            sign_rule=self.sign_rule,
            support_rule=self.support_rule,
        )

    def sampler_for(self, n):
        if self.sampler is not Sampler.AUTO:
            return self.sampler
        eligible = self.ensemble is not Ensemble.IID_RADEMACHER and self.noise is NoiseKind.GAUSSIAN
        if eligible and n >= self.p + 1 and n * self.p >= GRAM_AUTO_ENTRIES:
            return Sampler.GRAM
        return Sampler.EXPLICIT

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, enum.Enum):
                value = value.value
            elif isinstance(value, SigmaSpec):
                value = _sigma_to_dict(value)
            out["lambda" if f.name == "lam" else f.name] = value
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown experiment key(s): {', '.join(unknown)}")
        if isinstance(data.get("sigma_matrix"), dict):
            data["sigma_matrix"] = _sigma_from_dict(data["sigma_matrix"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _sigma_to_dict(spec: SigmaSpec):
    if spec.kind is SigmaKind.EXPLICIT:
        return {"kind": "explicit", "matrix": spec.matrix.tolist()}
    if spec.kind is SigmaKind.CONSTANT:
        return {"kind": "constant", "c": spec.c, "kbar": spec.kbar}
    return {"kind": "identity"}


def _sigma_from_dict(d):
    d = dict(d)
    kind = d.pop("kind", "identity")
    allowed = {"identity": set(), "constant": {"c", "kbar"}, "explicit": {"matrix"}}
    if kind not in allowed:
        raise ConfigError(f"sigma_matrix.kind: unknown kind {kind!r}")
    extra = sorted(set(d) - allowed[kind])
    if extra:
        raise ConfigError(f"sigma_matrix: unknown key(s) for kind {kind!r}: {', '.join(extra)}")
    if kind == "constant":
        return SigmaSpec.constant(d["c"], d["kbar"])
    if kind == "explicit":
        return SigmaSpec.explicit(np.asarray(d["matrix"], dtype=float))
    return SigmaSpec.identity()


@dataclass(eq=False)
class TrialOutcome:
    trial_index: int
    seed: int
    n: int
    p: int
    k: int
    s_hat: tuple
    s_true: tuple
    subset_ok: bool
    partial_ok: bool
    exact_ok: bool
    large_recovered: bool
    l2_error_sq: float
    oracle_bound_value: float
    steps: int
    stop_reason: StopReason
    trace: object = field(default=None, repr=False)

    def csv_row(self):
        return [
            self.trial_index,
            self.seed,
            self.n,
            self.p,
            self.k,
            self.steps,
            int(self.subset_ok),
            int(self.partial_ok),
            int(self.exact_ok),
            int(self.large_recovered),
            repr(self.l2_error_sq),
            repr(self.oracle_bound_value),
            self.stop_reason.value,
        ]

    def key(self):
        # everything except the (optional) trace, for determinism checks
        return tuple(self.csv_row()) + (self.s_hat, self.s_true)


def _score(trace, beta, s_true, theory: TheoryConstants, trial_index, seed, n):
    s_hat = tuple(sorted(trace.detected))
    s_set = set(s_true)
    singular = trace.stop_reason is StopReason.GRAM_SINGULAR
    subset = set(s_hat) <= s_set and not singular
    missed = sorted(s_set - set(s_hat))
    energy = float(np.sum(beta[missed] ** 2)) if missed else 0.0
    partial = subset and energy <= theory.alpha * len(missed)
    exact = set(s_hat) == s_set and not singular
    k = len(s_set)
    cutoff = theory.r_recovery * theory.sigma * math.sqrt(k) * theory.mu_n
    large = set(np.flatnonzero(np.abs(beta) > cutoff).tolist())
    diff = trace.beta_hat - beta
    return TrialOutcome(
        trial_index=trial_index,
        seed=seed,
        n=n,
        p=beta.size,
        k=k,
        s_hat=s_hat,
        s_true=tuple(int(j) for j in s_true),
        subset_ok=subset,
        partial_ok=partial,
        exact_ok=exact,
        large_recovered=large <= set(s_hat),
        l2_error_sq=float(diff @ diff),
        oracle_bound_value=float(
            theory.oracle_c * np.minimum(beta**2, (theory.sigma * theory.mu_n) ** 2).sum()
        ),
        steps=len(trace.steps),
        stop_reason=trace.stop_reason,
    )


def run_trial(config: ExperimentConfig, trial_index, theory: TheoryConstants | None = None):
    """Draw, solve and score one trial; identical for identical inputs."""
    theory = config.plan() if theory is None else theory
    n = theory.n
    seed = derive_seed(config.master_seed, trial_index)
    beta, s_true = sample_coefficients(
        config.coefficient_spec(theory), config.p, n, config.sigma, derive_seed(seed, 1)
    )
    design = config.design_spec(n)
    if config.sampler_for(n) is Sampler.GRAM:
        instance = sample_gram(design, beta, config.sigma, derive_seed(seed, 0))
    else:
        x = sample_design(design, derive_seed(seed, 0))
        noise = sample_noise(n, config.sigma, derive_seed(seed, 2), config.noise)
        instance = RegressionInstance.build(x, beta, noise, config.sigma)
    trace = run_omp(instance, OmpConfig(theory.threshold, selection_rule=config.selection_rule))
    outcome = _score(trace, beta, s_true, theory, trial_index, seed, n)
    if config.record_traces:
        outcome.trace = trace
    return outcome


def _run_chunk(config, theory, indices):
    return [run_trial(config, i, theory) for i in indices]


METRICS = ("subset_ok", "partial_ok", "exact_ok", "large_recovered", "theorem_event")


@dataclass(eq=False)
class ExperimentReport:
    """Aggregated outcomes of one experiment.

    ``empirical_failure_rate`` is the fraction of trials in which the
    theorem's event (detected set inside ``S`` and undetected energy at most
    ``alpha`` per missed index) fails.  ``theoretical_bound`` is the raw
    failure bound; ``mc_slack`` is three binomial standard errors at its
    clamped value.
    """

    config: dict
    theory: dict
    trials: int
    sampler: str
    empirical_failure_rate: float
    theoretical_bound: float
    theoretical_bound_clamped: float
    mc_slack: float
    rates: dict
    oracle_violations: int
    oracle_violations_compliant: int
    stop_reasons: dict
    mean_steps: float
    wall_time: float
    outcomes: list = field(default_factory=list, repr=False)

    def failure_rate(self, metric):
        return 1.0 - self.rates[metric]

    def within_bound(self, metric):
        return self.failure_rate(metric) <= self.theoretical_bound_clamped + self.mc_slack

    def to_dict(self, include_timing=False):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("outcomes", "wall_time")}
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, include_timing=False):
        return json.dumps(self.to_dict(include_timing), indent=2) + "\n"

    def write_trials_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRIAL_CSV_COLUMNS)
            for o in self.outcomes:
                writer.writerow(o.csv_row())


def _aggregate(config, theory, outcomes, wall_time):
    t = len(outcomes)
    counts = {m: 0 for m in METRICS}
    stops = {r.value: 0 for r in StopReason}
    violations = compliant_violations = 0
    for o in outcomes:
        counts["subset_ok"] += o.subset_ok
        counts["partial_ok"] += o.partial_ok
        counts["exact_ok"] += o.exact_ok
        counts["large_recovered"] += o.large_recovered
        counts["theorem_event"] += o.subset_ok and o.partial_ok
        stops[o.stop_reason.value] += 1
        if o.l2_error_sq > o.oracle_bound_value:
            violations += 1
            compliant_violations += o.subset_ok
    rates = {m: counts[m] / t for m in METRICS}
    return ExperimentReport(
        config=config.to_dict(),
        theory=theory.to_dict(),
        trials=t,
        sampler=config.sampler_for(theory.n).value,
        empirical_failure_rate=1.0 - rates["theorem_event"],
        theoretical_bound=theory.perr_bound,
        theoretical_bound_clamped=theory.perr_bound_clamped,
        mc_slack=mc_slack(theory.perr_bound, t),
        rates=rates,
        oracle_violations=violations,
        oracle_violations_compliant=compliant_violations,
        stop_reasons=stops,
        mean_steps=sum(o.steps for o in outcomes) / t,
        wall_time=wall_time,
        outcomes=outcomes,
    )


def run_experiment(config: ExperimentConfig, workers=1) -> ExperimentReport:
    """Run every trial and fold the outcomes into a report."""
    start = time.perf_counter()
    theory = config.plan()
    indices = list(range(config.trials))
    if workers <= 1 or config.trials < 2:
        outcomes = _run_chunk(config, theory, indices)
    else:
        size = max(1, math.ceil(len(indices) / (4 * workers)))
        chunks = [indices[i : i + size] for i in range(0, len(indices), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [config] * len(chunks), [theory] * len(chunks), chunks)
            outcomes = [o for part in parts for o in part]
    outcomes.sort(key=lambda o: o.trial_index)
    return _aggregate(config, theory, outcomes, time.perf_counter() - start)


def brute_force_best_subset(instance: RegressionInstance, max_k, max_p=24, max_support=6):
    """Exhaustive minimum of ``||Y - X_T b||^2`` over supports ``|T| <= max_k``.

    Supports are visited by size, then lexicographically; a later support
    replaces the incumbent only if it lowers the RSS by more than
    ``1e-10 ||Y||^2``, so near-ties resolve to the smallest, earliest set.
    """
    x, y = instance.x_matrix, instance.response
    p = x.shape[1]
    if p > max_p or max_k > max_support:
        raise TooLarge(f"exhaustive search limited to p <= {max_p}, max_k <= {max_support}")
    yty = float(y @ y)
    tol = 1e-10 * yty
    best, best_rss = (), yty
    for size in range(1, min(max_k, p) + 1):
        for support in itertools.combinations(range(p), size):
            xt = x[:, support]
            coef = np.linalg.lstsq(xt, y, rcond=None)[0]
            r = y - xt @ coef
            rss = float(r @ r)
            if rss < best_rss - tol:
                best, best_rss = support, rss
    return best, best_rss


@dataclass(frozen=True)
class TailBoundReport:
    trials: int
    n: int
    p: int
    a: float
    max_threshold: float
    max_exceed_rate: float
    max_bound: float
    max_bound_gaussian: float
    chi_threshold: float
    chi_exceed_rate: float
    chi_bound: float

    @property
    def max_ok(self):
        return self.max_exceed_rate <= self.max_bound

    @property
    def chi_ok(self):
        return self.chi_exceed_rate <= self.chi_bound

    def slack(self, bound):
        return mc_slack(bound, self.trials)

    def to_dict(self):
        d = asdict(self)
        d["max_ok"] = self.max_ok
        d["chi_ok"] = self.chi_ok
        return d


def check_tail_bounds(trials, n, p, seed, a=1.0, chunk=8192) -> TailBoundReport:
    """Empirical exceedance rates for the two Gaussian tail bounds.

    (i) ``max_j |W_j| > sqrt(2 (1 + a) log p)`` over ``p`` standard normals,
    bounded by ``2 p / p^(1 + a)``; (ii) ``||W|| / sqrt(n) >= 1 + mu_n`` for
    ``W ~ N(0, I_n)``, bounded by ``1 / p``.
    """
    if trials < 1 or n < 1 or p < 2:
        raise ValueError("need trials >= 1, n >= 1, p >= 2")
    threshold = tau(p, a)
    chi_threshold = 1.0 + mu_n(p, n)
    rng_max = np.random.default_rng(derive_seed(seed, 0))
    rng_chi = np.random.default_rng(derive_seed(seed, 1))
    max_hits = chi_hits = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        w = rng_max.standard_normal((m, p))
        max_hits += int(np.count_nonzero(np.abs(w).max(axis=1) > threshold))
        v = rng_chi.standard_normal((m, n))
        chi_hits += int(np.count_nonzero(np.linalg.norm(v, axis=1) / math.sqrt(n) >= chi_threshold))
        done += m
    tail = p ** (1.0 + a)
    return TailBoundReport(
        trials=trials,
        n=n,
        p=p,
        a=a,
        max_threshold=threshold,
        max_exceed_rate=max_hits / trials,
        max_bound=2.0 * p / tail,
        max_bound_gaussian=math.sqrt(2.0 / math.pi) * p / (threshold * tail),
        chi_threshold=chi_threshold,
        chi_exceed_rate=chi_hits / trials,
        chi_bound=1.0 / p,
    )
