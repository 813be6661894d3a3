"""Trustworthiness certification from empirical inclusion counts.

Given per-task empirical inclusion rates over n tasks with t_i
evaluation points each, a two-level Hoeffding argument yields a
deterministic lower bound on the population capture probability:

    p(gamma) = (1 - 2 gamma) * (mean
               - sqrt(log(2 / gamma) * sum_i(1 / t_i) / (2 n^2))
               - sqrt(log(2 / gamma) / (2 n)))

valid for any gamma in (0, 0.5] and maximized over that interval.  The
best-case bound (mean = 1) tells whether a coverage target 1 - delta is
certifiable at all for given sample sizes, and by monotonicity in n it
also gives the minimal number of tasks for a target delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import engine, parallel
from .errors import InputError, NumericalError
from .gp import HyperParams, Interval
from .tasks import NS_COVERAGE, MetaDataset

__all__ = [
    "BoundSpec",
    "InclusionStats",
    "FeasibilityResult",
    "GammaOpt",
    "inclusion_loss",
    "compute_inclusion_stats",
    "p_bound",
    "maximize_gamma",
    "feasibility_check",
    "min_tasks_for_delta",
    "min_certifiable_mean",
    "coverage_trial",
]

_GRID_POINTS = 512
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_MAX_TASK_SEARCH = 1 << 40


@dataclass(frozen=True)
class BoundSpec:
    """Certification settings: target miss rate, interval width, gamma domain."""

    delta: float
    q: float
    gamma_min: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise InputError(f"delta must be in [0, 1], got {self.delta!r}")
        if not self.q > 0.0:
            raise InputError(f"q must be positive, got {self.q!r}")
        if not 0.0 < self.gamma_min < 0.5:
            raise InputError(f"gamma_min must be in (0, 0.5), got {self.gamma_min!r}")
        for name in ("delta", "q", "gamma_min"):
            object.__setattr__(self, name, float(getattr(self, name)))


@dataclass(frozen=True)
class InclusionStats:
    """Per-task empirical inclusion means for prior and posterior intervals."""

    per_task_prior: np.ndarray
    per_task_posterior: np.ndarray
    t_evals: np.ndarray
    n: int

    def __post_init__(self):
        prior = np.array(self.per_task_prior, dtype=float)
        post = np.array(self.per_task_posterior, dtype=float)
        tev = np.array(self.t_evals, dtype=int)
        if not (prior.shape == post.shape == tev.shape == (self.n,)):
            raise InputError("per-task lists must all have length n")
        if self.n < 1:
            raise InputError("need at least one task")
        if np.any(tev < 1):
            raise InputError("every t_eval must be >= 1")
        for name, arr in (("prior", prior), ("posterior", post)):
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise InputError(f"per-task {name} means must lie in [0, 1]")
        for name, arr in (("per_task_prior", prior), ("per_task_posterior", post), ("t_evals", tev)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n", int(self.n))

    def prior_mean(self) -> float:
        return float(np.mean(self.per_task_prior))

    def posterior_mean(self) -> float:
        return float(np.mean(self.per_task_posterior))


class GammaOpt(NamedTuple):
    gamma_star: float
    p_star: float


class FeasibilityResult(NamedTuple):
    feasible: bool
    margin: float
    gamma_star: float
    p_star: float


def inclusion_loss(value: float, interval: Interval) -> int:
    """1 when the value lies in the closed interval, else 0."""
    return 1 if interval.lo <= value <= interval.hi else 0


def compute_inclusion_stats(
    hyper: HyperParams,
    meta: MetaDataset,
    spec: BoundSpec,
    threads: int | None = None,
) -> InclusionStats:
    """Empirical inclusion means over every task's evaluation split.

    Each task's posterior is fitted on its training split; the prior and
    posterior intervals (half-width ``spec.q`` standard deviations) are
    then scored on the evaluation split.  Numerical failures propagate
    with the offending task_id attached.
    """
    for _, data in meta.tasks:
        if data.t_eval < 1:
            raise InputError(f"task {data.task_id} has no evaluation points")
    datas = [data for _, data in meta.tasks]
    try:
        stats = engine.evaluate_tasks(hyper, datas, spec.q, threads=threads)
    except NumericalError as exc:
        raise NumericalError(
            f"posterior fitting failed: {exc}",
            jitter_levels=exc.jitter_levels,
            task_id=exc.task_id,
        ) from exc
    return InclusionStats(
        per_task_prior=stats.prior_incl,
        per_task_posterior=stats.post_incl,
        t_evals=meta.t_evals(),
        n=meta.n,
    )


def _slack_coeffs(t_evals, n: int) -> tuple[float, float]:
    tev = np.asarray(t_evals, dtype=float).reshape(-1)
    if tev.shape[0] != n:
        raise InputError(f"t_evals has length {tev.shape[0]} but n={n}")
    if n < 1:
        raise InputError("n must be >= 1")
    if np.any(tev < 1):
        raise InputError("every t_eval must be >= 1")
    sum_inv = float(np.sum(1.0 / tev))
    return sum_inv / (2.0 * n * n), 1.0 / (2.0 * n)


def _p_of_gamma(mean_c: float, coeff_tasks: float, coeff_pop: float, gammas):
    gam = np.asarray(gammas, dtype=float)
    log_term = np.log(2.0 / gam)
    return (1.0 - 2.0 * gam) * (
        mean_c - np.sqrt(log_term * coeff_tasks) - np.sqrt(log_term * coeff_pop)
    )


def p_bound(mean_c: float, t_evals, n: int, gamma: float) -> float:
    """The certified lower bound at one gamma in (0, 0.5]."""
    if not 0.0 < gamma <= 0.5:
        raise InputError(f"gamma must be in (0, 0.5], got {gamma!r}")
    if not 0.0 <= mean_c <= 1.0:
        raise InputError(f"mean_c must be in [0, 1], got {mean_c!r}")
    coeff_tasks, coeff_pop = _slack_coeffs(t_evals, n)
    return float(_p_of_gamma(mean_c, coeff_tasks, coeff_pop, gamma))


def _maximize(mean_c: float, coeff_tasks: float, coeff_pop: float, gamma_min: float) -> GammaOpt:
    grid = np.geomspace(gamma_min, 0.5, _GRID_POINTS)
    values = _p_of_gamma(mean_c, coeff_tasks, coeff_pop, grid)
    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, _GRID_POINTS - 1)]

    # Golden-section refinement on the bracketing subinterval.
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = float(_p_of_gamma(mean_c, coeff_tasks, coeff_pop, c))
    fd = float(_p_of_gamma(mean_c, coeff_tasks, coeff_pop, d))
    for _ in range(200):
        if b - a <= 1e-15 * max(b, 1e-12):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = float(_p_of_gamma(mean_c, coeff_tasks, coeff_pop, c))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = float(_p_of_gamma(mean_c, coeff_tasks, coeff_pop, d))

    gamma_star, p_star = (c, fc) if fc >= fd else (d, fd)
    if values[best] > p_star:
        gamma_star, p_star = float(grid[best]), float(values[best])
    return GammaOpt(gamma_star=float(gamma_star), p_star=float(p_star))


def maximize_gamma(mean_c: float, t_evals, n: int, spec: BoundSpec) -> GammaOpt:
    """Maximize the bound over gamma in (gamma_min, 0.5].

    A 512-point log-spaced grid locates the bracket and golden-section
    search refines it.  When the bound is non-positive everywhere the
    grid argmax (typically gamma = 0.5, value 0) is returned as is.
    """
    if not 0.0 <= mean_c <= 1.0:
        raise InputError(f"mean_c must be in [0, 1], got {mean_c!r}")
    coeff_tasks, coeff_pop = _slack_coeffs(t_evals, n)
    return _maximize(mean_c, coeff_tasks, coeff_pop, spec.gamma_min)


def feasibility_check(n: int, t_evals, delta: float, gamma_min: float = 1e-6) -> FeasibilityResult:
    """Best-case certification check: can perfect inclusion reach 1 - delta?

    Evaluates the bound at mean 1 and compares its maximum against
    1 - delta; the margin is how much slack (or deficit) remains.
    """
    if not 0.0 <= delta <= 1.0:
        raise InputError(f"delta must be in [0, 1], got {delta!r}")
    coeff_tasks, coeff_pop = _slack_coeffs(t_evals, n)
    best = _maximize(1.0, coeff_tasks, coeff_pop, gamma_min)
    margin = best.p_star - (1.0 - delta)
    return FeasibilityResult(
        feasible=margin >= 0.0,
        margin=float(margin),
        gamma_star=best.gamma_star,
        p_star=best.p_star,
    )


def _uniform_feasible(n: int, t_eval: int, delta: float, gamma_min: float) -> bool:
    coeff_tasks = (1.0 / t_eval) / (2.0 * n)
    coeff_pop = 1.0 / (2.0 * n)
    best = _maximize(1.0, coeff_tasks, coeff_pop, gamma_min)
    return best.p_star >= 1.0 - delta


def min_tasks_for_delta(delta: float, t_eval_uniform: int, gamma_min: float = 1e-6) -> int:
    """Smallest task count whose best-case bound reaches 1 - delta.

    Doubling locates a feasible count, then binary search pins the
    minimum; the bound is nondecreasing in n for uniform t_eval.
    """
    if not 0.0 < delta < 1.0:
        raise InputError(f"delta must be in (0, 1), got {delta!r}")
    if t_eval_uniform < 1:
        raise InputError(f"t_eval_uniform must be >= 1, got {t_eval_uniform}")
    if _uniform_feasible(1, t_eval_uniform, delta, gamma_min):
        return 1
    hi = 2
    while not _uniform_feasible(hi, t_eval_uniform, delta, gamma_min):
        hi *= 2
        if hi > _MAX_TASK_SEARCH:
            raise InputError(
                f"no feasible task count below {_MAX_TASK_SEARCH} for delta={delta}, "
                f"t_eval={t_eval_uniform}"
            )
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _uniform_feasible(mid, t_eval_uniform, delta, gamma_min):
            hi = mid
        else:
            lo = mid
    return hi


def min_certifiable_mean(t_evals, n: int, delta: float, gamma_min: float = 1e-6) -> float:
    """Smallest empirical mean whose maximized bound still reaches 1 - delta.

    The bound is strictly increasing in the mean, so bisection applies.
    Raises :class:`InputError` when even a perfect mean cannot certify.
    """
    coeff_tasks, coeff_pop = _slack_coeffs(t_evals, n)
    target = 1.0 - delta
    if _maximize(1.0, coeff_tasks, coeff_pop, gamma_min).p_star < target:
        raise InputError(
            f"no empirical mean can certify delta={delta} at these sample sizes"
        )
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _maximize(mid, coeff_tasks, coeff_pop, gamma_min).p_star >= target:
            hi = mid
        else:
            lo = mid
    return hi


def _beta_latent(true_rate: float, concentration: float = 10.0) -> Callable:
    if true_rate <= 0.0 or true_rate >= 1.0:
        return lambda rng, size: np.full(size, float(true_rate))
    a = concentration * true_rate
    b = concentration * (1.0 - true_rate)
    return lambda rng, size: rng.beta(a, b, size)


def coverage_trial(
    gamma: float,
    n: int,
    t_eval: int,
    true_rate: float,
    trials: int,
    rng: np.random.Generator,
    latent_sampler: Callable | None = None,
    threads: int | None = None,
) -> float:
    """Monte Carlo coverage of the concentration bound.

    Each trial simulates a meta evaluation: latent per-task rates with
    mean ``true_rate`` (Beta-shaped unless a sampler is supplied), then
    empirical means from ``t_eval`` Bernoulli draws per task.  Returns
    the fraction of trials where the true rate is at least the empirical
    mean minus the Hoeffding slack at ``gamma``; the construction of the
    bound promises at least 1 - 2 gamma.
    """
    if not 0.0 < gamma <= 0.5:
        raise InputError(f"gamma must be in (0, 0.5], got {gamma!r}")
    if not 0.0 <= true_rate <= 1.0:
        raise InputError(f"true_rate must be in [0, 1], got {true_rate!r}")
    if n < 1 or t_eval < 1 or trials < 1:
        raise InputError("n, t_eval, and trials must all be >= 1")
    sampler = latent_sampler if latent_sampler is not None else _beta_latent(true_rate)

    log_term = math.log(2.0 / gamma)
    slack = math.sqrt(log_term * (n / t_eval) / (2.0 * n * n)) + math.sqrt(log_term / (2.0 * n))
    threshold = true_rate + slack

    base_entropy = int(rng.integers(0, 2 ** 62))

    def run(span):
        lo, hi = span
        hits = 0
        for trial in range(lo, hi):
            trial_rng = np.random.default_rng(
                np.random.SeedSequence(base_entropy, spawn_key=(NS_COVERAGE, trial))
            )
            latent = np.clip(sampler(trial_rng, n), 0.0, 1.0)
            emp = trial_rng.binomial(t_eval, latent) / t_eval
            if float(np.mean(emp)) <= threshold:
                hits += 1
        return hits

    chunks = parallel.span_chunks(trials, 256)
    hits = sum(parallel.map_chunks(run, chunks, threads))
    return hits / trials
