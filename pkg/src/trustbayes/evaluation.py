"""Monte Carlo test protocol.

Fresh tasks and fresh inputs, drawn from a seed namespace disjoint from
meta-training, measure how often the prior and posterior intervals of a
fixed hyperparameter set capture the true function values, plus the mean
squared error of the posterior mean.  Tasks are generated and scored in
fixed chunks, so results are identical for any worker count, and the
inclusion computation is the same code path used for in-training
statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine, parallel
from .bounds import BoundSpec, compute_inclusion_stats
from .errors import InputError, NumericalError
from .gp import HyperParams, fit_posterior
from .serialize import format_real
from .tasks import NS_FIXTURE, NS_TEST, MetaDataset, _gen_one, sample_task, task_rng, eval_task

__all__ = [
    "EvalConfig",
    "EvalReport",
    "EVAL_REPORT_COLUMNS",
    "FIXTURE_COLUMNS",
    "monte_carlo_eval",
    "emit_function_fixture",
    "fixture_to_csv",
]

_EVAL_TASK_CHUNK = 64


@dataclass(frozen=True)
class EvalConfig:
    """Test protocol sizes: tasks, inputs per task, conditioning points."""

    n_test_tasks: int
    n_test_inputs: int
    t_tr_test: int
    q: float
    seed: int = 0

    def __post_init__(self):
        for name in ("n_test_tasks", "n_test_inputs", "t_tr_test"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InputError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not self.q > 0.0:
            raise InputError(f"q must be positive, got {self.q!r}")
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "seed", int(self.seed))


EVAL_REPORT_COLUMNS = (
    "prior_inclusion",
    "posterior_inclusion",
    "mse",
    "eval_split_prior_inclusion",
    "eval_split_posterior_inclusion",
    "n_test_tasks",
    "n_test_inputs",
    "t_tr_test",
    "q",
    "seed",
    "theta",
    "phi1",
    "phi2",
)


@dataclass(frozen=True)
class EvalReport:
    """Grand-mean test metrics plus the meta-dataset split estimates.

    The eval-split fields are NaN unless a meta dataset was supplied to
    compare against.
    """

    prior_inclusion: float
    posterior_inclusion: float
    mse: float
    eval_split_prior_inclusion: float
    eval_split_posterior_inclusion: float
    config: EvalConfig
    hyper: HyperParams

    def __post_init__(self):
        for name in ("prior_inclusion", "posterior_inclusion"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise InputError(f"{name} must be in [0, 1], got {value!r}")
        if self.mse < 0.0:
            raise InputError(f"mse must be >= 0, got {self.mse!r}")

    def _values(self) -> dict:
        return {
            "prior_inclusion": self.prior_inclusion,
            "posterior_inclusion": self.posterior_inclusion,
            "mse": self.mse,
            "eval_split_prior_inclusion": self.eval_split_prior_inclusion,
            "eval_split_posterior_inclusion": self.eval_split_posterior_inclusion,
            "n_test_tasks": self.config.n_test_tasks,
            "n_test_inputs": self.config.n_test_inputs,
            "t_tr_test": self.config.t_tr_test,
            "q": self.config.q,
            "seed": self.config.seed,
            "theta": self.hyper.theta,
            "phi1": self.hyper.phi1,
            "phi2": self.hyper.phi2,
        }

    def to_key_values(self) -> str:
        lines = []
        for key, value in self._values().items():
            if isinstance(value, float):
                text = "nan" if np.isnan(value) else format_real(value)
            else:
                text = str(value)
            lines.append(f"{key}={text}")
        return "\n".join(lines) + "\n"

    def to_csv_row(self) -> str:
        cells = []
        for key in EVAL_REPORT_COLUMNS:
            value = self._values()[key]
            if isinstance(value, float):
                cells.append("nan" if np.isnan(value) else format_real(value))
            else:
                cells.append(str(value))
        return ",".join(cells)


def monte_carlo_eval(
    hyper: HyperParams,
    cfg: EvalConfig,
    meta: MetaDataset | None = None,
    spec: BoundSpec | None = None,
    threads: int | None = None,
) -> EvalReport:
    """Estimate capture probabilities and MSE on fresh tasks.

    Per task: ``t_tr_test`` fresh uniform inputs condition the posterior
    (hyperparameters held fixed), then ``n_test_inputs`` fresh uniform
    inputs score prior inclusion, posterior inclusion and the squared
    error of the posterior mean.  Grand means weight every (task, input)
    pair equally.  When ``meta`` is given, the report also carries the
    inclusion means over its evaluation splits for side-by-side tables.
    """
    def run(span):
        lo, hi = span
        datas = []
        for task_id in range(lo, hi):
            _, data = _gen_one(
                cfg.seed, task_id, cfg.t_tr_test, cfg.n_test_inputs, 1, NS_TEST
            )
            datas.append(data)
        try:
            return engine.evaluate_tasks(hyper, datas, cfg.q, want_mse=True)
        except NumericalError as exc:
            raise NumericalError(
                f"test task {exc.task_id} failed numerically "
                f"(seed={cfg.seed}, namespace=test): {exc}",
                jitter_levels=exc.jitter_levels,
                task_id=exc.task_id,
            ) from exc

    chunks = parallel.span_chunks(cfg.n_test_tasks, _EVAL_TASK_CHUNK)
    results = parallel.map_chunks(run, chunks, threads)
    prior_per_task = np.concatenate([r.prior_incl for r in results])
    post_per_task = np.concatenate([r.post_incl for r in results])
    mse_per_task = np.concatenate([r.mse for r in results])

    split_prior = split_post = float("nan")
    if meta is not None:
        stats_spec = spec if spec is not None else BoundSpec(delta=0.0, q=cfg.q)
        stats = compute_inclusion_stats(hyper, meta, stats_spec, threads=threads)
        split_prior = stats.prior_mean()
        split_post = stats.posterior_mean()

    return EvalReport(
        prior_inclusion=float(np.mean(prior_per_task)),
        posterior_inclusion=float(np.mean(post_per_task)),
        mse=float(np.mean(mse_per_task)),
        eval_split_prior_inclusion=split_prior,
        eval_split_posterior_inclusion=split_post,
        config=cfg,
        hyper=hyper,
    )


FIXTURE_COLUMNS = (
    "func_id",
    "x",
    "f",
    "a_prior_lo",
    "a_prior_hi",
    "a_post_lo",
    "a_post_hi",
    "b_prior_lo",
    "b_prior_hi",
    "b_post_lo",
    "b_post_hi",
)


def emit_function_fixture(
    hyper_a: HyperParams,
    hyper_b: HyperParams,
    n_funcs: int,
    grid: int,
    t_tr: int,
    seed: int,
    q: float = 1.64,
) -> list[dict]:
    """Per-grid-point interval records for visual comparison of two priors.

    Samples ``n_funcs`` fresh tasks (fixture namespace), fits a posterior
    per task and hyperparameter set on ``t_tr`` uniform inputs, and emits
    one record per (function, grid point) with the truth and the prior
    and posterior interval bounds under both hyperparameter sets.
    """
    if grid < 2:
        raise InputError(f"grid must be >= 2, got {grid}")
    if n_funcs < 1:
        raise InputError(f"n_funcs must be >= 1, got {n_funcs}")
    if t_tr < 0:
        raise InputError(f"t_tr must be >= 0, got {t_tr}")
    if not q > 0.0:
        raise InputError(f"q must be positive, got {q!r}")

    xs = np.linspace(0.0, 1.0, grid)
    rows = []
    for func_id in range(n_funcs):
        rng = task_rng(seed, func_id, NS_FIXTURE)
        task = sample_task(rng)
        train_x = rng.random((t_tr, 1))
        train_y = eval_task(task, train_x[:, 0])
        truth = eval_task(task, xs)
        columns = {}
        for label, hyper in (("a", hyper_a), ("b", hyper_b)):
            post = fit_posterior(hyper, train_x, train_y)
            mu = post.mean(xs)
            sd = np.sqrt(post.var(xs))
            prior_half = q * hyper.phi1
            columns[f"{label}_prior_lo"] = np.full(grid, hyper.theta - prior_half)
            columns[f"{label}_prior_hi"] = np.full(grid, hyper.theta + prior_half)
            columns[f"{label}_post_lo"] = mu - q * sd
            columns[f"{label}_post_hi"] = mu + q * sd
        for i in range(grid):
            row = {"func_id": func_id, "x": float(xs[i]), "f": float(truth[i])}
            for key in FIXTURE_COLUMNS[3:]:
                row[key] = float(columns[key][i])
            rows.append(row)
    return rows


def fixture_to_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(",".join(FIXTURE_COLUMNS) + "\n")
        for row in rows:
            cells = [str(row["func_id"])]
            cells.extend(format_real(row[key]) for key in FIXTURE_COLUMNS[1:])
            handle.write(",".join(cells) + "\n")
