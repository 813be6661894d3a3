"""Synthetic task distribution and meta-dataset materialization.

A task is a quadratic trend plus ten sinusoids.  A per-task fair coin
picks which sinusoid family is active: the high-amplitude / moderate
frequency one (coefficients a, w) or the low-amplitude / high frequency
one (b, u).  Every random coefficient follows a fixed two-component
normal mixture whose component is chosen by its own fair coin; the
second parameter of each component is a standard deviation.

Each task owns an independent random stream keyed by (seed, namespace,
task_id), so datasets are reproducible and the content of one task never
depends on how many others were generated or in which order.  Datasets
persist as JSON lines with full-precision decimal reals, which makes the
files byte-stable and lets outputs be re-verified exactly on load.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import parallel
from .errors import InputError
from .serialize import dumps, loads

__all__ = [
    "NS_TRAIN",
    "NS_TEST",
    "NS_FIXTURE",
    "NS_COVERAGE",
    "Task",
    "TaskData",
    "MetaDataset",
    "task_rng",
    "sample_task",
    "eval_task",
    "gen_meta_dataset",
    "save_dataset",
    "load_dataset",
]

# Stream namespaces keep meta-training, testing, plotting fixtures and
# coverage simulations on disjoint random streams even under one seed.
NS_TRAIN = 0
NS_TEST = 1
NS_FIXTURE = 2
NS_COVERAGE = 3

N_SINUSOIDS = 10

# (mean_1, sd_1, mean_2, sd_2) for the fair-coin normal mixtures.
MIX_A = (-20.0, 5.0, 10.0, 2.0)
MIX_B = (-1.0, 0.1, 1.0, 0.1)
MIX_W = (-10.0, 10.0, 10.0, 10.0)
MIX_U = (-100.0, 10.0, 100.0, 10.0)
MIX_D = (-10.0, 1.0, 10.0, 1.0)

_GEN_CHUNK = 64


@dataclass(frozen=True)
class Task:
    """One sampled function, stored as its coefficients.

    ``coeffs`` is a (10, 5) array whose columns are a, b, w, u, beta.
    """

    d: float
    alpha: int
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d", float(self.d))
        if self.alpha not in (0, 1):
            raise InputError(f"alpha must be 0 or 1, got {self.alpha!r}")
        object.__setattr__(self, "alpha", int(self.alpha))
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.shape != (N_SINUSOIDS, 5):
            raise InputError(f"coeffs must have shape ({N_SINUSOIDS}, 5), got {coeffs.shape}")
        if not np.isfinite(self.d) or not np.all(np.isfinite(coeffs)):
            raise InputError("task coefficients must be finite")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)


@dataclass(frozen=True)
class TaskData:
    """Sampled inputs/outputs for one task with a train/eval split.

    The first ``t_tr`` points are the training split; the remainder is
    the evaluation split.  Outputs are exactly the task function applied
    to the inputs (noiseless observations).
    """

    task_id: int
    inputs: np.ndarray  # (t, n_x), every entry in [0, 1]
    outputs: np.ndarray  # (t,)
    t_tr: int

    def __post_init__(self):
        object.__setattr__(self, "task_id", int(self.task_id))
        inputs = np.array(self.inputs, dtype=float)
        outputs = np.array(self.outputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1)
        if inputs.ndim != 2:
            raise InputError(f"inputs must be (t, n_x), got shape {inputs.shape}")
        if outputs.ndim != 1 or outputs.shape[0] != inputs.shape[0]:
            raise InputError("outputs must be one value per input")
        if inputs.size and (inputs.min() < 0.0 or inputs.max() > 1.0):
            raise InputError("inputs must lie in [0, 1]")
        if not np.all(np.isfinite(outputs)):
            raise InputError("outputs must be finite")
        if not 0 <= self.t_tr <= inputs.shape[0]:
            raise InputError(f"t_tr={self.t_tr} out of range for {inputs.shape[0]} points")
        object.__setattr__(self, "t_tr", int(self.t_tr))
        inputs.setflags(write=False)
        outputs.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)

    @property
    def t_eval(self) -> int:
        return self.inputs.shape[0] - self.t_tr

    @property
    def train_inputs(self) -> np.ndarray:
        return self.inputs[: self.t_tr]

    @property
    def train_outputs(self) -> np.ndarray:
        return self.outputs[: self.t_tr]

    @property
    def eval_inputs(self) -> np.ndarray:
        return self.inputs[self.t_tr :]

    @property
    def eval_outputs(self) -> np.ndarray:
        return self.outputs[self.t_tr :]


@dataclass(frozen=True)
class MetaDataset:
    """A collection of tasks with their sampled data."""

    tasks: tuple
    seed: int

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if len(tasks) < 1:
            raise InputError("a meta dataset needs at least one task")
        ids = [data.task_id for _, data in tasks]
        if ids != list(range(len(tasks))):
            raise InputError("task ids must be unique and contiguous from 0")
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n(self) -> int:
        return len(self.tasks)

    def t_evals(self) -> np.ndarray:
        return np.array([data.t_eval for _, data in self.tasks], dtype=int)


def task_rng(seed: int, task_id: int, namespace: int = NS_TRAIN) -> np.random.Generator:
    """Independent per-task stream keyed by (seed, namespace, task_id)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(namespace, task_id)))


def _mixture_scalar(rng: np.random.Generator, mix) -> float:
    mean, sd = (mix[0], mix[1]) if rng.random() < 0.5 else (mix[2], mix[3])
    return float(rng.normal(mean, sd))


def _mixture_vector(rng: np.random.Generator, mix, size: int) -> np.ndarray:
    first = rng.random(size) < 0.5
    means = np.where(first, mix[0], mix[2])
    sds = np.where(first, mix[1], mix[3])
    return rng.normal(means, sds)


def sample_task(rng: np.random.Generator) -> Task:
    """Draw one task; the draw order is fixed so streams replay exactly."""
    d = _mixture_scalar(rng, MIX_D)
    alpha = int(rng.random() < 0.5)
    a = _mixture_vector(rng, MIX_A, N_SINUSOIDS)
    b = _mixture_vector(rng, MIX_B, N_SINUSOIDS)
    w = _mixture_vector(rng, MIX_W, N_SINUSOIDS)
    u = _mixture_vector(rng, MIX_U, N_SINUSOIDS)
    beta = rng.normal(0.0, 1.0, N_SINUSOIDS)
    return Task(d=d, alpha=alpha, coeffs=np.column_stack([a, b, w, u, beta]))


def eval_task(task: Task, x):
    """Evaluate the task function at scalar or array inputs.

    f(x) = d x^2 + sum_m [alpha a_m sin(w_m x + beta_m)
                          + (1 - alpha) b_m sin(u_m x + beta_m)]
    """
    xs = np.asarray(x, dtype=float)
    if xs.size and not np.all(np.isfinite(xs)):
        raise InputError("x contains non-finite values")
    a, b, w, u, beta = (task.coeffs[:, j] for j in range(5))
    if task.alpha == 1:
        amp, freq = a, w
    else:
        amp, freq = b, u
    phases = np.multiply.outer(xs, freq) + beta
    value = task.d * xs ** 2 + np.sin(phases) @ amp
    return float(value) if xs.ndim == 0 else value


def _gen_one(seed: int, task_id: int, t_tr: int, t_eval: int, n_x: int, namespace: int):
    rng = task_rng(seed, task_id, namespace)
    task = sample_task(rng)
    inputs = rng.random((t_tr + t_eval, n_x))
    outputs = eval_task(task, inputs[:, 0])
    return task, TaskData(task_id=task_id, inputs=inputs, outputs=outputs, t_tr=t_tr)


def gen_meta_dataset(
    n: int,
    t_tr: int,
    t_eval: int,
    seed: int,
    n_x: int = 1,
    namespace: int = NS_TRAIN,
    threads: int | None = None,
) -> MetaDataset:
    """Sample ``n`` tasks i.i.d., each with uniform inputs on [0, 1].

    Per task, ``t_tr + t_eval`` inputs are drawn i.i.d. uniform and the
    outputs are exact function evaluations.  Generation parallelizes
    over tasks without changing any result.
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if t_tr < 0:
        raise InputError(f"t_tr must be >= 0, got {t_tr}")
    if t_eval < 1:
        raise InputError(f"t_eval must be >= 1, got {t_eval}")
    if n_x != 1:
        raise InputError("the task family is one-dimensional; n_x must be 1")

    def build(span):
        lo, hi = span
        return [_gen_one(seed, tid, t_tr, t_eval, n_x, namespace) for tid in range(lo, hi)]

    chunks = parallel.span_chunks(n, _GEN_CHUNK)
    parts = parallel.map_chunks(build, chunks, threads)
    tasks = [item for part in parts for item in part]
    return MetaDataset(tasks=tuple(tasks), seed=seed)


_COEFF_KEYS = ("a", "b", "w", "u", "beta")


def _task_record(task: Task, data: TaskData) -> dict:
    return {
        "task_id": data.task_id,
        "d": task.d,
        "alpha": task.alpha,
        "coeffs": [
            {key: task.coeffs[m, j] for j, key in enumerate(_COEFF_KEYS)}
            for m in range(N_SINUSOIDS)
        ],
        "x": list(data.inputs[:, 0]),
        "y": list(data.outputs),
        "t_tr": data.t_tr,
    }


def save_dataset(meta: MetaDataset, path) -> None:
    """Write one JSON record per task, reals at full precision."""
    with open(path, "w", encoding="utf-8") as handle:
        for task, data in meta.tasks:
            handle.write(dumps(_task_record(task, data)))
            handle.write("\n")


def load_dataset(path, seed: int = 0, verify: bool = True) -> MetaDataset:
    """Read a JSON-lines dataset.

    With ``verify`` (the default) every stored output is checked to equal
    the re-evaluated task function exactly; full-precision serialization
    makes that comparison well defined.
    """
    tasks = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = loads(line)
            except ValueError as exc:
                raise InputError(f"{path}: line {lineno}: invalid JSON ({exc})") from exc
            try:
                coeffs = np.array(
                    [[row[key] for key in _COEFF_KEYS] for row in record["coeffs"]],
                    dtype=float,
                )
                task = Task(d=record["d"], alpha=record["alpha"], coeffs=coeffs)
                data = TaskData(
                    task_id=record["task_id"],
                    inputs=np.asarray(record["x"], dtype=float).reshape(-1, 1),
                    outputs=np.asarray(record["y"], dtype=float),
                    t_tr=record["t_tr"],
                )
            except (KeyError, TypeError, IndexError) as exc:
                raise InputError(f"{path}: line {lineno}: malformed task record ({exc})") from exc
            if verify:
                expected = eval_task(task, data.inputs[:, 0])
                if not np.array_equal(expected, data.outputs):
                    raise InputError(
                        f"{path}: line {lineno}: stored outputs do not match the task function"
                    )
            tasks.append((task, data))
    if not tasks:
        raise InputError(f"{path}: dataset is empty")
    return MetaDataset(tasks=tuple(tasks), seed=seed)
