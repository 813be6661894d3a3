"""Exact Gaussian process regression with a constant prior mean and a
scaled squared-exponential kernel.

The model is deliberately small: the prior mean is the constant ``theta``
and the kernel is ``phi1^2 * exp(-||x - x'||^2 * phi2)``, so a full
hyperparameter set is three numbers.  Observations are noiseless, which
makes the Gram matrix singular whenever inputs repeat; positive
definiteness is restored by a scale-relative diagonal jitter that starts
at 1e-8 * phi1^2 and escalates by decades up to 1e-4 * phi1^2 before the
factorization is declared failed.

Prediction intervals are symmetric: mean plus/minus ``q`` predictive
standard deviations, for the prior as well as for fitted posteriors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InputError, NumericalError

__all__ = [
    "JITTER_LADDER",
    "HyperParams",
    "Interval",
    "Posterior",
    "kernel_eval",
    "kernel_matrix",
    "prior_interval",
    "fit_posterior",
    "posterior_interval",
    "neg_mll",
]

# Diagonal jitter levels, each multiplied by phi1^2 so conditioning does
# not depend on the output scale.
JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class HyperParams:
    """Trainable prior parameters: constant mean plus kernel scale and shape.

    ``theta`` is the constant prior mean (output units), ``phi1`` the
    kernel amplitude (the prior standard deviation at any input) and
    ``phi2`` the inverse squared length scale multiplying the squared
    input distance.  The positive parameters are stored on their natural
    scale so that records round-trip bit-exactly; optimizers that prefer
    an unconstrained parameterization go through :meth:`from_log` and the
    ``log_phi1`` / ``log_phi2`` properties.
    """

    theta: float
    phi1: float
    phi2: float

    def __post_init__(self):
        for name in ("theta", "phi1", "phi2"):
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError) as exc:
                raise InputError(f"{name} must be a real number, got {value!r}") from exc
            if not math.isfinite(value):
                raise InputError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.phi1 <= 0.0:
            raise InputError(f"phi1 must be positive, got {self.phi1!r}")
        if self.phi2 <= 0.0:
            raise InputError(f"phi2 must be positive, got {self.phi2!r}")

    @property
    def log_phi1(self) -> float:
        return math.log(self.phi1)

    @property
    def log_phi2(self) -> float:
        return math.log(self.phi2)

    @classmethod
    def from_log(cls, theta: float, log_phi1: float, log_phi2: float) -> "HyperParams":
        return cls(theta, math.exp(log_phi1), math.exp(log_phi2))

    def to_record(self) -> dict:
        """Flat natural-scale record; the canonical serialized form."""
        return {"theta": self.theta, "phi1": self.phi1, "phi2": self.phi2}

    @classmethod
    def from_record(cls, record: dict) -> "HyperParams":
        """Parse a record, ignoring any extra keys (training metadata)."""
        try:
            return cls(float(record["theta"]), float(record["phi1"]), float(record["phi2"]))
        except KeyError as exc:
            raise InputError(f"hyperparameter record is missing key {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] in output units."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise InputError("interval endpoints must not be NaN")
        if lo > hi:
            raise InputError(f"interval has lo={lo!r} > hi={hi!r}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def _as_points(x, name: str = "x") -> np.ndarray:
    """Coerce inputs to a (t, d) float array.

    Scalars become one 1-d point; a 1-d array of length t becomes t
    points of dimension 1 (the common case here).  Pass a (t, d) array
    for multi-dimensional inputs.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise InputError(f"{name} must be at most 2-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def _as_single_point(x, name: str = "x") -> np.ndarray:
    """Coerce one query location to a (d,) vector."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a single input vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def kernel_eval(hyper: HyperParams, x, x2) -> float:
    """Kernel value phi1^2 * exp(-||x - x2||^2 * phi2) for one input pair."""
    a = _as_single_point(x, "x")
    b = _as_single_point(x2, "x2")
    if a.shape != b.shape:
        raise InputError(f"input dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    sq = float(np.sum((a - b) ** 2))
    return hyper.phi1 ** 2 * math.exp(-sq * hyper.phi2)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows of a and b."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=-1)


def kernel_matrix(hyper: HyperParams, a, b=None) -> np.ndarray:
    """Gram matrix of the kernel between two point sets (b defaults to a)."""
    pa = _as_points(a, "a")
    pb = pa if b is None else _as_points(b, "b")
    if pa.shape[1] != pb.shape[1]:
        raise InputError(f"input dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    return hyper.phi1 ** 2 * np.exp(-_sq_dists(pa, pb) * hyper.phi2)


def jittered_cholesky(gram, scale: float, ladder=JITTER_LADDER, task_ids=None):
    """Lower Cholesky factor of gram + level * scale * I, escalating level.

    ``gram`` may be one (t, t) matrix or a stack (..., t, t).  The first
    ladder level is tried on the whole stack at once; only if that fails
    does each matrix escalate independently.  Returns ``(L, levels)``
    where ``levels`` holds the jitter level used per matrix.  An empty
    ladder factorizes the matrix as given (level 0).  Exhausting the
    ladder raises :class:`NumericalError` listing every attempted level,
    tagged with the offending entry of ``task_ids`` when provided.
    """
    gram = np.asarray(gram, dtype=float)
    squeeze = gram.ndim == 2
    stack = gram[None] if squeeze else gram
    count, t, t2 = stack.shape
    if t != t2:
        raise InputError(f"Gram matrices must be square, got {stack.shape}")
    ladder = tuple(ladder)
    eye = np.eye(t)

    levels = np.zeros(count)
    first = ladder[0] if ladder else 0.0
    try:
        factor = np.linalg.cholesky(stack + (first * scale) * eye)
        levels[:] = first
    except np.linalg.LinAlgError:
        if not ladder:
            raise NumericalError(
                "Cholesky factorization failed and no jitter was allowed",
                jitter_levels=(0.0,),
            ) from None
        factor = np.empty_like(stack)
        for i in range(count):
            for level in ladder:
                try:
                    factor[i] = np.linalg.cholesky(stack[i] + (level * scale) * eye)
                    levels[i] = level
                    break
                except np.linalg.LinAlgError:
                    continue
            else:
                task_id = None if task_ids is None else task_ids[i]
                where = "" if task_id is None else f" (task_id={task_id})"
                raise NumericalError(
                    f"Cholesky factorization failed after jitter levels {ladder}{where}",
                    jitter_levels=ladder,
                    task_id=task_id,
                ) from None
    if squeeze:
        return factor[0], float(levels[0])
    return factor, levels


@dataclass(frozen=True)
class Posterior:
    """GP posterior conditioned on one task's training points.

    Immutable once built; the arrays are marked read-only so instances
    can be shared freely across worker threads.  With zero training
    points the posterior coincides with the prior.
    """

    hyper: HyperParams
    train_inputs: np.ndarray  # (t, d)
    cholesky_factor: np.ndarray  # (t, t) lower triangular
    weights: np.ndarray  # (t,) solving K^{-1} (y - theta)
    jitter_level: float = 0.0
    train_outputs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("train_inputs", "cholesky_factor", "weights", "train_outputs"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.array(arr, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_train(self) -> int:
        return self.train_inputs.shape[0]

    def _query(self, x) -> np.ndarray:
        pts = _as_points(x, "x")
        if self.n_train and pts.shape[1] != self.train_inputs.shape[1]:
            raise InputError(
                f"query dimension {pts.shape[1]} does not match training dimension "
                f"{self.train_inputs.shape[1]}"
            )
        return pts

    def mean(self, x):
        """Posterior mean at query inputs (scalar in, scalar out)."""
        pts = self._query(x)
        if self.n_train == 0:
            out = np.full(pts.shape[0], self.hyper.theta)
        else:
            k_q = kernel_matrix(self.hyper, pts, self.train_inputs)
            out = self.hyper.theta + k_q @ self.weights
        return float(out[0]) if np.ndim(x) == 0 else out

    def var(self, x):
        """Posterior variance at query inputs, clamped at zero."""
        pts = self._query(x)
        prior_var = self.hyper.phi1 ** 2
        if self.n_train == 0:
            out = np.full(pts.shape[0], prior_var)
        else:
            k_q = kernel_matrix(self.hyper, pts, self.train_inputs)
            v = solve_triangular(self.cholesky_factor, k_q.T, lower=True)
            out = np.maximum(prior_var - np.sum(v * v, axis=0), 0.0)
        return float(out[0]) if np.ndim(x) == 0 else out

    def std(self, x):
        return np.sqrt(self.var(x)) if np.ndim(x) else math.sqrt(self.var(x))


def fit_posterior(hyper: HyperParams, x, y, ladder=JITTER_LADDER) -> Posterior:
    """Condition the prior on noiseless observations (y_i = f(x_i)).

    The posterior mean at a query point q is
    ``theta + k(q, X) K^{-1} (y - theta)`` and the variance is
    ``k(q, q) - k(q, X) K^{-1} k(X, q)`` with K the jittered Gram matrix.
    An empty training set returns the prior unchanged.
    """
    pts = _as_points(x, "x")
    outs = np.asarray(y, dtype=float).reshape(-1)
    if pts.shape[0] != outs.shape[0]:
        raise InputError(f"{pts.shape[0]} inputs but {outs.shape[0]} outputs")
    if outs.size and not np.all(np.isfinite(outs)):
        raise InputError("outputs contain non-finite values")
    if pts.shape[0] == 0:
        return Posterior(
            hyper=hyper,
            train_inputs=np.zeros((0, pts.shape[1] or 1)),
            cholesky_factor=np.zeros((0, 0)),
            weights=np.zeros(0),
            jitter_level=0.0,
            train_outputs=np.zeros(0),
        )
    gram = kernel_matrix(hyper, pts)
    factor, level = jittered_cholesky(gram, hyper.phi1 ** 2, ladder)
    residual = outs - hyper.theta
    half = solve_triangular(factor, residual, lower=True)
    weights = solve_triangular(factor.T, half, lower=False)
    return Posterior(
        hyper=hyper,
        train_inputs=pts,
        cholesky_factor=factor,
        weights=weights,
        jitter_level=level,
        train_outputs=outs,
    )


def prior_interval(hyper: HyperParams, x, q: float) -> Interval:
    """Prior interval mean +/- q * sqrt(k(x, x)) at one input."""
    if not q > 0.0:
        raise InputError(f"q must be positive, got {q!r}")
    sd = math.sqrt(kernel_eval(hyper, x, x))
    return Interval(hyper.theta - q * sd, hyper.theta + q * sd)


def posterior_interval(post: Posterior, x, q: float) -> Interval:
    """Posterior interval mean +/- q * std at one input."""
    if not q > 0.0:
        raise InputError(f"q must be positive, got {q!r}")
    point = _as_single_point(x, "x")
    center = post.mean(point.reshape(1, -1))[0]
    sd = math.sqrt(post.var(point.reshape(1, -1))[0])
    return Interval(center - q * sd, center + q * sd)


def neg_mll(hyper: HyperParams, x, y, ladder=JITTER_LADDER) -> float:
    """Negative marginal log-likelihood of outputs under the GP prior.

    Computed through the Cholesky factor of the jittered Gram matrix K:
    0.5 * r' K^{-1} r + 0.5 * logdet(K) + (t / 2) * log(2 pi) with
    r = y - theta.
    """
    pts = _as_points(x, "x")
    outs = np.asarray(y, dtype=float).reshape(-1)
    if pts.shape[0] != outs.shape[0]:
        raise InputError(f"{pts.shape[0]} inputs but {outs.shape[0]} outputs")
    if pts.shape[0] < 1:
        raise InputError("neg_mll needs at least one data point")
    if not np.all(np.isfinite(outs)):
        raise InputError("outputs contain non-finite values")
    gram = kernel_matrix(hyper, pts)
    factor, _ = jittered_cholesky(gram, hyper.phi1 ** 2, ladder)
    half = solve_triangular(factor, outs - hyper.theta, lower=True)
    quad = float(half @ half)
    half_logdet = float(np.sum(np.log(np.diag(factor))))
    return 0.5 * quad + half_logdet + 0.5 * pts.shape[0] * LOG_2PI
