"""Batched per-task GP statistics.

Tasks with identical (t_tr, t_eval) shapes are stacked and pushed
through batched linear algebra.  Every reduction stays inside its own
task, and the stacked LAPACK routines factor one matrix per slice, so
the numbers are identical no matter how the stack is chunked or how many
worker threads run.  This module is the single code path behind
inclusion statistics, training objectives and Monte Carlo evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import parallel
from .gp import JITTER_LADDER, LOG_2PI, HyperParams, jittered_cholesky

# Cap on per-chunk scratch elements; chunking depends only on shapes,
# never on worker count, so results are identical at any thread count.
# Modest chunks leave enough grains for the thread pool.
_ELEM_CAP = 1 << 24
_MAX_CHUNK = 32

# Floor that keeps the sigmoid argument defined when a predictive
# standard deviation underflows to zero.
_STD_FLOOR = 1e-300


@dataclass
class TaskStats:
    """Per-task quantities, aligned with the input task order."""

    prior_incl: np.ndarray  # (n,) empirical prior-interval inclusion mean
    post_incl: np.ndarray | None = None  # (n,) empirical posterior-interval inclusion mean
    smooth_prior: np.ndarray | None = None  # (n,) sigmoid-relaxed prior inclusion
    smooth_post: np.ndarray | None = None  # (n,) sigmoid-relaxed posterior inclusion
    nmll: np.ndarray | None = None  # (n,) negative marginal log-likelihood, full data
    mse: np.ndarray | None = None  # (n,) mean squared error of the posterior mean


@dataclass
class _Block:
    position: np.ndarray  # indices into the caller's task list
    ids: np.ndarray  # task_id values, for error reporting
    x: np.ndarray  # (g, T, d)
    y: np.ndarray  # (g, T)
    t_tr: int
    sq_tr: np.ndarray | None = None
    sq_q: np.ndarray | None = None
    sq_full: np.ndarray | None = None


def _pair_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stacked squared distances: (g, m, d) x (g, k, d) -> (g, m, k)."""
    diff = a[:, :, None, :] - b[:, None, :, :]
    return np.sum(diff * diff, axis=-1)


def _chunk_size(t_tr: int, t_eval: int, want_nmll: bool) -> int:
    total = t_tr + t_eval
    per_task = t_tr * t_tr + t_eval * max(t_tr, 1) + 2 * t_eval
    if want_nmll:
        per_task += total * total
    return max(1, min(_MAX_CHUNK, _ELEM_CAP // max(per_task, 1)))


def build_blocks(datas, want_nmll: bool) -> list[_Block]:
    """Group tasks by shape, chunk them, and precompute squared distances."""
    groups: dict[tuple[int, int], list[int]] = {}
    for pos, data in enumerate(datas):
        groups.setdefault((data.t_tr, data.t_eval), []).append(pos)

    blocks = []
    for (t_tr, t_eval), positions in groups.items():
        size = _chunk_size(t_tr, t_eval, want_nmll)
        for lo, hi in parallel.span_chunks(len(positions), size):
            members = positions[lo:hi]
            x = np.stack([datas[p].inputs for p in members])
            y = np.stack([datas[p].outputs for p in members])
            block = _Block(
                position=np.array(members, dtype=int),
                ids=np.array([datas[p].task_id for p in members], dtype=int),
                x=x,
                y=y,
                t_tr=t_tr,
            )
            x_tr = x[:, :t_tr]
            x_ev = x[:, t_tr:]
            if t_tr > 0:
                block.sq_tr = _pair_sq_dists(x_tr, x_tr)
                block.sq_q = _pair_sq_dists(x_ev, x_tr)
            if want_nmll:
                block.sq_full = _pair_sq_dists(x, x)
            blocks.append(block)
    return blocks


def _smooth(q: float, sd, err, tau: float) -> np.ndarray:
    """Sigmoid relaxation of |err| <= q * sd with temperature tau * sd."""
    with np.errstate(over="ignore", divide="ignore"):
        z = (q * sd - np.abs(err)) / (tau * np.maximum(sd, _STD_FLOOR))
    return expit(z)


def block_stats(
    hyper: HyperParams,
    block: _Block,
    q: float,
    tau: float | None = None,
    want_nmll: bool = False,
    want_smoothed: bool = False,
    want_mse: bool = False,
    want_post_incl: bool = True,
    ladder=JITTER_LADDER,
) -> TaskStats:
    """Evaluate one uniform-shape block at one hyperparameter setting."""
    theta, phi2 = hyper.theta, hyper.phi2
    scale = hyper.phi1 ** 2
    g, total, _ = block.x.shape
    t_tr = block.t_tr
    y_ev = block.y[:, t_tr:]
    need_posterior = want_post_incl or want_smoothed or want_mse

    # Prior side: the interval is constant in x for this kernel.
    sd_prior = np.sqrt(scale)
    lo = theta - q * sd_prior
    hi = theta + q * sd_prior
    prior_incl = np.mean((y_ev >= lo) & (y_ev <= hi), axis=1)

    smooth_prior = None
    if want_smoothed:
        smooth_prior = np.mean(_smooth(q, sd_prior, y_ev - theta, tau), axis=1)

    # Posterior side.
    post_incl = smooth_post = mse = None
    if need_posterior:
        if t_tr == 0:
            mu = np.full_like(y_ev, theta)
            sd_post = np.full_like(y_ev, sd_prior)
        else:
            k_tr = scale * np.exp(-block.sq_tr * phi2)
            _, levels = jittered_cholesky(k_tr, scale, ladder, task_ids=block.ids)
            k_j = k_tr + (levels * scale)[:, None, None] * np.eye(t_tr)
            k_q = scale * np.exp(-block.sq_q * phi2)  # (g, t_eval, t_tr)
            rhs = np.concatenate(
                [(block.y[:, :t_tr] - theta)[:, :, None], np.swapaxes(k_q, 1, 2)], axis=2
            )
            sol = np.linalg.solve(k_j, rhs)
            mu = theta + np.einsum("get,gt->ge", k_q, sol[:, :, 0])
            cancel = np.einsum("get,gte->ge", k_q, sol[:, :, 1:])
            sd_post = np.sqrt(np.maximum(scale - cancel, 0.0))
        if want_post_incl:
            post_lo = mu - q * sd_post
            post_hi = mu + q * sd_post
            post_incl = np.mean((y_ev >= post_lo) & (y_ev <= post_hi), axis=1)
        if want_smoothed:
            smooth_post = np.mean(_smooth(q, sd_post, y_ev - mu, tau), axis=1)
        if want_mse:
            diff = y_ev - mu
            mse = np.mean(diff * diff, axis=1)

    nmll = None
    if want_nmll:
        k_full = scale * np.exp(-block.sq_full * phi2)
        factor, levels = jittered_cholesky(k_full, scale, ladder, task_ids=block.ids)
        k_j = k_full + (levels * scale)[:, None, None] * np.eye(total)
        residual = block.y - theta
        solved = np.linalg.solve(k_j, residual[:, :, None])[:, :, 0]
        quad = np.einsum("gt,gt->g", residual, solved)
        half_logdet = np.sum(np.log(np.diagonal(factor, axis1=1, axis2=2)), axis=1)
        nmll = 0.5 * quad + half_logdet + 0.5 * total * LOG_2PI

    return TaskStats(
        prior_incl=prior_incl,
        post_incl=post_incl,
        smooth_prior=smooth_prior,
        smooth_post=smooth_post,
        nmll=nmll,
        mse=mse,
    )


def evaluate_tasks(
    hyper: HyperParams,
    datas,
    q: float,
    tau: float | None = None,
    want_nmll: bool = False,
    want_smoothed: bool = False,
    want_mse: bool = False,
    want_post_incl: bool = True,
    threads: int | None = None,
    blocks: list[_Block] | None = None,
) -> TaskStats:
    """Per-task statistics for a list of TaskData, preserving task order.

    ``blocks`` may be passed to reuse precomputed distance stacks when
    the same dataset is evaluated at many hyperparameter settings.
    """
    if blocks is None:
        blocks = build_blocks(datas, want_nmll)
    n = sum(block.position.size for block in blocks)

    def run(block):
        return block_stats(
            hyper,
            block,
            q,
            tau=tau,
            want_nmll=want_nmll,
            want_smoothed=want_smoothed,
            want_mse=want_mse,
            want_post_incl=want_post_incl,
        )

    results = parallel.map_chunks(run, blocks, threads)

    def gather(field_name):
        out = np.empty(n)
        for block, result in zip(blocks, results):
            out[block.position] = getattr(result, field_name)
        return out

    return TaskStats(
        prior_incl=gather("prior_incl"),
        post_incl=gather("post_incl") if want_post_incl else None,
        smooth_prior=gather("smooth_prior") if want_smoothed else None,
        smooth_post=gather("smooth_post") if want_smoothed else None,
        nmll=gather("nmll") if want_nmll else None,
        mse=gather("mse") if want_mse else None,
    )
