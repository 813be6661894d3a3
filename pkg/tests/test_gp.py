"""Core GP tests: kernel, intervals, posterior, marginal likelihood.

Derived expectations are computed by independent oracles (hand
arithmetic, direct matrix inverses, finite differences) rather than by
the code under test.
"""

import math

import numpy as np
import pytest

from trustbayes import (
    HyperParams,
    Interval,
    InputError,
    JITTER_LADDER,
    NumericalError,
    fit_posterior,
    kernel_eval,
    kernel_matrix,
    neg_mll,
    posterior_interval,
    prior_interval,
)
from trustbayes.serialize import dumps, format_real, loads


# ---------------------------------------------------------------------------
# HyperParams
# ---------------------------------------------------------------------------

def test_hyper_record_round_trip_is_bit_exact():
    rng = np.random.default_rng(11)
    for _ in range(50):
        hyper = HyperParams(
            theta=float(rng.normal(scale=100)),
            phi1=float(np.exp(rng.uniform(-300, 300))),
            phi2=float(np.exp(rng.uniform(-300, 300))),
        )
        text = dumps(hyper.to_record())
        again = HyperParams.from_record(loads(text))
        assert again == hyper


def test_hyper_rejects_nonpositive_and_nonfinite():
    with pytest.raises(InputError):
        HyperParams(0.0, -1.0, 1.0)
    with pytest.raises(InputError):
        HyperParams(0.0, 0.0, 1.0)
    with pytest.raises(InputError):
        HyperParams(0.0, 1.0, 0.0)
    with pytest.raises(InputError):
        HyperParams(float("nan"), 1.0, 1.0)
    with pytest.raises(InputError):
        HyperParams(0.0, float("inf"), 1.0)


def test_hyper_from_log_and_properties():
    hyper = HyperParams.from_log(1.5, math.log(3.0), math.log(0.25))
    assert hyper.phi1 == pytest.approx(3.0, rel=1e-15)
    assert hyper.phi2 == pytest.approx(0.25, rel=1e-15)
    assert hyper.log_phi1 == pytest.approx(math.log(3.0), rel=1e-15)


def test_format_real_round_trips():
    rng = np.random.default_rng(5)
    for _ in range(200):
        value = float(rng.normal(scale=10.0 ** rng.integers(-20, 20)))
        assert float(format_real(value)) == value


# ---------------------------------------------------------------------------
# kernel_eval
# ---------------------------------------------------------------------------

def test_kernel_equal_inputs_gives_amplitude_squared():
    hyper = HyperParams(0.0, 3.0, 17.0)
    assert kernel_eval(hyper, 0.4, 0.4) == 9.0


def test_kernel_hand_value():
    # phi1=1, phi2=1, |x - x2| = 1 -> exp(-1)
    hyper = HyperParams(0.0, 1.0, 1.0)
    assert kernel_eval(hyper, 0.0, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-15)


def test_kernel_flat_limit():
    hyper = HyperParams(0.0, 1.0, 1e-300)
    assert kernel_eval(hyper, 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert kernel_eval(hyper, -5.0, 7.0) == pytest.approx(1.0, abs=1e-12)


def test_kernel_dimension_mismatch():
    hyper = HyperParams(0.0, 1.0, 1.0)
    with pytest.raises(InputError):
        kernel_eval(hyper, [0.0, 1.0], [0.0])


def test_kernel_symmetry():
    hyper = HyperParams(0.0, 2.5, 0.7)
    rng = np.random.default_rng(3)
    for _ in range(100):
        x, x2 = rng.normal(size=2)
        assert kernel_eval(hyper, x, x2) == kernel_eval(hyper, x2, x)
    for _ in range(20):
        x, x2 = rng.normal(size=(2, 3))
        assert kernel_eval(hyper, x, x2) == kernel_eval(hyper, x2, x)


def test_gram_matrix_is_factorizable_for_random_inputs():
    # PSD up to jitter: the jittered stack must factor for <= 50 points.
    rng = np.random.default_rng(7)
    for trial in range(5):
        hyper = HyperParams(0.0, float(rng.uniform(0.5, 50)), float(rng.uniform(0.1, 40)))
        pts = rng.random((50, 1))
        post = fit_posterior(hyper, pts, np.zeros(50))
        diag = np.diag(post.cholesky_factor)
        assert np.all(diag > 0)
        assert np.allclose(post.cholesky_factor, np.tril(post.cholesky_factor))


# ---------------------------------------------------------------------------
# prior_interval
# ---------------------------------------------------------------------------

def test_prior_interval_nominal_90():
    interval = prior_interval(HyperParams(0.0, 1.0, 1.0), 0.3, 1.64)
    assert interval.lo == pytest.approx(-1.64, abs=1e-15)
    assert interval.hi == pytest.approx(1.64, abs=1e-15)


def test_prior_interval_degenerate_width():
    interval = prior_interval(HyperParams(5.0, 1e-300, 1.0), 0.9, 3.0)
    assert interval.lo == pytest.approx(5.0, abs=1e-12)
    assert interval.hi == pytest.approx(5.0, abs=1e-12)


def test_prior_interval_hand_arithmetic():
    # theta=2, phi1=3, q=2 -> 2 +/- 6
    interval = prior_interval(HyperParams(2.0, 3.0, 1.0), 0.0, 2.0)
    assert interval.lo == pytest.approx(-4.0, rel=1e-15)
    assert interval.hi == pytest.approx(8.0, rel=1e-15)


def test_prior_interval_width_matches_q_times_std():
    rng = np.random.default_rng(21)
    for _ in range(30):
        hyper = HyperParams(float(rng.normal()), float(rng.uniform(0.1, 10)), 1.0)
        q = float(rng.uniform(0.1, 4.0))
        interval = prior_interval(hyper, 0.5, q)
        assert interval.width == pytest.approx(2.0 * q * hyper.phi1, rel=1e-12)


def test_prior_interval_monotone_in_q():
    hyper = HyperParams(1.0, 2.0, 1.0)
    small = prior_interval(hyper, 0.1, 1.0)
    large = prior_interval(hyper, 0.1, 1.5)
    assert large.lo <= small.lo and small.hi <= large.hi


def test_interval_requires_ordered_endpoints():
    with pytest.raises(InputError):
        Interval(1.0, 0.0)
    assert Interval(1.0, 1.0).width == 0.0


def test_prior_interval_rejects_nonpositive_q():
    with pytest.raises(InputError):
        prior_interval(HyperParams(0.0, 1.0, 1.0), 0.0, 0.0)


# ---------------------------------------------------------------------------
# fit_posterior
# ---------------------------------------------------------------------------

def test_empty_posterior_reproduces_prior():
    hyper = HyperParams(1.0, 2.0, 3.0)
    post = fit_posterior(hyper, np.zeros((0, 1)), [])
    rng = np.random.default_rng(13)
    queries = rng.random(100)
    assert np.all(post.mean(queries) == 1.0)
    assert np.all(post.var(queries) == 4.0)


def test_one_point_posterior_matches_closed_form():
    # Conditioning on (x=0, y=2) with theta=0, phi1=1, phi2=1.  The exact
    # one-point formulas, including the mandatory base jitter j on the
    # 1x1 Gram matrix, are mean(x) = 2 e^{-x^2} / (1 + j) and
    # var(x) = 1 - e^{-2 x^2} / (1 + j).
    hyper = HyperParams(0.0, 1.0, 1.0)
    post = fit_posterior(hyper, [0.0], [2.0])
    j = post.jitter_level
    assert j == JITTER_LADDER[0]
    for x in (0.25, 0.5, 1.0, 1.7):
        mean_oracle = 2.0 * math.exp(-x * x) / (1.0 + j)
        var_oracle = 1.0 - math.exp(-2.0 * x * x) / (1.0 + j)
        assert post.mean(x) == pytest.approx(mean_oracle, abs=1e-10)
        assert post.var(x) == pytest.approx(var_oracle, abs=1e-10)
    # Jitter-free closed form holds at its own coarser scale.
    assert post.mean(1.0) == pytest.approx(2.0 * math.exp(-1.0), abs=1e-6)
    assert post.var(1.0) == pytest.approx(1.0 - math.exp(-2.0), abs=1e-6)
    assert post.mean(1.0) == pytest.approx(0.735759, abs=1e-5)
    assert post.var(1.0) == pytest.approx(0.864665, abs=1e-5)


def test_posterior_collapses_at_observed_input():
    hyper = HyperParams(0.0, 1.0, 1.0)
    post = fit_posterior(hyper, [0.0], [2.0])
    assert post.mean(0.0) == pytest.approx(2.0, abs=1e-6)
    assert post.var(0.0) <= 10.0 * post.jitter_level * hyper.phi1 ** 2


def _random_instance(rng, max_points=8):
    hyper = HyperParams(
        theta=float(rng.normal()),
        phi1=float(np.exp(rng.uniform(-1.0, 1.5))),
        phi2=float(np.exp(rng.uniform(-1.0, 2.0))),
    )
    count = int(rng.integers(1, max_points + 1))
    x = rng.random((count, 1))
    y = rng.normal(scale=2.0, size=count)
    return hyper, x, y


def _separated_instance(rng, max_points=8):
    # Evenly spaced inputs with bounded perturbation keep the Gram matrix
    # comfortably regular across the phi2 range.
    count = int(rng.integers(1, max_points + 1))
    base = (np.arange(count) + 0.5) / count
    x = np.clip(base + rng.uniform(-0.2, 0.2, count) / count, 0.0, 1.0)
    hyper = HyperParams(
        theta=float(rng.normal()),
        phi1=float(np.exp(rng.uniform(-1.0, 1.5))),
        phi2=float(np.exp(rng.uniform(1.0, 4.0))),
    )
    y = rng.normal(scale=2.0, size=count)
    return hyper, x.reshape(-1, 1), y


def _interpolation_instance(rng, max_points=12):
    # Tight interpolation additionally needs decorrelated neighbors, so
    # phi2 scales with the squared spacing.
    count = int(rng.integers(1, max_points + 1))
    base = (np.arange(count) + 0.5) / count
    x = np.clip(base + rng.uniform(-0.2, 0.2, count) / count, 0.0, 1.0)
    phi2 = float(rng.uniform(2.0, 8.0)) * count * count
    hyper = HyperParams(float(rng.normal()), float(np.exp(rng.uniform(-1.0, 1.5))), phi2)
    y = rng.normal(scale=2.0, size=count)
    return hyper, x.reshape(-1, 1), y


def _conditioned_instance(rng, max_points=8, cond_cap=1e6):
    # Squared-exponential Gram matrices turn ill-conditioned fast; both
    # solve routes then diverge at cond * eps, which says nothing about
    # route equivalence.  Resample until the jittered matrix is decently
    # conditioned so the 1e-8 route comparison is meaningful.
    while True:
        hyper, x, y = _random_instance(rng, max_points)
        gram = kernel_matrix(hyper, x)
        jittered = gram + JITTER_LADDER[0] * hyper.phi1 ** 2 * np.eye(len(y))
        if np.linalg.cond(jittered) < cond_cap:
            return hyper, x, y


def test_posterior_matches_direct_inverse_oracle():
    # Direct-inverse oracle on the same jittered Gram matrix.  Near-zero
    # variances are differences of two nearly equal O(phi1^2) terms in
    # both computations, so the variance comparison is relative to the
    # prior-variance scale.
    rng = np.random.default_rng(101)
    for _ in range(100):
        hyper, x, y = _conditioned_instance(rng)
        post = fit_posterior(hyper, x, y)
        gram = kernel_matrix(hyper, x)
        jittered = gram + post.jitter_level * hyper.phi1 ** 2 * np.eye(len(y))
        inverse = np.linalg.inv(jittered)
        queries = rng.random((20, 1))
        k_q = kernel_matrix(hyper, queries, x)
        mean_oracle = hyper.theta + k_q @ inverse @ (y - hyper.theta)
        var_oracle = hyper.phi1 ** 2 - np.sum((k_q @ inverse) * k_q, axis=1)
        mean_scale = max(1.0, float(np.max(np.abs(y))), abs(hyper.theta))
        assert np.allclose(post.mean(queries), mean_oracle, rtol=1e-8, atol=1e-8 * mean_scale)
        assert np.allclose(
            post.var(queries),
            np.maximum(var_oracle, 0.0),
            rtol=1e-8,
            atol=1e-8 * hyper.phi1 ** 2,
        )


def test_posterior_interpolates_training_data():
    rng = np.random.default_rng(29)
    for _ in range(50):
        hyper, x, y = _interpolation_instance(rng)
        post = fit_posterior(hyper, x, y)
        means = post.mean(x)
        variances = post.var(x)
        assert np.all(np.abs(means - y) <= 1e-6 * (1.0 + np.abs(y)))
        assert np.all(variances <= 10.0 * post.jitter_level * hyper.phi1 ** 2)


def test_posterior_variance_never_exceeds_prior():
    rng = np.random.default_rng(31)
    for _ in range(20):
        hyper, x, y = _random_instance(rng, max_points=12)
        post = fit_posterior(hyper, x, y)
        queries = rng.random(200)
        assert np.all(post.var(queries) <= hyper.phi1 ** 2 + 1e-8)


def test_posterior_arrays_are_read_only():
    post = fit_posterior(HyperParams(0.0, 1.0, 1.0), [0.1, 0.9], [1.0, -1.0])
    with pytest.raises(ValueError):
        post.weights[0] = 5.0


# ---------------------------------------------------------------------------
# posterior_interval
# ---------------------------------------------------------------------------

def test_posterior_interval_with_no_data_reduces_to_prior():
    hyper = HyperParams(0.0, 1.0, 1.0)
    post = fit_posterior(hyper, np.zeros((0, 1)), [])
    interval = posterior_interval(post, 0.3, 1.64)
    prior = prior_interval(hyper, 0.3, 1.64)
    assert interval.lo == pytest.approx(prior.lo, abs=1e-15)
    assert interval.hi == pytest.approx(prior.hi, abs=1e-15)


def test_posterior_interval_collapses_at_datum():
    hyper = HyperParams(0.0, 1.0, 1.0)
    post = fit_posterior(hyper, [0.0], [2.0])
    interval = posterior_interval(post, 0.0, 1.64)
    assert interval.lo == pytest.approx(2.0, abs=1e-3)
    assert interval.hi == pytest.approx(2.0, abs=1e-3)
    assert interval.width <= 2 * 1.64 * math.sqrt(10.0 * post.jitter_level)


def test_posterior_interval_one_point_oracle():
    # Direct-inverse oracle for the 1-point case at x=1, q=1.
    hyper = HyperParams(0.0, 1.0, 1.0)
    post = fit_posterior(hyper, [0.0], [2.0])
    j = post.jitter_level
    mean_oracle = 2.0 * math.exp(-1.0) / (1.0 + j)
    sd_oracle = math.sqrt(1.0 - math.exp(-2.0) / (1.0 + j))
    interval = posterior_interval(post, 1.0, 1.0)
    assert interval.lo == pytest.approx(mean_oracle - sd_oracle, abs=1e-10)
    assert interval.hi == pytest.approx(mean_oracle + sd_oracle, abs=1e-10)
    assert interval.lo == pytest.approx(-0.194115, abs=1e-5)
    assert interval.hi == pytest.approx(1.665633, abs=1e-5)


def test_posterior_interval_monotone_in_q():
    rng = np.random.default_rng(37)
    hyper, x, y = _random_instance(rng)
    post = fit_posterior(hyper, x, y)
    for query in rng.random(10):
        small = posterior_interval(post, query, 0.7)
        large = posterior_interval(post, query, 1.9)
        assert large.lo <= small.lo and small.hi <= large.hi


# ---------------------------------------------------------------------------
# neg_mll
# ---------------------------------------------------------------------------

def test_neg_mll_single_zero_residual():
    # One point, zero residual, unit variance: 0.5 log(2 pi).
    value = neg_mll(HyperParams(0.0, 1.0, 1.0), [0.0], [0.0])
    assert value == pytest.approx(0.5 * math.log(2.0 * math.pi), abs=1e-6)


def test_neg_mll_single_point_gaussian_density():
    # Scalar Gaussian: 0.5 * 2^2 + 0.5 log(2 pi) = 2.918939...
    value = neg_mll(HyperParams(0.0, 1.0, 1.0), [0.0], [2.0])
    assert value == pytest.approx(2.0 + 0.5 * math.log(2.0 * math.pi), abs=1e-5)
    assert value == pytest.approx(2.918939, abs=1e-5)


def test_neg_mll_duplicate_points_need_jitter():
    hyper = HyperParams(0.0, 1.0, 1.0)
    x = [0.5, 0.5]
    y = [1.0, 1.0]
    with pytest.raises(NumericalError) as err:
        neg_mll(hyper, x, y, ladder=())
    assert err.value.jitter_levels == (0.0,)
    assert math.isfinite(neg_mll(hyper, x, y))


def test_neg_mll_matches_dense_oracle():
    # Independent oracle: slogdet plus explicit quadratic form.
    rng = np.random.default_rng(41)
    for _ in range(20):
        hyper, x, y = _separated_instance(rng, max_points=6)
        gram = kernel_matrix(hyper, x) + JITTER_LADDER[0] * hyper.phi1 ** 2 * np.eye(len(y))
        _, logdet = np.linalg.slogdet(gram)
        residual = y - hyper.theta
        oracle = 0.5 * float(residual @ np.linalg.solve(gram, residual))
        oracle += 0.5 * logdet + 0.5 * len(y) * math.log(2.0 * math.pi)
        assert neg_mll(hyper, x, y) == pytest.approx(oracle, rel=1e-10)


def _neg_mll_of_params(params, x, y):
    hyper = HyperParams.from_log(params[0], params[1], params[2])
    return neg_mll(hyper, x, y)


def test_neg_mll_gradient_richardson_consistency():
    # Central differences at step h agree with step h/2 to relative 1e-4.
    from trustbayes import fd_gradient

    rng = np.random.default_rng(43)
    step = 1e-5
    for _ in range(25):
        hyper, x, y = _separated_instance(rng, max_points=6)
        params = np.array([hyper.theta, hyper.log_phi1, hyper.log_phi2])
        grad_h = fd_gradient(lambda p: _neg_mll_of_params(p, x, y), params, step)
        grad_half = fd_gradient(lambda p: _neg_mll_of_params(p, x, y), params, step / 2.0)
        scale = max(float(np.linalg.norm(grad_half)), 1e-8)
        assert np.linalg.norm(grad_h - grad_half) <= 1e-4 * scale
