"""Task distribution, function evaluation, and dataset persistence."""

import math

import numpy as np
import pytest

from trustbayes import InputError, MetaDataset, Task, TaskData, eval_task, gen_meta_dataset, load_dataset, sample_task, save_dataset, task_rng
from trustbayes.tasks import MIX_D, NS_TEST, N_SINUSOIDS


def _quadratic_task(d=10.0):
    coeffs = np.zeros((N_SINUSOIDS, 5))
    return Task(d=d, alpha=1, coeffs=coeffs)


# ---------------------------------------------------------------------------
# sample_task
# ---------------------------------------------------------------------------

def test_sample_task_deterministic_per_stream():
    one = sample_task(task_rng(123, 7))
    two = sample_task(task_rng(123, 7))
    assert one.d == two.d
    assert one.alpha == two.alpha
    assert np.array_equal(one.coeffs, two.coeffs)
    other = sample_task(task_rng(123, 8))
    assert not np.array_equal(one.coeffs, other.coeffs)


def test_sample_task_quadratic_coefficient_moments():
    # Monte Carlo moment check: the mean of d must sit near the mixture
    # of component means at the observed component frequencies, within
    # three standard errors.
    rng = task_rng(2024, 0)
    draws = np.array([sample_task(rng).d for _ in range(10_000)])
    frac_high = float(np.mean(draws > 0))
    expected = MIX_D[0] * (1.0 - frac_high) + MIX_D[2] * frac_high
    stderr = float(np.std(draws)) / math.sqrt(draws.size)
    assert abs(float(np.mean(draws)) - expected) <= 3.0 * stderr
    # Component standard deviations are 1, so spread within a component
    # is small relative to the separation of -10 and 10.
    assert np.std(draws[draws > 0]) == pytest.approx(1.0, abs=0.05)


def test_sample_task_alpha_is_fair_coin():
    rng = task_rng(99, 0)
    alphas = np.array([sample_task(rng).alpha for _ in range(10_000)])
    assert set(np.unique(alphas)) <= {0, 1}
    assert abs(float(np.mean(alphas)) - 0.5) <= 0.015


# ---------------------------------------------------------------------------
# eval_task
# ---------------------------------------------------------------------------

def test_eval_task_pure_quadratic():
    assert eval_task(_quadratic_task(10.0), 0.5) == pytest.approx(2.5, rel=1e-15)


def test_eval_task_single_sinusoid():
    coeffs = np.zeros((N_SINUSOIDS, 5))
    coeffs[0] = [1.0, 0.0, math.pi, 0.0, 0.0]  # a=1, w=pi, beta=0
    task = Task(d=0.0, alpha=1, coeffs=coeffs)
    assert eval_task(task, 0.5) == pytest.approx(1.0, rel=1e-12)


def test_eval_task_at_zero_matches_term_sum_oracle():
    # Brute-force term-by-term oracle with the literal alpha weighting.
    for seed in range(5):
        task = sample_task(task_rng(55, seed))
        oracle = 0.0
        for m in range(N_SINUSOIDS):
            a, b, w, u, beta = task.coeffs[m]
            oracle += task.alpha * a * math.sin(beta) + (1 - task.alpha) * b * math.sin(beta)
        assert eval_task(task, 0.0) == pytest.approx(oracle, rel=1e-12, abs=1e-12)


def test_eval_task_vectorized_matches_scalar():
    # Same-shape recomputation is exact (see the gen test); scalar and
    # vector calls may differ in summation order, hence the tolerance.
    task = sample_task(task_rng(17, 3))
    xs = np.linspace(0.0, 1.0, 13)
    vec = eval_task(task, xs)
    for i, x in enumerate(xs):
        assert vec[i] == pytest.approx(eval_task(task, float(x)), rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# gen_meta_dataset
# ---------------------------------------------------------------------------

def test_gen_paper_shape():
    meta = gen_meta_dataset(20, 20, 100, seed=1)
    assert meta.n == 20
    for _, data in meta.tasks:
        assert data.inputs.shape == (120, 1)
        assert data.t_tr == 20
        assert data.t_eval == 100


def test_gen_minimal_dataset():
    meta = gen_meta_dataset(1, 0, 1, seed=5)
    task, data = meta.tasks[0]
    assert data.t_tr == 0 and data.t_eval == 1
    assert data.outputs[0] == eval_task(task, data.inputs[0, 0])


def test_gen_rejects_bad_counts():
    with pytest.raises(InputError):
        gen_meta_dataset(0, 1, 1, seed=0)
    with pytest.raises(InputError):
        gen_meta_dataset(1, -1, 1, seed=0)
    with pytest.raises(InputError):
        gen_meta_dataset(1, 1, 0, seed=0)
    with pytest.raises(InputError):
        gen_meta_dataset(1, 1, 1, seed=0, n_x=2)


def test_gen_is_deterministic_and_thread_independent():
    a = gen_meta_dataset(12, 3, 9, seed=77)
    b = gen_meta_dataset(12, 3, 9, seed=77, threads=4)
    for (ta, da), (tb, db) in zip(a.tasks, b.tasks):
        assert ta.d == tb.d and ta.alpha == tb.alpha
        assert np.array_equal(ta.coeffs, tb.coeffs)
        assert np.array_equal(da.inputs, db.inputs)
        assert np.array_equal(da.outputs, db.outputs)


def test_gen_outputs_are_exact_function_values():
    meta = gen_meta_dataset(8, 4, 6, seed=3)
    for task, data in meta.tasks:
        again = eval_task(task, data.inputs[:, 0])
        assert np.array_equal(again, data.outputs)
        assert np.all(data.inputs >= 0.0) and np.all(data.inputs <= 1.0)


def test_task_content_independent_of_generation_order():
    # Task 5 of a 10-task dataset equals task 5 of a 6-task dataset.
    big = gen_meta_dataset(10, 2, 4, seed=31)
    small = gen_meta_dataset(6, 2, 4, seed=31)
    t_big, d_big = big.tasks[5]
    t_small, d_small = small.tasks[5]
    assert np.array_equal(t_big.coeffs, t_small.coeffs)
    assert np.array_equal(d_big.inputs, d_small.inputs)
    assert np.array_equal(d_big.outputs, d_small.outputs)


def test_namespaces_are_disjoint():
    train = gen_meta_dataset(3, 2, 4, seed=11)
    test = gen_meta_dataset(3, 2, 4, seed=11, namespace=NS_TEST)
    assert not np.array_equal(train.tasks[0][0].coeffs, test.tasks[0][0].coeffs)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_save_load_round_trip_is_exact(tmp_path):
    meta = gen_meta_dataset(7, 3, 5, seed=13)
    path = tmp_path / "dataset.jsonl"
    save_dataset(meta, path)
    again = load_dataset(path, seed=13)
    assert again.n == meta.n
    for (ta, da), (tb, db) in zip(meta.tasks, again.tasks):
        assert ta.d == tb.d and ta.alpha == tb.alpha
        assert np.array_equal(ta.coeffs, tb.coeffs)
        assert np.array_equal(da.inputs, db.inputs)
        assert np.array_equal(da.outputs, db.outputs)
        assert da.t_tr == db.t_tr


def test_save_is_byte_deterministic(tmp_path):
    meta = gen_meta_dataset(5, 2, 3, seed=21)
    path_a = tmp_path / "a.jsonl"
    path_b = tmp_path / "b.jsonl"
    save_dataset(meta, path_a)
    save_dataset(gen_meta_dataset(5, 2, 3, seed=21), path_b)
    assert path_a.read_bytes() == path_b.read_bytes()


def test_load_rejects_corrupted_outputs(tmp_path):
    import json

    meta = gen_meta_dataset(2, 1, 2, seed=2)
    path = tmp_path / "broken.jsonl"
    save_dataset(meta, path)
    record = json.loads(path.read_text().splitlines()[0])
    record["y"][0] = record["y"][0] + 1.0
    path.write_text(json.dumps(record) + "\n")
    with pytest.raises(InputError):
        load_dataset(path)


def test_load_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"task_id": 0\n')
    with pytest.raises(InputError, match="line 1"):
        load_dataset(path)


def test_load_rejects_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(InputError):
        load_dataset(path)


# ---------------------------------------------------------------------------
# type invariants
# ---------------------------------------------------------------------------

def test_task_validation():
    with pytest.raises(InputError):
        Task(d=0.0, alpha=2, coeffs=np.zeros((N_SINUSOIDS, 5)))
    with pytest.raises(InputError):
        Task(d=0.0, alpha=1, coeffs=np.zeros((3, 5)))
    with pytest.raises(InputError):
        Task(d=float("inf"), alpha=1, coeffs=np.zeros((N_SINUSOIDS, 5)))


def test_task_data_validation():
    with pytest.raises(InputError):
        TaskData(task_id=0, inputs=np.array([[1.5]]), outputs=np.array([0.0]), t_tr=0)
    with pytest.raises(InputError):
        TaskData(task_id=0, inputs=np.array([[0.5]]), outputs=np.array([0.0]), t_tr=2)


def test_meta_dataset_requires_contiguous_ids():
    meta = gen_meta_dataset(3, 1, 2, seed=1)
    shuffled = (meta.tasks[1], meta.tasks[0], meta.tasks[2])
    with pytest.raises(InputError):
        MetaDataset(tasks=shuffled, seed=1)
