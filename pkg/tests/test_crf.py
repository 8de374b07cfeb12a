import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from intnet import autodiff as ad
from intnet.autodiff import DimensionError, Parameter, backward, grad_check
from intnet.crf import (OracleSizeError, brute_force_best, brute_force_partition, crf_log_partition, crf_nll,
                        crf_score, forward_backward, path_score, viterbi)

import oracles


def P(v, name="p"):
    return Parameter(np.asarray(v, dtype=np.float64), name)


def zeros_trans(K):
    return np.zeros((K + 2, K + 2))


def test_score_examples():
    assert crf_score(P([[1.0, 0.0]]), [0], P(zeros_trans(2))).item() == 1.0
    e = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert crf_score(P(e), [0, 1], P(zeros_trans(2))).item() == 2.0
    assert crf_score(P(np.zeros((3, 2))), [1, 0, 1], P(zeros_trans(2))).item() == 0.0


def test_score_reads_start_and_stop():
    K = 2
    A = zeros_trans(K)
    A[K, 1] = 0.25   # START -> 1
    A[1, 0] = 0.5
    A[0, K + 1] = 2.0  # 0 -> STOP
    e = np.zeros((2, K))
    assert path_score(e, [1, 0], A) == 2.75
    assert path_score(e, [1, 0], A, use_stop=False) == 0.75


def test_score_rejects_bad_tags():
    with pytest.raises(IndexError):
        crf_score(P(np.zeros((2, 2))), [0, 2], P(zeros_trans(2)))
    with pytest.raises(DimensionError):
        crf_score(P(np.zeros((2, 2))), [0], P(zeros_trans(2)))
    with pytest.raises(DimensionError):
        crf_log_partition(P(np.zeros((2, 2))), P(zeros_trans(3)))


def test_log_partition_examples():
    assert abs(crf_log_partition(P([[0.0, 0.0]]), P(zeros_trans(2))).item() - math.log(2)) < 1e-15
    A = zeros_trans(2)
    A[0, 0] = A[1, 1] = 0.5
    got = crf_log_partition(P([[1.0, 0.0], [0.0, 1.0]]), P(A)).item()
    assert abs(got - logsumexp([1.5, 2.0, 0.0, 1.5])) < 1e-14


def test_single_tag_nll_is_zero():
    gen = np.random.default_rng(0)
    e, A = gen.standard_normal((4, 1)), gen.standard_normal((3, 3))
    assert abs(crf_nll(P(e), [0, 0, 0, 0], P(A)).item()) < 1e-14
    assert brute_force_partition(e, A) == path_score(e, [0, 0, 0, 0], A)


def test_uniform_instance_nll():
    nll = crf_nll(P(np.zeros((3, 2))), [0, 1, 1], P(zeros_trans(2))).item()
    assert abs(nll - 3 * math.log(2)) < 1e-14


def test_viterbi_examples():
    tags, score = viterbi(np.array([[1.0, 0.0], [0.0, 1.0]]), zeros_trans(2))
    assert tags == [0, 1] and score == 2.0
    gen = np.random.default_rng(1)
    e = gen.standard_normal((6, 4)) * 100
    tags, _ = viterbi(e, gen.standard_normal((6, 6)) * 0.01)
    assert tags == e.argmax(axis=1).tolist()


def test_viterbi_tie_breaks_to_lowest_index():
    tags, score = viterbi(np.zeros((3, 3)), zeros_trans(3))
    assert tags == [0, 0, 0] and score == 0.0
    assert brute_force_best(np.zeros((3, 3)), zeros_trans(3))[0] == [0, 0, 0]


def _instance(seed):
    gen = np.random.default_rng(seed)
    K = int(gen.integers(1, 5))
    T = int(gen.integers(1, 7))
    return gen.standard_normal((T, K)), gen.standard_normal((K + 2, K + 2))


@pytest.mark.parametrize("use_stop", [True, False])
def test_dp_against_independent_enumeration(use_stop):
    for seed in range(60):
        e, A = _instance(seed)
        log_z, best, scored = oracles.crf_enumerate(e.tolist(), A.tolist(), use_stop)
        assert abs(crf_log_partition(P(e), P(A), use_stop).item() - log_z) < 1e-10
        tags, score = viterbi(e, A, use_stop)
        assert abs(score - best) < 1e-12
        assert abs(score - oracles.path_score(e.tolist(), tags, A.tolist(), use_stop)) < 1e-12


def test_package_oracles_agree_with_independent_enumeration():
    for seed in range(40):
        e, A = _instance(seed)
        log_z, best, _ = oracles.crf_enumerate(e.tolist(), A.tolist())
        assert abs(brute_force_partition(e, A) - log_z) < 1e-10
        assert abs(brute_force_best(e, A)[1] - best) < 1e-12


def test_oracle_size_limit():
    with pytest.raises(OracleSizeError):
        brute_force_partition(np.zeros((11, 4)), zeros_trans(4))


def test_marginals_are_distributions():
    e, A = np.random.default_rng(3).standard_normal((5, 3)), np.random.default_rng(4).standard_normal((5, 5))
    _, node, edge = forward_backward(e, A)
    np.testing.assert_allclose(node.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(edge.sum(axis=(1, 2)), 1.0, atol=1e-12)
    np.testing.assert_allclose(edge.sum(axis=2), node[:-1], atol=1e-12)


@given(st.integers(0, 10_000), st.floats(-5, 5))
@settings(max_examples=40, deadline=None)
def test_shift_invariances(seed, c):
    e, A = _instance(seed)
    T, K = e.shape
    tags = viterbi(e, A)[0]
    t = seed % T
    shifted = e.copy()
    shifted[t] += c
    assert viterbi(shifted, A)[0] == tags
    # a constant on every transition shifts every path by the same amount
    A2 = A + c
    y = list(np.random.default_rng(seed).integers(0, K, T))
    p1 = crf_score(P(e), y, P(A)).item() - crf_log_partition(P(e), P(A)).item()
    p2 = crf_score(P(e), y, P(A2)).item() - crf_log_partition(P(e), P(A2)).item()
    assert abs(p1 - p2) < 1e-9


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_nll_non_negative(seed):
    e, A = _instance(seed)
    y = list(np.random.default_rng(seed).integers(0, e.shape[1], e.shape[0]))
    assert crf_nll(P(e), y, P(A)).item() >= -1e-12


def test_gradients_match_finite_differences():
    for seed in range(6):
        e, A = _instance(seed + 100)
        pe, pA = P(e, "e"), P(A, "A")
        y = list(np.random.default_rng(seed).integers(0, e.shape[1], e.shape[0]))
        assert grad_check(lambda: crf_nll(pe, y, pA), [pe, pA]) < 1e-8


def test_masked_transition_entries_get_no_gradient():
    gen = np.random.default_rng(8)
    K = 3
    pe, pA = P(gen.standard_normal((4, K)), "e"), P(gen.standard_normal((K + 2, K + 2)), "A")
    backward(crf_nll(pe, [0, 2, 1, 1], pA))
    assert np.all(pA.grad[:, K] == 0)       # into START
    assert np.all(pA.grad[K + 1, :] == 0)   # out of STOP
    assert pA.grad[K, K + 1] == 0           # START -> STOP (empty path)


def test_no_stop_leaves_stop_column_untouched():
    gen = np.random.default_rng(9)
    pe, pA = P(gen.standard_normal((3, 2)), "e"), P(gen.standard_normal((4, 4)), "A")
    backward(crf_nll(pe, [0, 1, 1], pA, use_stop=False))
    assert np.all(pA.grad[:, 3] == 0)
