"""Linear-chain CRF over per-position tag scores.

The transition matrix has ``K + 2`` rows/columns: tags ``0..K-1``, a
virtual START (index ``K``) and STOP (index ``K + 1``). Transitions into
START and out of STOP are never read, so they act as masked entries and
always receive zero gradient.

``emissions`` below is a ``[T, K]`` matrix of tag scores ``w_y . h_t``.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from .autodiff import DimensionError, Tensor


class OracleSizeError(ValueError):
    pass


def _check(emissions: np.ndarray, transitions: np.ndarray):
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise DimensionError(f"emissions must be [T>=1, K], got {emissions.shape}")
    K = emissions.shape[1]
    if transitions.shape != (K + 2, K + 2):
        raise DimensionError(f"transitions must be {(K + 2, K + 2)}, got {transitions.shape}")
    return emissions.shape[0], K


def path_score(emissions, tags, transitions, use_stop=True) -> float:
    """Score of one tag path, summed left to right."""
    emissions = np.asarray(emissions)
    transitions = np.asarray(transitions)
    T, K = _check(emissions, transitions)
    if len(tags) != T:
        raise DimensionError(f"{len(tags)} tags for {T} positions")
    if any(not 0 <= y < K for y in tags):
        raise IndexError(f"tag index out of range 0..{K - 1}: {list(tags)}")
    start, stop = K, K + 1
    score = transitions[start, tags[0]] + emissions[0, tags[0]]
    for t in range(1, T):
        score += transitions[tags[t - 1], tags[t]] + emissions[t, tags[t]]
    if use_stop:
        score += transitions[tags[-1], stop]
    return float(score)


def forward_backward(emissions, transitions, use_stop=True):
    """Log-partition plus node and edge marginals.

    Returns ``(log_z, node [T, K], edge [T-1, K, K])``.
    """
    T, K = _check(emissions, transitions)
    A = transitions[:K, :K]
    start = transitions[K, :K]
    stop = transitions[:K, K + 1] if use_stop else np.zeros(K, dtype=emissions.dtype)
    alpha = np.empty((T, K), dtype=emissions.dtype)
    beta = np.empty((T, K), dtype=emissions.dtype)
    alpha[0] = start + emissions[0]
    for t in range(1, T):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + A, axis=0) + emissions[t]
    beta[T - 1] = stop
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(A + (emissions[t + 1] + beta[t + 1])[None, :], axis=1)
    log_z = float(logsumexp(alpha[T - 1] + stop))
    node = np.exp(alpha + beta - log_z)
    edge = np.exp(
        alpha[:-1, :, None] + A[None] + (emissions[1:] + beta[1:])[:, None, :] - log_z
    )
    return log_z, node, edge


def crf_score(emissions: Tensor, tags, transitions: Tensor, use_stop=True) -> Tensor:
    """Differentiable score ``f(h, y)`` of the gold path."""
    tags = [int(y) for y in tags]
    value = path_score(emissions.values, tags, transitions.values, use_stop)
    T, K = emissions.shape

    def _back(g):
        g = float(g)
        ge = np.zeros_like(emissions.values)
        ge[np.arange(T), tags] = g
        ga = np.zeros_like(transitions.values)
        ga[K, tags[0]] += g
        for t in range(1, T):
            ga[tags[t - 1], tags[t]] += g
        if use_stop:
            ga[tags[-1], K + 1] += g
        return ge, ga

    return ad.make_node(np.asarray(value, dtype=emissions.dtype), (emissions, transitions), _back)


def crf_log_partition(emissions: Tensor, transitions: Tensor, use_stop=True) -> Tensor:
    """``log sum_y exp f(h, y)`` via the forward algorithm; gradients are the marginals."""
    log_z, node, edge = forward_backward(emissions.values, transitions.values, use_stop)
    T, K = emissions.shape

    def _back(g):
        g = float(g)
        ga = np.zeros_like(transitions.values)
        ga[:K, :K] = g * edge.sum(axis=0)
        ga[K, :K] = g * node[0]
        if use_stop:
            ga[:K, K + 1] = g * node[T - 1]
        return g * node, ga

    return ad.make_node(np.asarray(log_z, dtype=emissions.dtype), (emissions, transitions), _back)


def crf_nll(emissions: Tensor, tags, transitions: Tensor, use_stop=True) -> Tensor:
    """Negative log-likelihood of the gold path, ``log Z - f(h, y)``."""
    return ad.sub(crf_log_partition(emissions, transitions, use_stop),
                  crf_score(emissions, tags, transitions, use_stop))


def viterbi(emissions, transitions, use_stop=True):
    """Best path and its score. Ties go to the lowest tag index.

    The returned score is recomputed with :func:`path_score`, so it is
    bit-identical to scoring the path directly.
    """
    emissions = np.asarray(emissions.values if isinstance(emissions, Tensor) else emissions)
    transitions = np.asarray(transitions.values if isinstance(transitions, Tensor) else transitions)
    T, K = _check(emissions, transitions)
    A = transitions[:K, :K]
    delta = transitions[K, :K] + emissions[0]
    backptr = np.zeros((T, K), dtype=np.intp)
    for t in range(1, T):
        cand = delta[:, None] + A
        backptr[t] = cand.argmax(axis=0)
        delta = cand.max(axis=0) + emissions[t]
    if use_stop:
        delta = delta + transitions[:K, K + 1]
    best = [int(delta.argmax())]
    for t in range(T - 1, 0, -1):
        best.append(int(backptr[t, best[-1]]))
    best.reverse()
    return best, path_score(emissions, best, transitions, use_stop)


def _all_paths(T, K):
    if K ** T > 10 ** 6:
        raise OracleSizeError(f"K^T = {K}^{T} exceeds the enumeration limit of 10^6")
    return itertools.product(range(K), repeat=T)


def brute_force_partition(emissions, transitions, use_stop=True) -> float:
    """Log-partition by enumerating every tag sequence (test oracle)."""
    emissions = np.asarray(emissions)
    T, K = _check(emissions, transitions)
    scores = [path_score(emissions, y, transitions, use_stop) for y in _all_paths(T, K)]
    return float(logsumexp(scores))


def brute_force_best(emissions, transitions, use_stop=True):
    """Highest-scoring path by enumeration; first path wins ties (lexicographic order)."""
    emissions = np.asarray(emissions)
    T, K = _check(emissions, transitions)
    best, best_score = None, -np.inf
    for y in _all_paths(T, K):
        s = path_score(emissions, y, transitions, use_stop)
        if s > best_score:
            best, best_score = list(y), s
    return best, best_score
