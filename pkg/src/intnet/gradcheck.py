"""Finite-difference verification of every op and of the end-to-end tagger loss."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, RngState, grad_check
from .crf import crf_log_partition, crf_nll, crf_score
from .data import TaggedSentence, TagSet, WordVocab, build_corpus, make_batch
from .encoders import CharEncoder, CharVocab, EncoderConfig, build_encoder, pad_words
from .lstm import LstmCell, lstm_step
from .tagger import SequenceTagger, TaggerConfig

OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4

FIXTURE_SENTENCE = TaggedSentence(["Obama", "visited", "Paris"], ["S-PER", "O", "S-LOC"])


def _away_from_zero(gen, shape, margin=0.05):
    x = gen.standard_normal(shape)
    return np.sign(x) * (np.abs(x) + margin)


def _distinct(gen, shape, gap=0.01):
    """Values whose pairwise gaps are at least ``gap`` (no max ties)."""
    n = int(np.prod(shape))
    return (gen.permutation(n) * gap * 10 + gen.uniform(0, gap, n)).reshape(shape) / n


def _head(out, gen):
    """Random linear scalar head so every output coordinate matters."""
    r = gen.standard_normal(out.shape)
    return lambda t: ad.sum_all(ad.mul_const(t, r))


def _check(build, params, eps=1e-5, max_coords=None, seed=0):
    return grad_check(build, params, eps=eps, max_coords=max_coords, rng=np.random.default_rng(seed))


def op_checks(seed=0, dtype=np.float64) -> dict:
    """Worst relative error for each primitive op on random kink-free inputs."""
    gen = np.random.default_rng(seed)
    P = lambda values, name: Parameter(np.asarray(values, dtype=dtype), name)
    results = {}

    for k in (1, 3, 4, 5):
        x = P(gen.standard_normal((2, 3, 6)), "x")
        w = P(gen.standard_normal((4, 3, k)), "w")
        b = P(gen.standard_normal(4), "b")
        head = _head(ad.conv1d(x, w, b), gen)
        results[f"conv1d_k{k}"] = _check(lambda: head(ad.conv1d(x, w, b)), [x, w, b])

    x = P(gen.standard_normal((3, 5)), "x")
    w = P(gen.standard_normal((4, 5)), "w")
    b = P(gen.standard_normal(4), "b")
    head = _head(ad.affine(x, w, b), gen)
    results["affine"] = _check(lambda: head(ad.affine(x, w, b)), [x, w, b])

    for kind in ("relu", "sigmoid", "tanh"):
        x = P(_away_from_zero(gen, (4, 5)), "x")
        head = _head(x, gen)
        results[kind] = _check(lambda: head(ad.activation(x, kind)), [x])

    for training in (True, False):
        x = P(gen.standard_normal((3, 4, 5)) * 2 + 1, "x")
        gamma = P(gen.uniform(0.5, 1.5, 4), "gamma")
        beta = P(gen.standard_normal(4), "beta")
        mask = np.ones((3, 5))
        mask[1, 3:] = 0
        stats = ad.RunningStats(4, dtype=dtype)
        stats.update(gen.standard_normal(4), gen.uniform(0.5, 2.0, 4))
        head = _head(x, gen)
        f = lambda: head(ad.batch_norm(x, gamma, beta, training, stats, mask))
        results[f"batch_norm_{'train' if training else 'eval'}"] = _check(f, [x, gamma, beta])

    a, b = P(gen.standard_normal((2, 4)), "a"), P(gen.standard_normal((3, 4)), "b")
    head = _head(ad.Tensor(np.zeros((5, 4))), gen)
    results["concat_channels"] = _check(lambda: head(ad.concat_channels([a, b])), [a, b])

    x = P(_distinct(gen, (3, 4, 6)), "x")
    lengths = np.array([6, 2, 4])
    head = _head(ad.Tensor(np.zeros((3, 4))), gen)
    results["max_over_time"] = _check(lambda: head(ad.max_over_time(x, lengths)), [x])

    x = P(gen.standard_normal((4, 5)), "x")
    head = _head(x, gen)
    f = lambda: head(ad.dropout(x, 0.5, True, np.random.default_rng(7)))
    results["dropout"] = _check(f, [x])

    table = P(gen.standard_normal((5, 6)), "table")
    ids = np.array([[0, 2, 2], [4, 1, 5]])
    head = _head(ad.Tensor(np.zeros((5, 2, 3))), gen)
    results["take"] = _check(lambda: head(ad.take(table, ids, axis=1)), [table])

    x = P(gen.standard_normal((3, 4, 2)), "x")
    rows, cols = np.arange(3)[:, None], np.array([[1, 0, 2, 3], [0, 1, 2, 3], [3, 2, 1, 0]])
    head = _head(x, gen)
    results["gather"] = _check(lambda: head(x[rows, cols]), [x])

    xs = [P(gen.standard_normal((2, 3)), f"s{i}") for i in range(3)]
    head = _head(ad.Tensor(np.zeros((2, 3, 3))), gen)
    results["stack"] = _check(lambda: head(ad.stack(xs, axis=1)), xs)

    a, b = P(gen.standard_normal((3, 4)), "a"), P(gen.standard_normal((3, 4)), "b")
    head = _head(a, gen)
    results["mul_add_sub"] = _check(lambda: head(ad.sub(ad.mul(a, b), ad.add(a, ad.scale(b, 0.3)))), [a, b])

    cell = LstmCell("cell", 5, 4, RngState(seed), dtype)
    for p in cell.parameters():
        p.values[...] = gen.standard_normal(p.shape) * 0.5
    z = P(gen.standard_normal((2, 5)), "z")
    h0 = P(gen.standard_normal((2, 4)) * 0.5, "h0")
    c0 = P(gen.standard_normal((2, 4)) * 0.5, "c0")
    head = _head(h0, gen)

    def lstm_loss():
        h, c = lstm_step(z, h0, c0, cell)
        h2, c2 = lstm_step(z, h, c, cell)
        return ad.add(head(h2), head(c2))

    results["lstm_step"] = _check(lstm_loss, [z, h0, c0] + cell.parameters())

    for T, K in ((1, 3), (4, 3), (5, 2)):
        e = P(gen.standard_normal((T, K)), "emissions")
        A = P(gen.standard_normal((K + 2, K + 2)), "transitions")
        tags = gen.integers(0, K, T).tolist()
        results[f"crf_score_T{T}K{K}"] = _check(lambda: crf_score(e, tags, A), [e, A])
        results[f"crf_log_partition_T{T}K{K}"] = _check(lambda: crf_log_partition(e, A), [e, A])
        results[f"crf_nll_T{T}K{K}"] = _check(lambda: crf_nll(e, tags, A), [e, A])
    return results


def _randomize_stats(module, gen):
    for _, s in module.named_stats():
        s.update(gen.standard_normal(s.mean.shape) * 0.1, gen.uniform(0.5, 1.5, s.mean.shape))


def encoder_checks(seed=0, dtype=np.float64, max_coords=25) -> dict:
    """Each character encoder plus a scalar head, eval mode, sampled coordinates."""
    gen = np.random.default_rng(seed + 1)
    words = ["Obama", "visited", "Paris", "11-month"]
    vocab = CharVocab.from_words(words)
    configs = {
        "intnet5": EncoderConfig(kind="intnet", layers=5),
        "char_lstm": EncoderConfig(kind="char_lstm", lstm_hidden=6),
        "char_cnn": EncoderConfig(kind="char_cnn"),
    }
    results = {}
    for name, cfg in configs.items():
        enc: CharEncoder = build_encoder(cfg, len(vocab), RngState(seed), dtype)
        _randomize_stats(enc, gen)
        ids, lengths = pad_words(words, vocab)
        r = gen.standard_normal((len(words), enc.output_dim))
        f = lambda: ad.sum_all(ad.mul_const(enc.forward(ids, lengths, training=False), r))
        results[name] = _check(f, enc.parameters(), max_coords=max_coords, seed=seed)
    return results


def build_fixture_model(seed=0, dtype=np.float64, hidden_size=8, encoder=None):
    """IntNet-5 + BiLSTM(H) + CRF over the 3-token fixture sentence (K=3 tags)."""
    corpus = build_corpus([FIXTURE_SENTENCE], task="ner")
    encoder = encoder or EncoderConfig(kind="intnet", layers=5)
    model = SequenceTagger(TaggerConfig(hidden_size=hidden_size, word_dim=5), encoder,
                           corpus.word_vocab, corpus.char_vocab, corpus.tag_set,
                           RngState(seed), dtype)
    gen = RngState(seed).generator("gradcheck/transitions")
    model.crf.transitions.values[...] = gen.standard_normal(model.crf.transitions.shape) * 0.5
    return model, corpus


def model_check(seed=0, dtype=np.float64, max_coords=25, report=None) -> float:
    """End-to-end NLL of the fixture model; BN statistics primed by one training pass."""
    model, corpus = build_fixture_model(seed, dtype)
    batch = make_batch(corpus.train)
    with ad.no_grad():
        model.loss(batch, training=True)
    f = lambda: model.loss(batch, training=False)
    return grad_check(f, model.parameters(), eps=1e-5, max_coords=max_coords,
                      rng=np.random.default_rng(seed), report=report)


def run_all(seed=0, dtype=np.float64) -> dict:
    """Everything the ``gradcheck`` command reports.

    Primitive ops are held to ``OP_TOLERANCE``; whole encoders and the
    tagger are compositions of many ops and are held to ``MODEL_TOLERANCE``.
    """
    ops = op_checks(seed, dtype)
    encoders = encoder_checks(seed, dtype)
    report = {}
    model_err = model_check(seed, dtype, report=report)
    worst_op = max(ops.values())
    worst_encoder = max(encoders.values())
    return {
        "ops": ops,
        "encoders": encoders,
        "worst_op": worst_op,
        "worst_encoder": worst_encoder,
        "model": model_err,
        "model_per_parameter": report.get("per_parameter", {}),
        "skipped_coordinates": report.get("skipped", 0),
        "passed": worst_op < OP_TOLERANCE and worst_encoder < MODEL_TOLERANCE and model_err < MODEL_TOLERANCE,
    }
