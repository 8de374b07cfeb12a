import numpy as np
import pytest

from intnet.data import spans_to_bioes
from intnet.evaluation import entity_f1, evaluate, nearest_neighbors, oov_category, token_accuracy

import oracles
from test_data import random_layout


def _random_bioes(gen, n):
    return spans_to_bioes(random_layout(gen, n), n)


def test_entity_f1_matches_bruteforce():
    gen = np.random.default_rng(0)
    for _ in range(100):
        lengths = gen.integers(1, 10, size=int(gen.integers(1, 5)))
        gold = [_random_bioes(gen, int(n)) for n in lengths]
        pred = [_random_bioes(gen, int(n)) for n in lengths]
        got = entity_f1(pred, gold)
        p, r, f = oracles.f1_bruteforce(pred, gold)
        assert abs(got["precision"] - p) < 1e-15 and abs(got["recall"] - r) < 1e-15
        assert abs(got["f1"] - f) < 1e-15


def test_entity_f1_examples():
    gold = [["B-PER", "E-PER", "O", "S-LOC"]]
    pred = [["B-PER", "E-PER", "O", "S-ORG"]]
    m = entity_f1(pred, gold)
    assert m["precision"] == m["recall"] == m["f1"] == 0.5
    m = entity_f1([["O", "O"]], [["S-PER", "O"]])
    assert m["precision"] == 0.0 and m["recall"] == 0.0 and m["f1"] == 0.0
    assert entity_f1(gold, gold)["f1"] == 1.0
    # a boundary error is a miss, not partial credit
    assert entity_f1([["S-PER", "S-PER"]], [["B-PER", "E-PER"]])["f1"] == 0.0


def test_entity_f1_counts_repairs_and_rejects_misalignment():
    m = entity_f1([["I-PER", "E-PER"]], [["B-PER", "E-PER"]])
    assert m["repair_count"] == 1 and m["f1"] == 1.0
    with pytest.raises(ValueError):
        entity_f1([["O"]], [["O", "O"]])


def test_token_accuracy():
    assert token_accuracy([["A", "B"], ["C", "D"]], [["A", "B"], ["C", "X"]]) == 0.75
    with pytest.raises(ValueError):
        token_accuracy([], [])


def test_oov_categories():
    train, emb = {"Paris", "xyzzy"}, {"Paris", "Berlin"}
    assert oov_category("Paris", train, emb) == "IV"
    assert oov_category("Berlin", train, emb) == "OOTV"
    assert oov_category("xyzzy", train, emb) == "OOEV"
    assert oov_category("qwop", train, emb) == "OOBV"


def test_evaluate_breakdown_uses_rarest_word():
    tokens = [["New", "qwop", "Paris"]]
    gold = [["B-LOC", "E-LOC", "S-LOC"]]
    report = evaluate(tokens, gold, gold, train_vocab={"New", "Paris"}, embedding_vocab={"New", "Paris"})
    assert report.categories["OOBV"] == 1.0 and report.categories["IV"] == 1.0
    assert report.categories["OOTV"] is None
    pos = evaluate([["a", "b"]], [["DT", "NN"]], [["DT", "VB"]], task="pos", train_vocab={"a"})
    assert pos.token_accuracy == 0.5 and pos.categories["OOEV"] == 1.0 and pos.categories["OOBV"] == 0.0


def _table_encoder(table):
    return lambda words: np.array([table[w] for w in words], dtype=float)


def test_nearest_neighbors_ranking_and_ties():
    table = {"q": [1, 0], "b": [1, 0], "a": [2, 0], "c": [0, 1], "d": [1, 1]}
    got = nearest_neighbors("q", ["q", "c", "b", "a", "d"], _table_encoder(table), 3)
    assert [w for w, _ in got] == ["a", "b", "d"]
    assert got[0][1] == pytest.approx(1.0) and got[2][1] == pytest.approx(np.sqrt(0.5))
    with pytest.raises(ValueError):
        nearest_neighbors("q", ["a"], _table_encoder(table), 0)


def test_nearest_neighbors_zero_vectors_warn():
    table = {"q": [1, 0], "z": [0, 0], "a": [1, 1]}
    with pytest.warns(RuntimeWarning):
        got = nearest_neighbors("q", ["z", "a"], _table_encoder(table), 5)
    assert [w for w, _ in got] == ["a"]
    with pytest.warns(RuntimeWarning):
        assert nearest_neighbors("z", ["a"], _table_encoder(table), 1) == []
