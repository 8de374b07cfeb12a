"""Entity-level F1, token accuracy, OOV breakdown and nearest-neighbour probes."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Container, Sequence

import numpy as np

from .data import from_bioes

CATEGORIES = ("IV", "OOTV", "OOEV", "OOBV")
# an entity takes the category of its least-covered word
_RARITY = {c: i for i, c in enumerate(CATEGORIES)}


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _check_aligned(pred, gold):
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted sentences vs {len(gold)} gold")
    for i, (p, g) in enumerate(zip(pred, gold)):
        if len(p) != len(g):
            raise ValueError(f"sentence {i}: {len(p)} predicted labels vs {len(g)} gold")


def _prf(correct, n_pred, n_gold):
    precision = correct / n_pred if n_pred else 0.0
    recall = correct / n_gold if n_gold else 0.0
    return precision, recall, _f1(precision, recall)


def entity_f1(pred: Sequence[Sequence[str]], gold: Sequence[Sequence[str]]) -> dict:
    """Micro-averaged exact-match span precision/recall/F1 over BIOES sequences."""
    _check_aligned(pred, gold)
    correct = n_pred = n_gold = repairs = 0
    for p, g in zip(pred, gold):
        p_spans, r = from_bioes(p)
        g_spans, _ = from_bioes(g)
        repairs += r
        gs = set(g_spans)
        n_pred += len(p_spans)
        n_gold += len(g_spans)
        correct += sum(1 for s in set(p_spans) if s in gs)
    precision, recall, f1 = _prf(correct, n_pred, n_gold)
    return {"precision": precision, "recall": recall, "f1": f1, "correct": correct,
            "predicted": n_pred, "gold": n_gold, "repair_count": repairs}


def token_accuracy(pred: Sequence[Sequence[str]], gold: Sequence[Sequence[str]]) -> float:
    _check_aligned(pred, gold)
    total = sum(len(g) for g in gold)
    if total == 0:
        raise ValueError("token accuracy of an empty corpus is undefined")
    hits = sum(a == b for p, g in zip(pred, gold) for a, b in zip(p, g))
    return hits / total


def oov_category(word: str, train_vocab: Container[str], embedding_vocab: Container[str]) -> str:
    """IV (in both), OOTV (embeddings only), OOEV (training only) or OOBV (neither)."""
    in_train = word in train_vocab
    in_emb = word in embedding_vocab
    if in_train and in_emb:
        return "IV"
    if in_emb:
        return "OOTV"
    if in_train:
        return "OOEV"
    return "OOBV"


def span_category(tokens, span, train_vocab, embedding_vocab) -> str:
    cats = [oov_category(tokens[i], train_vocab, embedding_vocab) for i in range(span.start, span.end + 1)]
    return max(cats, key=_RARITY.__getitem__)


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    token_accuracy: float
    categories: dict = field(default_factory=dict)
    repair_count: int = 0
    sentences: int = 0

    def to_dict(self):
        return asdict(self)


def evaluate(tokens: Sequence[Sequence[str]], gold, pred, task="ner",
             train_vocab: Container[str] = frozenset(), embedding_vocab: Container[str] = frozenset()) -> EvalReport:
    """Full report. For NER/chunking the category breakdown is per-category
    entity F1; for POS it is per-category token accuracy."""
    _check_aligned(pred, gold)
    acc = token_accuracy(pred, gold)
    categories = {}
    if task == "pos":
        hits = {c: [0, 0] for c in CATEGORIES}
        for toks, p, g in zip(tokens, pred, gold):
            for w, a, b in zip(toks, p, g):
                c = oov_category(w, train_vocab, embedding_vocab)
                hits[c][0] += a == b
                hits[c][1] += 1
        categories = {c: (h / n if n else None) for c, (h, n) in hits.items()}
        return EvalReport(acc, acc, acc, acc, categories, 0, len(gold))

    ent = entity_f1(pred, gold)
    counts = {c: [0, 0, 0] for c in CATEGORIES}  # correct, predicted, gold
    for toks, p, g in zip(tokens, pred, gold):
        p_spans = set(from_bioes(p)[0])
        g_spans = set(from_bioes(g)[0])
        for s in p_spans:
            c = span_category(toks, s, train_vocab, embedding_vocab)
            counts[c][1] += 1
            counts[c][0] += s in g_spans
        for s in g_spans:
            counts[span_category(toks, s, train_vocab, embedding_vocab)][2] += 1
    for c, (corr, n_pred, n_gold) in counts.items():
        categories[c] = None if n_gold == 0 and n_pred == 0 else _prf(corr, n_pred, n_gold)[2]
    return EvalReport(ent["precision"], ent["recall"], ent["f1"], acc, categories,
                      ent["repair_count"], len(gold))


def nearest_neighbors(query: str, candidates: Sequence[str], encode: Callable[[list], np.ndarray], k: int):
    """Top-``k`` candidates by cosine similarity of their encodings to the query's.

    ``encode`` maps a list of words to an ``[n, u]`` array. The query is
    never returned; zero vectors are skipped with a warning; equal
    similarities are ordered alphabetically.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    pool = sorted({w for w in candidates if w != query})
    vecs = encode([query] + pool)
    q, rest = vecs[0], vecs[1:]
    qn = np.linalg.norm(q)
    if qn == 0:
        warnings.warn(f"query {query!r} encodes to the zero vector; no neighbours", RuntimeWarning)
        return []
    norms = np.linalg.norm(rest, axis=1)
    zero = norms == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} candidate(s) encode to the zero vector and are skipped", RuntimeWarning)
    sims = rest @ q / np.where(zero, 1.0, norms) / qn
    scored = [(float(s), w) for s, w, z in zip(sims, pool, zero) if not z]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(w, s) for s, w in scored[:k]]
