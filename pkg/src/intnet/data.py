"""CoNLL column files, BIOES conversion, vocabularies, embeddings and batching."""

from __future__ import annotations

import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .encoders import CharVocab

UNKNOWN_WORD = "<UNKNOWN>"
BIOES_TASKS = ("ner", "chunk")
TASKS = ("ner", "chunk", "pos")


class ParseError(ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class EmptyCorpusError(ValueError):
    pass


class TagSetError(ValueError):
    pass


@dataclass
class TaggedSentence:
    tokens: list
    labels: list
    origin: tuple = ("<memory>", 0, 0)

    def __post_init__(self):
        if self.labels is None:
            self.labels = []
        if not self.tokens:
            raise ValueError("a sentence needs at least one token")
        if self.labels and len(self.labels) != len(self.tokens):
            raise ValueError("tokens and labels differ in length")

    def __len__(self):
        return len(self.tokens)


# ---------------------------------------------------------------------------
# CoNLL reading / writing


def parse_conll(lines: Iterable[str], token_column=0, label_column=-1, path="<stream>"):
    """Yield sentences from CoNLL-style lines one at a time.

    Blank lines separate sentences and ``-DOCSTART-`` lines are dropped.
    ``label_column=None`` reads tokens only (labels left empty).
    """
    tokens, labels, first, width = [], [], None, None
    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n").rstrip("\r")
        cols = line.split()
        if not cols:
            if tokens:
                yield TaggedSentence(tokens, labels, (str(path), first, lineno - 1))
            tokens, labels, first = [], [], None
            continue
        if cols[0] == "-DOCSTART-":
            continue
        if width is None:
            width = len(cols)
        elif len(cols) != width:
            raise ParseError(f"expected {width} columns, found {len(cols)}", path, lineno)
        try:
            tok = cols[token_column]
            lab = cols[label_column] if label_column is not None else None
        except IndexError:
            raise ParseError(f"line has only {len(cols)} columns", path, lineno) from None
        if first is None:
            first = lineno
        tokens.append(tok)
        if lab is not None:
            labels.append(lab)
    if tokens:
        yield TaggedSentence(tokens, labels, (str(path), first, lineno))


def read_conll(path, token_column=0, label_column=-1) -> list[TaggedSentence]:
    with open(path, encoding="utf-8", newline="") as fh:
        sentences = list(parse_conll(fh, token_column, label_column, path))
    if not sentences:
        raise EmptyCorpusError(f"{path}: no sentences found")
    return sentences


def write_conll(rows: Iterable[Sequence[Sequence[str]]], sep=" ") -> str:
    """Serialise sentences given as parallel columns, e.g. ``(tokens, labels)``."""
    out = io.StringIO()
    for columns in rows:
        for cells in zip(*columns):
            out.write(sep.join(cells) + "\n")
        out.write("\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# tagging schemes


class Span(NamedTuple):
    type: str
    start: int
    end: int  # inclusive


def split_label(label: str):
    if label == "O":
        return "O", None
    prefix, sep, kind = label.partition("-")
    if not sep or prefix not in ("B", "I", "E", "S") or not kind:
        return None, None
    return prefix, kind


def iob_spans(labels: Sequence[str]) -> list[Span]:
    """Entity spans of an IOB1, IOB2 or BIOES sequence.

    An ``I-X`` that does not continue an ``X`` span opens a new one
    (the IOB1 reading). Raises :class:`ParseError` on unknown prefixes.
    """
    spans, cur = [], None
    for i, label in enumerate(labels):
        prefix, kind = split_label(label)
        if prefix is None:
            raise ParseError(f"malformed label {label!r} at position {i}")
        if prefix == "I" and cur is not None and cur[0] == kind:
            continue
        if prefix == "E" and cur is not None and cur[0] == kind:
            spans.append(Span(kind, cur[1], i))
            cur = None
            continue
        if cur is not None:
            spans.append(Span(cur[0], cur[1], i - 1))
            cur = None
        if prefix in ("B", "I"):
            cur = (kind, i)
        elif prefix in ("E", "S"):
            spans.append(Span(kind, i, i))
    if cur is not None:
        spans.append(Span(cur[0], cur[1], len(labels) - 1))
    return spans


def spans_to_bioes(spans: Iterable[Span], length: int) -> list[str]:
    out = ["O"] * length
    for s in spans:
        if s.start == s.end:
            out[s.start] = f"S-{s.type}"
        else:
            out[s.start] = f"B-{s.type}"
            for i in range(s.start + 1, s.end):
                out[i] = f"I-{s.type}"
            out[s.end] = f"E-{s.type}"
    return out


def to_bioes(labels: Sequence[str]) -> list[str]:
    """Convert IOB1/IOB2 (or already-BIOES) labels to BIOES, keeping the span set."""
    return spans_to_bioes(iob_spans(labels), len(labels))


def from_bioes(labels: Sequence[str]):
    """Extract spans from a possibly inconsistent BIOES sequence.

    Returns ``(spans, repairs)``. Repairs: a stray ``I-``/``E-`` (no open
    span of its type) starts a span, and a span closed by anything other
    than its ``E-`` is cut before that token. Each counts once. Labels with
    an unknown prefix are read as ``O`` and also counted.
    """
    spans, cur, repairs = [], None, 0

    def close(end):
        nonlocal cur, repairs
        if cur is not None:
            spans.append(Span(cur[0], cur[1], end))
            repairs += 1
            cur = None

    for i, label in enumerate(labels):
        prefix, kind = split_label(label)
        if prefix is None:
            repairs += 1
            prefix = "O"
        if prefix == "O":
            close(i - 1)
        elif prefix == "B":
            close(i - 1)
            cur = (kind, i)
        elif prefix == "I":
            if cur is not None and cur[0] == kind:
                continue
            close(i - 1)
            repairs += 1
            cur = (kind, i)
        elif prefix == "E":
            if cur is not None and cur[0] == kind:
                spans.append(Span(kind, cur[1], i))
                cur = None
                continue
            close(i - 1)
            repairs += 1
            spans.append(Span(kind, i, i))
        else:  # S
            close(i - 1)
            spans.append(Span(kind, i, i))
    close(len(labels) - 1)
    return spans, repairs


def is_bioes_consistent(labels: Sequence[str]) -> bool:
    """True if the sequence parses as BIOES without any repair."""
    if any(split_label(label)[0] is None for label in labels):
        return False
    return from_bioes(labels)[1] == 0


# ---------------------------------------------------------------------------
# vocabularies and tag sets


class WordVocab:
    """Surface forms in first-seen order; index 0 is the unknown word."""

    def __init__(self, words: Iterable[str] = ()):
        self.words = [UNKNOWN_WORD]
        self.index = {UNKNOWN_WORD: 0}
        for w in words:
            self.add(w)

    def add(self, word):
        if word not in self.index:
            self.index[word] = len(self.words)
            self.words.append(word)

    def lookup(self, word) -> int:
        return self.index.get(word, 0)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index


class TagSet:
    def __init__(self, labels: Iterable[str]):
        self.labels = []
        self.index = {}
        for label in labels:
            if label not in self.index:
                self.index[label] = len(self.labels)
                self.labels.append(label)

    def encode(self, labels: Sequence[str]) -> list[int]:
        try:
            return [self.index[y] for y in labels]
        except KeyError as e:
            raise TagSetError(f"label {e.args[0]!r} is not in the tag set") from None

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.labels[i] for i in ids]

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self.index


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict
    unknown_vector: np.ndarray
    lowercase_fallback: bool = True

    def find(self, word):
        """Pretrained vector for ``word`` (exact match, then lowercased), or None."""
        vec = self.vectors.get(word)
        if vec is None and self.lowercase_fallback:
            vec = self.vectors.get(word.lower())
        return vec

    def lookup(self, word) -> np.ndarray:
        vec = self.find(word)
        return self.unknown_vector if vec is None else vec

    def __contains__(self, word):
        return self.find(word) is not None

    def __len__(self):
        return len(self.vectors)


def load_embeddings(path, expected_dim: int, rng: np.random.Generator | None = None,
                    lowercase_fallback=True) -> EmbeddingTable:
    """Read a word2vec/GloVe style text file: ``word v1 ... vd`` per line.

    A leading ``count dim`` header line is recognised and skipped.
    """
    vectors = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.rstrip("\r\n").rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                if int(parts[1]) != expected_dim:
                    raise ParseError(f"header declares dimension {parts[1]}, expected {expected_dim}", path, 1)
                continue
            if len(parts) - 1 != expected_dim:
                raise ParseError(f"expected {expected_dim} values, found {len(parts) - 1}", path, lineno)
            try:
                vectors[parts[0]] = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise ParseError("non-numeric vector entry", path, lineno) from None
    rng = rng or np.random.default_rng(0)
    bound = math.sqrt(3.0 / expected_dim)
    unknown = rng.uniform(-bound, bound, size=expected_dim)
    return EmbeddingTable(expected_dim, vectors, unknown, lowercase_fallback)


def embedding_matrix(vocab: WordVocab, table: EmbeddingTable, rng: np.random.Generator) -> np.ndarray:
    """Initial word table ``[|vocab|, dim]``.

    Row 0 is the table's unknown vector; words found in the file take
    their pretrained vector; every other word gets a fresh uniform draw.
    """
    bound = math.sqrt(3.0 / table.dim)
    fresh = rng.uniform(-bound, bound, size=(len(vocab), table.dim))
    out = np.empty((len(vocab), table.dim))
    out[0] = table.unknown_vector
    for i, w in enumerate(vocab.words[1:], start=1):
        vec = table.find(w)
        out[i] = fresh[i] if vec is None else vec
    return out


# ---------------------------------------------------------------------------
# corpus assembly


@dataclass
class Corpus:
    train: list
    dev: list
    test: list
    word_vocab: WordVocab
    char_vocab: CharVocab
    tag_set: TagSet
    task: str = "ner"
    train_words: set = field(default_factory=set)


def convert_labels(sentences: list[TaggedSentence], task: str) -> list[TaggedSentence]:
    """BIOES conversion for NER/chunking; POS labels pass through untouched."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if task not in BIOES_TASKS:
        return sentences
    out = []
    for s in sentences:
        try:
            labels = to_bioes(s.labels)
        except ParseError as e:
            path, first, _ = s.origin
            raise ParseError(str(e), path, first) from None
        out.append(TaggedSentence(s.tokens, labels, s.origin))
    return out


def build_corpus(train, dev=(), test=(), task="ner", embeddings: EmbeddingTable | None = None) -> Corpus:
    """Convert labels, build vocabularies from the training split and check the tag set.

    The word vocabulary holds every training word plus any dev/test word
    that has a pretrained vector, so those vectors are usable at test time.
    """
    train = convert_labels(list(train), task)
    dev = convert_labels(list(dev), task)
    test = convert_labels(list(test), task)
    if not train:
        raise EmptyCorpusError("training split is empty")
    tag_set = TagSet(y for s in train for y in s.labels)
    for name, split in (("dev", dev), ("test", test)):
        for s in split:
            unseen = [y for y in s.labels if y not in tag_set]
            if unseen:
                path, first, _ = s.origin
                raise TagSetError(f"{name} split ({path}:{first}) has labels unseen in training: {unseen}")
    train_words = [w for s in train for w in s.tokens]
    word_vocab = WordVocab(train_words)
    if embeddings is not None:
        for s in list(dev) + list(test):
            for w in s.tokens:
                if w in embeddings:
                    word_vocab.add(w)
    return Corpus(train, dev, test, word_vocab, CharVocab.from_words(train_words), tag_set,
                  task, set(train_words))


def sample_dev_split(sentences, n=1000, seed=1):
    """Hold out ``n`` random training sentences as a dev set (chunking has none)."""
    rng = np.random.default_rng(seed)
    picked = set(rng.choice(len(sentences), size=min(n, len(sentences)), replace=False).tolist())
    rest = [s for i, s in enumerate(sentences) if i not in picked]
    dev = [s for i, s in enumerate(sentences) if i in picked]
    return rest, dev


def corpus_stats(corpus: Corpus, embeddings: EmbeddingTable | None = None) -> dict:
    """Sentence/token counts, training tag histogram and OOV rates as plain JSON types."""
    stats = {
        "task": corpus.task,
        "sentences": {k: len(getattr(corpus, k)) for k in ("train", "dev", "test")},
        "tokens": {k: sum(len(s) for s in getattr(corpus, k)) for k in ("train", "dev", "test")},
        "tags": dict(sorted(Counter(y for s in corpus.train for y in s.labels).items())),
        "word_vocab_size": len(corpus.word_vocab),
        "char_vocab_size": len(corpus.char_vocab),
        "oov": {},
    }
    for split in ("dev", "test"):
        tokens = [w for s in getattr(corpus, split) for w in s.tokens]
        if not tokens:
            continue
        not_train = [w not in corpus.train_words for w in tokens]
        entry = {"out_of_training": sum(not_train) / len(tokens)}
        if embeddings is not None:
            not_emb = [w not in embeddings for w in tokens]
            entry["out_of_embeddings"] = sum(not_emb) / len(tokens)
            entry["out_of_both"] = sum(a and b for a, b in zip(not_train, not_emb)) / len(tokens)
        stats["oov"][split] = entry
    return stats


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    sentences: list
    indices: list
    lengths: np.ndarray
    token_mask: np.ndarray  # [B, T_max]
    char_lengths: np.ndarray  # [B, T_max], zero on padding

    def __len__(self):
        return len(self.sentences)


def make_batch(sentences, indices=None) -> Batch:
    lengths = np.array([len(s) for s in sentences], dtype=np.intp)
    T = int(lengths.max())
    mask = np.arange(T)[None, :] < lengths[:, None]
    char_lengths = np.zeros((len(sentences), T), dtype=np.intp)
    for b, s in enumerate(sentences):
        char_lengths[b, : len(s)] = [len(w) for w in s.tokens]
    return Batch(list(sentences), list(indices if indices is not None else range(len(sentences))),
                 lengths, mask, char_lengths)


def make_batches(sentences, batch_size=10, rng: np.random.Generator | None = None) -> list[Batch]:
    """Shuffle (when ``rng`` is given) and cut into batches; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(sentences))
    if rng is not None:
        order = rng.permutation(len(sentences))
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size].tolist()
        batches.append(make_batch([sentences[i] for i in idx], idx))
    return batches
