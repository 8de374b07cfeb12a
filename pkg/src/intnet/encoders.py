"""Character-to-word encoders: IntNet and the char-LSTM / char-CNN baselines.

All encoders consume a padded batch of character ids ``[N, T]`` plus the
true word lengths and return one fixed-size vector per word, ``[N, u]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ConfigError, EmptyWordError, RngState, Tensor
from .lstm import LstmCell, reverse_padded, run_lstm
from .module import Module, embedding_bound

PADDING = "<PADDING>"
UNKNOWN = "<UNKNOWN>"

ENCODER_KINDS = ("intnet", "char_lstm", "char_cnn", "none")


class CharVocab:
    """Raw characters (no case folding, no digit mapping) plus PADDING=0 and UNKNOWN=1."""

    def __init__(self, chars: Iterable[str] = ()):
        self.chars = [PADDING, UNKNOWN]
        self.index = {PADDING: 0, UNKNOWN: 1}
        for ch in chars:
            self.add(ch)

    def add(self, ch):
        if ch not in self.index:
            self.index[ch] = len(self.chars)
            self.chars.append(ch)

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "CharVocab":
        vocab = cls()
        for w in words:
            for ch in w:
                vocab.add(ch)
        return vocab

    def lookup(self, ch: str) -> int:
        return self.index.get(ch, 1)

    def encode(self, word: str) -> list[int]:
        if len(word) == 0:
            raise EmptyWordError("cannot encode an empty word")
        return [self.lookup(ch) for ch in word]

    def __len__(self):
        return len(self.chars)

    def __contains__(self, ch):
        return ch in self.index


def pad_words(words: Sequence[str], vocab: CharVocab):
    """Character ids padded with PADDING to the longest word, and the lengths."""
    encoded = [vocab.encode(w) for w in words]
    lengths = np.array([len(e) for e in encoded], dtype=np.intp)
    ids = np.zeros((len(words), int(lengths.max()) if len(words) else 0), dtype=np.intp)
    for i, e in enumerate(encoded):
        ids[i, : len(e)] = e
    return ids, lengths


@dataclass
class EncoderConfig:
    kind: str = "intnet"
    d_char: int = 32
    kernel_sizes: list = field(default_factory=lambda: [3, 4, 5])
    m0: int = 32
    m_block: int = 16
    layers: int = 5
    bottleneck_multiplier: int = 4
    lstm_hidden: int = 25
    cnn_filters: int = 30
    cnn_kernel: int = 3

    def validate(self) -> "EncoderConfig":
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        counts = [self.d_char, self.m0, self.m_block, self.bottleneck_multiplier,
                  self.lstm_hidden, self.cnn_filters, self.cnn_kernel]
        if any(int(c) < 1 for c in counts):
            raise ConfigError("encoder sizes must all be positive")
        if not self.kernel_sizes or any(int(k) < 1 for k in self.kernel_sizes):
            raise ConfigError("kernel_sizes must be a non-empty list of positive widths")
        if self.kind == "intnet" and (self.layers < 3 or self.layers % 2 == 0):
            raise ConfigError(f"IntNet needs an odd number of layers >= 3, got {self.layers}")
        return self

    @property
    def n_blocks(self) -> int:
        return (self.layers - 1) // 2

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def preset(cls, name: str) -> "EncoderConfig":
        """``intnet5``, ``intnet9``, ``charlstm``, ``charcnn`` or ``none``."""
        presets = {
            "intnet5": dict(kind="intnet", layers=5),
            "intnet9": dict(kind="intnet", layers=9),
            "charlstm": dict(kind="char_lstm"),
            "charcnn": dict(kind="char_cnn"),
            "none": dict(kind="none"),
        }
        if name not in presets:
            raise ConfigError(f"unknown encoder preset {name!r}")
        return cls(**presets[name])


def output_dim(config: EncoderConfig) -> int:
    """Size of the word vector produced by ``config``, computed without building anything."""
    config.validate()
    if config.kind == "intnet":
        h = len(config.kernel_sizes)
        p0 = config.m0 * h
        p = config.m_block * h
        return p0 + p * config.n_blocks
    if config.kind == "char_lstm":
        return 2 * config.lstm_hidden
    if config.kind == "char_cnn":
        return config.cnn_filters
    return 0


def _mask(lengths, T, dtype):
    return (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(dtype)


class CharEncoder(Module):
    """Shared plumbing: character table lookup and input dropout."""

    def __init__(self, config: EncoderConfig, n_chars: int, rng: RngState, prefix: str, dtype=ad.DEFAULT_DTYPE):
        super().__init__(prefix, rng, dtype)
        self.config = config.validate()
        self.table = self.param("char_embedding", (config.d_char, n_chars), "uniform",
                                bound=embedding_bound(config.d_char))

    @property
    def output_dim(self) -> int:
        return output_dim(self.config)

    def embed(self, char_ids, dropout_rate=0.0, training=False, rng=None) -> Tensor:
        """Look up columns of the character table: ``[N, T]`` ids to ``[N, d_char, T]``."""
        ids = np.asarray(char_ids, dtype=np.intp)
        x = ad.transpose(ad.take(self.table, ids, axis=1), (1, 0, 2))
        return ad.dropout(x, dropout_rate, training, rng)

    def forward(self, char_ids, lengths, training=False, rng=None, dropout_rate=0.0) -> Tensor:
        raise NotImplementedError

    def encode_words(self, words, vocab: CharVocab, training=False, rng=None, dropout_rate=0.0) -> Tensor:
        ids, lengths = pad_words(words, vocab)
        return self.forward(ids, lengths, training=training, rng=rng, dropout_rate=dropout_rate)

    def encode_word(self, word: str, vocab: CharVocab, training=False) -> Tensor:
        """Vector ``z`` of length ``u`` for a single word."""
        return self.encode_words([word], vocab, training=training)[0]


def embed_chars(word: str, vocab: CharVocab, table: Tensor) -> Tensor:
    """Columns of ``table`` for each character of ``word``: shape ``[d_char, n]``."""
    return ad.take(table, vocab.encode(word), axis=1)


class IntNetEncoder(CharEncoder):
    """Funnel-shaped wide CNN over characters with dense alternate-layer connections.

    Layer 0 is a bank of parallel convolutions (one per kernel width) with
    ReLU. Each of the ``(L-1)/2`` blocks sees the concatenation of layer 0
    and every previous block output, applies BN-ReLU and a width-1
    bottleneck convolution, then BN-ReLU-conv for every kernel width in
    parallel. The word vector is the max over time of all those maps.
    """

    def __init__(self, config, n_chars, rng, prefix="intnet", dtype=ad.DEFAULT_DTYPE):
        super().__init__(config, n_chars, rng, prefix, dtype)
        cfg = self.config
        h = len(cfg.kernel_sizes)
        self.p0 = cfg.m0 * h
        self.p = cfg.m_block * h
        self.bottleneck_width = cfg.bottleneck_multiplier * cfg.m_block * h

        self.initial = []
        for k in cfg.kernel_sizes:
            w = self.param(f"initial.k{k}.weight", (cfg.m0, cfg.d_char, k), "he_normal")
            b = self.param(f"initial.k{k}.bias", (cfg.m0,), "zeros")
            self.initial.append((w, b))

        self.blocks = []
        for j in range(1, cfg.n_blocks + 1):
            c_in = self.p0 + self.p * (j - 1)
            bw = self.bottleneck_width
            name = f"block{j}"
            block = {
                "bn_gamma": self.param(f"{name}.bn.gamma", (c_in,), "ones"),
                "bn_beta": self.param(f"{name}.bn.beta", (c_in,), "zeros"),
                "bn_stats": self.stats(f"{name}.bn", c_in),
                "bottleneck_w": self.param(f"{name}.bottleneck.weight", (bw, c_in, 1), "he_normal"),
                "bottleneck_b": self.param(f"{name}.bottleneck.bias", (bw,), "zeros"),
                "branches": [],
            }
            for k in cfg.kernel_sizes:
                block["branches"].append({
                    "bn_gamma": self.param(f"{name}.k{k}.bn.gamma", (bw,), "ones"),
                    "bn_beta": self.param(f"{name}.k{k}.bn.beta", (bw,), "zeros"),
                    "bn_stats": self.stats(f"{name}.k{k}.bn", bw),
                    "w": self.param(f"{name}.k{k}.weight", (cfg.m_block, bw, k), "he_normal"),
                    "b": self.param(f"{name}.k{k}.bias", (cfg.m_block,), "zeros"),
                })
            self.blocks.append(block)

    def initial_conv(self, x: Tensor, mask=None) -> Tensor:
        """``[N, d_char, T]`` (padding zeroed) to ``g0`` of shape ``[N, p0, T]``.

        With ``mask`` (``[N, T]``) padded positions of ``g0`` are exactly zero.
        """
        maps = []
        for w, b in self.initial:
            c = ad.conv1d(x, w, b)
            if mask is not None:
                c = ad.mul_const(c, mask[:, None, :])
            maps.append(ad.relu(c))
        return ad.concat_channels(maps)

    def conv_block(self, j: int, carry: Tensor, mask, training: bool) -> Tensor:
        """Block ``j`` (1-based) on the concatenated carry ``[N, C, T]``; returns ``[N, p, T]``."""
        block = self.blocks[j - 1]
        m3 = mask[:, None, :]
        a = ad.batch_norm(carry, block["bn_gamma"], block["bn_beta"], training, block["bn_stats"], mask)
        a = ad.relu(ad.mul_const(a, m3))
        squeezed = ad.conv1d(a, block["bottleneck_w"], block["bottleneck_b"])
        outs = []
        for br in block["branches"]:
            r = ad.batch_norm(squeezed, br["bn_gamma"], br["bn_beta"], training, br["bn_stats"], mask)
            r = ad.relu(ad.mul_const(r, m3))
            outs.append(ad.conv1d(r, br["w"], br["b"]))
        return ad.concat_channels(outs)

    def feature_maps(self, char_ids, lengths, training=False, rng=None, dropout_rate=0.0, ablate=()):
        """Layer outputs ``[g0, g2, ..., g_{L-1}]`` before pooling.

        ``ablate`` lists layer indices (0, 2, 4, ...) whose maps are zeroed
        wherever they are consumed; it exists for probing the connections.
        """
        ids = np.asarray(char_ids, dtype=np.intp)
        lengths = np.asarray(lengths, dtype=np.intp)
        if np.any(lengths < 1):
            raise EmptyWordError("IntNet cannot encode an empty word")
        mask = _mask(lengths, ids.shape[1], self.dtype)
        x = ad.mul_const(self.embed(ids, dropout_rate, training, rng), mask[:, None, :])

        def _maybe_ablate(layer, g):
            return ad.mul_const(g, 0.0) if layer in ablate else g

        maps = [_maybe_ablate(0, self.initial_conv(x, mask))]
        for j in range(1, self.config.n_blocks + 1):
            carry = ad.concat_channels(maps) if len(maps) > 1 else maps[0]
            maps.append(_maybe_ablate(2 * j, self.conv_block(j, carry, mask, training)))
        return maps

    def forward(self, char_ids, lengths, training=False, rng=None, dropout_rate=0.0, ablate=()) -> Tensor:
        maps = self.feature_maps(char_ids, lengths, training, rng, dropout_rate, ablate)
        return ad.max_over_time(ad.concat_channels(maps), lengths)


class CharLSTMEncoder(CharEncoder):
    """Bidirectional LSTM over characters; ``z`` is the two final states concatenated."""

    def __init__(self, config, n_chars, rng, prefix="charlstm", dtype=ad.DEFAULT_DTYPE):
        super().__init__(config, n_chars, rng, prefix, dtype)
        H = self.config.lstm_hidden
        self.fwd = self.child(LstmCell(f"{prefix}.fwd", self.config.d_char, H, rng, dtype))
        self.bwd = self.child(LstmCell(f"{prefix}.bwd", self.config.d_char, H, rng, dtype))

    def forward(self, char_ids, lengths, training=False, rng=None, dropout_rate=0.0) -> Tensor:
        ids = np.asarray(char_ids, dtype=np.intp)
        lengths = np.asarray(lengths, dtype=np.intp)
        if np.any(lengths < 1):
            raise EmptyWordError("char-LSTM cannot encode an empty word")
        x = ad.transpose(self.embed(ids, dropout_rate, training, rng), (0, 2, 1))
        rows = np.arange(len(lengths))
        last = lengths - 1
        h_fwd = run_lstm(self.fwd, x)[rows, last]
        h_bwd = run_lstm(self.bwd, reverse_padded(x, lengths))[rows, last]
        return ad.concat([h_fwd, h_bwd], axis=-1)


class CharCNNEncoder(CharEncoder):
    """One convolution, ReLU, max over time."""

    def __init__(self, config, n_chars, rng, prefix="charcnn", dtype=ad.DEFAULT_DTYPE):
        super().__init__(config, n_chars, rng, prefix, dtype)
        cfg = self.config
        self.weight = self.param("conv.weight", (cfg.cnn_filters, cfg.d_char, cfg.cnn_kernel), "he_normal")
        self.bias = self.param("conv.bias", (cfg.cnn_filters,), "zeros")

    def forward(self, char_ids, lengths, training=False, rng=None, dropout_rate=0.0) -> Tensor:
        ids = np.asarray(char_ids, dtype=np.intp)
        lengths = np.asarray(lengths, dtype=np.intp)
        if np.any(lengths < 1):
            raise EmptyWordError("char-CNN cannot encode an empty word")
        mask = _mask(lengths, ids.shape[1], self.dtype)
        x = ad.mul_const(self.embed(ids, dropout_rate, training, rng), mask[:, None, :])
        c = ad.mul_const(ad.conv1d(x, self.weight, self.bias), mask[:, None, :])
        return ad.max_over_time(ad.relu(c), lengths)


_ENCODERS = {"intnet": IntNetEncoder, "char_lstm": CharLSTMEncoder, "char_cnn": CharCNNEncoder}


def build_encoder(config: EncoderConfig, n_chars: int, rng: RngState, dtype=ad.DEFAULT_DTYPE):
    """Instantiate the encoder named by ``config.kind``; ``None`` for the word-only model."""
    config.validate()
    if config.kind == "none":
        return None
    return _ENCODERS[config.kind](config, n_chars, rng, dtype=dtype)
