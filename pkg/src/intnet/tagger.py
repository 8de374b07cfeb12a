"""BiLSTM-CRF sentence tagger over word embeddings and character encodings."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import RngState, Tensor
from .crf import crf_log_partition, crf_nll, crf_score, viterbi
from .data import Batch, TagSet, WordVocab, make_batch
from .encoders import CharVocab, EncoderConfig, build_encoder, output_dim, pad_words
from .lstm import LstmCell, reverse_padded, run_lstm
from .module import Module, embedding_bound

CHECKPOINT_FORMAT = "intnet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TaggerConfig:
    hidden_size: int = 256
    word_dim: int = 100
    use_word_embeddings: bool = True
    use_stop: bool = True

    def to_dict(self):
        return asdict(self)


class CrfParams(Module):
    """Per-tag emission vectors ``w_y`` (no bias) and the ``(K+2) x (K+2)`` transition matrix."""

    def __init__(self, prefix, n_tags, input_size, rng, dtype=ad.DEFAULT_DTYPE, use_stop=True):
        super().__init__(prefix, rng, dtype)
        self.n_tags = n_tags
        self.use_stop = use_stop
        self.emission = self.param("emission", (n_tags, input_size), "glorot_uniform")
        self.transitions = self.param("transitions", (n_tags + 2, n_tags + 2), "zeros")

    def emissions(self, h: Tensor) -> Tensor:
        """Tag scores ``w_y . h_t`` for every position: ``[..., 2H]`` to ``[..., K]``."""
        return ad.affine(h, self.emission)

    def score(self, h: Tensor, tags) -> Tensor:
        return crf_score(self.emissions(h), tags, self.transitions, self.use_stop)

    def log_partition(self, h: Tensor) -> Tensor:
        return crf_log_partition(self.emissions(h), self.transitions, self.use_stop)

    def nll(self, h: Tensor, tags) -> Tensor:
        return crf_nll(self.emissions(h), tags, self.transitions, self.use_stop)

    def decode(self, h: Tensor):
        with ad.no_grad():
            e = self.emissions(h)
        return viterbi(e.values, self.transitions.values, self.use_stop)


def bilstm_forward(inputs: Tensor, fwd: LstmCell, bwd: LstmCell, lengths=None) -> Tensor:
    """``[B, T, D]`` to ``[B, T, 2H]``: forward states then backward states per position.

    A single ``[T, D]`` sentence is also accepted and gives ``[T, 2H]``.
    """
    single = inputs.ndim == 2
    x = ad.reshape(inputs, (1,) + inputs.shape) if single else inputs
    B, T = x.shape[:2]
    if T == 0:
        raise ValueError("cannot run a BiLSTM over an empty sentence")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    h_fwd = run_lstm(fwd, x)
    h_bwd = reverse_padded(run_lstm(bwd, reverse_padded(x, lengths)), lengths)
    out = ad.concat([h_fwd, h_bwd], axis=-1)
    return ad.reshape(out, out.shape[1:]) if single else out


class SequenceTagger(Module):
    """Word vector ⊕ character encoding → BiLSTM → CRF.

    Dropout sits on the character embeddings feeding the encoder, on the
    BiLSTM input and on the BiLSTM output feeding the CRF.
    """

    def __init__(self, tagger_config: TaggerConfig, encoder_config: EncoderConfig,
                 word_vocab: WordVocab, char_vocab: CharVocab, tag_set: TagSet,
                 rng: RngState, dtype=ad.DEFAULT_DTYPE, word_vectors: np.ndarray | None = None):
        super().__init__("", rng, dtype)
        self.config = tagger_config
        self.encoder_config = encoder_config.validate()
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        self.tag_set = tag_set
        if not tagger_config.use_word_embeddings and encoder_config.kind == "none":
            raise ad.ConfigError("model needs word embeddings, a character encoder, or both")

        self.word_table = None
        if tagger_config.use_word_embeddings:
            shape = (len(word_vocab), tagger_config.word_dim)
            self.word_table = self.param("word_embedding", shape, "uniform",
                                         bound=embedding_bound(tagger_config.word_dim))
            if word_vectors is not None:
                if word_vectors.shape != shape:
                    raise ad.DimensionError(f"word vectors {word_vectors.shape} do not match {shape}")
                self.word_table.values[...] = word_vectors
        self.encoder = build_encoder(encoder_config, len(char_vocab), rng, dtype)
        if self.encoder is not None:
            self.child(self.encoder)

        H = tagger_config.hidden_size
        D = self.input_dim
        self.fwd = self.child(LstmCell("bilstm.fwd", D, H, rng, dtype))
        self.bwd = self.child(LstmCell("bilstm.bwd", D, H, rng, dtype))
        self.crf = self.child(CrfParams("crf", len(tag_set), 2 * H, rng, dtype, tagger_config.use_stop))

    @property
    def input_dim(self) -> int:
        word = self.config.word_dim if self.config.use_word_embeddings else 0
        return word + output_dim(self.encoder_config)

    def token_inputs(self, words, training=False, rng=None, dropout_rate=0.0) -> Tensor:
        """``[N, D]`` rows ``[word_vec ; z]`` for a flat list of tokens (no LSTM-input dropout)."""
        parts = []
        if self.word_table is not None:
            ids = [self.word_vocab.lookup(w) for w in words]
            parts.append(ad.take(self.word_table, ids, axis=0))
        if self.encoder is not None:
            char_ids, lengths = pad_words(words, self.char_vocab)
            parts.append(self.encoder.forward(char_ids, lengths, training, rng, dropout_rate))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)

    def emissions(self, batch: Batch, training=False, rng=None, dropout_rate=0.0) -> Tensor:
        """Tag scores ``[B, T_max, K]``; positions past a sentence's length are meaningless."""
        words = [w for s in batch.sentences for w in s.tokens]
        flat = self.token_inputs(words, training, rng, dropout_rate)
        B, T = batch.token_mask.shape
        # scatter the flat rows into [B, T, D], padding reads an appended zero row
        zero_row = ad.Tensor(np.zeros((1, flat.shape[1]), dtype=flat.dtype), requires_grad=False)
        padded_src = ad.concat([flat, zero_row], axis=0)
        index = np.full((B, T), len(words), dtype=np.intp)
        offset = 0
        for b, n in enumerate(batch.lengths):
            index[b, :n] = np.arange(offset, offset + n)
            offset += n
        x = ad.take(padded_src, index, axis=0)
        x = ad.dropout(x, dropout_rate, training, rng)
        h = bilstm_forward(x, self.fwd, self.bwd, batch.lengths)
        h = ad.dropout(h, dropout_rate, training, rng)
        return self.crf.emissions(h)

    def loss(self, batch: Batch, training=True, rng=None, dropout_rate=0.0) -> Tensor:
        """Summed negative log-likelihood of the gold tags over the batch."""
        e = self.emissions(batch, training, rng, dropout_rate)
        losses = []
        for b, s in enumerate(batch.sentences):
            tags = self.tag_set.encode(s.labels)
            losses.append(crf_nll(e[b, : len(s)], tags, self.crf.transitions, self.crf.use_stop))
        return ad.add_n(losses)

    def predict(self, sentences, batch_size=32) -> list[list[str]]:
        """Viterbi label sequences for each sentence (eval mode, no tape)."""
        out = []
        with ad.no_grad():
            for start in range(0, len(sentences), batch_size):
                batch = make_batch(sentences[start:start + batch_size])
                e = self.emissions(batch, training=False).values
                trans = self.crf.transitions.values
                for b, s in enumerate(batch.sentences):
                    tags, _ = viterbi(e[b, : len(s)], trans, self.crf.use_stop)
                    out.append(self.tag_set.decode(tags))
        return out

    def encode_words(self, words, batch_size=256) -> np.ndarray:
        """Character-encoder outputs ``z`` for a list of words (eval mode)."""
        if self.encoder is None:
            raise ad.ConfigError("this model has no character encoder")
        rows = []
        with ad.no_grad():
            for start in range(0, len(words), batch_size):
                chunk = words[start:start + batch_size]
                rows.append(self.encoder.encode_words(chunk, self.char_vocab).values)
        return np.concatenate(rows, axis=0) if rows else np.zeros((0, self.encoder.output_dim))


def build_token_input(word: str, model: SequenceTagger, training=False, rng=None, dropout_rate=0.0) -> Tensor:
    """Input vector ``[word_vec ; z]`` of length ``D`` for one token."""
    return model.token_inputs([word], training, rng, dropout_rate)[0]


# ---------------------------------------------------------------------------
# checkpoints


def _zip_write(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, model: SequenceTagger, state=None, extra=None):
    """Write a zip container: ``meta.json`` plus one ``.npy`` per named array.

    Entries carry a fixed timestamp so equal models give identical bytes.
    """
    state = model.state_dict() if state is None else state
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": np.dtype(model.dtype).name,
        "tagger": model.config.to_dict(),
        "encoder": model.encoder_config.to_dict(),
        "words": model.word_vocab.words,
        "chars": model.char_vocab.chars,
        "tags": model.tag_set.labels,
        "arrays": list(state.keys()),
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "meta.json", json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8"))
        for i, (name, arr) in enumerate(state.items()):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            _zip_write(zf, f"arrays/{i:05d}.npy", buf.getvalue())


def load_checkpoint(path):
    """Rebuild a :class:`SequenceTagger` from :func:`save_checkpoint` output.

    Returns ``(model, extra)``.
    """
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json").decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not an IntNet checkpoint")
        if meta["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {meta['version']} is newer than supported")
        state = {}
        for i, name in enumerate(meta["arrays"]):
            state[name] = np.lib.format.read_array(io.BytesIO(zf.read(f"arrays/{i:05d}.npy")))
    char_vocab = CharVocab()
    for ch in meta["chars"][2:]:
        char_vocab.add(ch)
    model = SequenceTagger(
        TaggerConfig(**meta["tagger"]),
        EncoderConfig.from_dict(meta["encoder"]),
        WordVocab(meta["words"][1:]),
        char_vocab,
        TagSet(meta["tags"]),
        RngState(0),
        dtype=np.dtype(meta["dtype"]),
    )
    model.load_state_dict(state)
    return model, meta["extra"]
