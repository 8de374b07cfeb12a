import numpy as np
import pytest

from intnet import autodiff as ad
from intnet.autodiff import ConfigError, RngState
from intnet.crf import brute_force_partition, path_score
from intnet.data import TaggedSentence, build_corpus, make_batch
from intnet.encoders import EncoderConfig
from intnet.tagger import SequenceTagger, TaggerConfig, build_token_input, load_checkpoint, save_checkpoint

SENTENCES = [
    TaggedSentence(["Obama", "visited", "Paris", "."], ["S-PER", "O", "S-LOC", "O"]),
    TaggedSentence(["Angela", "Merkel", "met", "Obama"], ["B-PER", "E-PER", "O", "S-PER"]),
    TaggedSentence(["Rain", "."], ["O", "O"]),
]


def _model(encoder="intnet5", hidden=4, word_dim=5, seed=0, **tagger_kw):
    corpus = build_corpus(SENTENCES, task="ner")
    cfg = TaggerConfig(hidden_size=hidden, word_dim=word_dim, **tagger_kw)
    model = SequenceTagger(cfg, EncoderConfig.preset(encoder), corpus.word_vocab, corpus.char_vocab,
                           corpus.tag_set, RngState(seed))
    return model, corpus


def _prime(model, corpus):
    with ad.no_grad():
        model.loss(make_batch(corpus.train), training=True)
    return model, corpus


@pytest.mark.parametrize("encoder,word_dim,D", [("intnet5", 100, 292), ("intnet9", 300, 588), ("none", 100, 100),
                                                ("charlstm", 100, 150), ("charcnn", 100, 130)])
def test_token_input_dimension(encoder, word_dim, D):
    model, corpus = _model(encoder, word_dim=word_dim)
    assert model.input_dim == D
    if encoder != "none":
        _prime(model, corpus)
    assert build_token_input("Obama", model).shape == (D,)
    assert build_token_input("neverseen", model).shape == (D,)


def test_character_only_and_empty_models():
    model, _ = _model("intnet5", use_word_embeddings=False)
    assert model.input_dim == 192 and model.word_table is None
    with pytest.raises(ConfigError):
        _model("none", use_word_embeddings=False)


def test_unknown_word_uses_row_zero():
    model, _ = _model("none")
    v = build_token_input("neverseen", model).values
    np.testing.assert_array_equal(v, model.word_table.values[0])


def test_crf_parameter_shapes():
    model, corpus = _model()
    K = len(corpus.tag_set)
    assert model.crf.emission.shape == (K, 8)
    assert model.crf.transitions.shape == (K + 2, K + 2)
    assert not any("crf" in n and "bias" in n for n, _ in model.named_parameters())


def test_parameter_names_unique_and_ordered():
    a, _ = _model()
    b, _ = _model()
    names = [n for n, _ in a.named_parameters()]
    assert len(names) == len(set(names))
    assert names == [n for n, _ in b.named_parameters()]
    assert names[0] == "word_embedding"


def test_batch_loss_is_sum_of_sentence_losses():
    model, corpus = _prime(*_model())
    total = model.loss(make_batch(corpus.train), training=False).item()
    parts = sum(model.loss(make_batch([s]), training=False).item() for s in corpus.train)
    assert abs(total - parts) < 1e-10


def test_loss_matches_enumeration_for_short_sentence():
    model, corpus = _prime(*_model())
    s = corpus.train[2]
    batch = make_batch([s])
    e = model.emissions(batch, training=False).values[0]
    A = model.crf.transitions.values
    tags = model.tag_set.encode(s.labels)
    expected = brute_force_partition(e, A) - path_score(e, tags, A)
    assert abs(model.loss(batch, training=False).item() - expected) < 1e-10


def test_predictions_do_not_depend_on_batch_composition():
    model, corpus = _prime(*_model())
    together = model.predict(corpus.train)
    alone = [model.predict([s])[0] for s in corpus.train]
    assert together == alone
    assert [len(p) for p in together] == [len(s) for s in corpus.train]


def test_emissions_in_eval_mode_are_padding_independent():
    model, corpus = _prime(*_model())
    short = model.emissions(make_batch([corpus.train[2]]), training=False).values[0]
    mixed = model.emissions(make_batch([corpus.train[0], corpus.train[2]]), training=False).values[1, :2]
    np.testing.assert_allclose(short, mixed, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    model, corpus = _prime(*_model())
    path = tmp_path / "m.zip"
    save_checkpoint(path, model, extra={"task": "ner"})
    loaded, extra = load_checkpoint(path)
    assert extra == {"task": "ner"}
    a, b = model.state_dict(), loaded.state_dict()
    assert list(a) == list(b) and all(np.array_equal(a[k], b[k]) for k in a)
    assert loaded.predict(corpus.train) == model.predict(corpus.train)
    assert loaded.char_vocab.chars == model.char_vocab.chars
    assert loaded.word_vocab.words == model.word_vocab.words


def test_checkpoint_bytes_are_deterministic(tmp_path):
    model, _ = _model()
    save_checkpoint(tmp_path / "a.zip", model)
    save_checkpoint(tmp_path / "b.zip", model)
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()


def test_checkpoint_rejects_foreign_zip(tmp_path):
    import zipfile
    path = tmp_path / "x.zip"
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("meta.json", '{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_float32_model_runs():
    corpus = build_corpus(SENTENCES, task="ner")
    model = SequenceTagger(TaggerConfig(hidden_size=3, word_dim=4), EncoderConfig.preset("charcnn"),
                           corpus.word_vocab, corpus.char_vocab, corpus.tag_set, RngState(0), dtype=np.float32)
    loss = model.loss(make_batch(corpus.train))
    ad.backward(loss)
    assert loss.dtype == np.float32
    assert all(p.grad.dtype == np.float32 for p in model.parameters())
