import numpy as np
import pytest

from intnet.autodiff import ConfigError, Parameter, RngState
from intnet.data import TaggedSentence, build_corpus
from intnet.encoders import EncoderConfig
from intnet.tagger import SequenceTagger, TaggerConfig
from intnet.training import (TrainConfig, TrainingDivergedError, clip_gradients, dev_metric, lr_at,
                             sgd_momentum_step, train)
from intnet.evaluation import EvalReport


def _param(values, grad, name="w"):
    p = Parameter(np.asarray(values, dtype=float), name)
    p.grad = np.asarray(grad, dtype=float)
    return p


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 0.01
    assert abs(lr_at(20, cfg) - 0.005) < 1e-12
    assert lr_at(3, TrainConfig(rho=0.0)) == 0.01
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_clip_factor_and_direction():
    a, b = _param([0, 0], [6.0, 0.0], "a"), _param([0], [8.0], "b")
    assert clip_gradients([a, b], 5.0) == 0.5
    assert a.grad.tolist() == [3.0, 0.0] and b.grad.tolist() == [4.0]
    c = _param([0], [3.0])
    assert clip_gradients([c], 5.0) == 1.0 and c.grad.tolist() == [3.0]
    d = _param([0, 0], [7.0, -0.5])
    clip_gradients([d], 5.0, mode="value")
    assert d.grad.tolist() == [5.0, -0.5]
    with pytest.raises(TrainingDivergedError):
        clip_gradients([_param([0], [np.nan])], 5.0)


def test_momentum_velocity_limit():
    lr, g = 0.01, 2.0
    p = _param([0.0], [g])
    vel = {}
    for _ in range(2000):
        p.grad = np.array([g])
        sgd_momentum_step([p], vel, lr, 0.9)
    assert abs(vel["w"][0] - (-10 * lr * g)) < 1e-12


def test_plain_sgd_and_zero_gradient_drift():
    p = _param([1.0, 2.0], [1.0, -1.0])
    vel = {}
    sgd_momentum_step([p], vel, 0.1, 0.0)
    assert p.values.tolist() == [0.9, 2.1]
    assert np.all(p.grad == 0)
    # with momentum, a zero gradient still moves the weights
    q = _param([0.0], [1.0], "q")
    vel = {}
    sgd_momentum_step([q], vel, 0.1, 0.9)
    before = q.values.copy()
    sgd_momentum_step([q], vel, 0.1, 0.9)
    assert q.values[0] == pytest.approx(before[0] - 0.09)


def test_config_validation():
    for bad in (dict(eta0=0), dict(momentum=1.0), dict(dropout=1.0), dict(patience=0), dict(clip_mode="x")):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()


def test_dev_metric_ordering():
    a = EvalReport(0.9, 0.9, 0.9, 0.95)
    b = EvalReport(0.9, 0.9, 0.9, 0.97)
    c = EvalReport(0.91, 0.9, 0.91, 0.5)
    assert dev_metric(b, "ner") > dev_metric(a, "ner")
    assert dev_metric(c, "ner") > dev_metric(b, "ner")
    assert dev_metric(a, "pos") == (0.95,)


SENTS = [
    TaggedSentence(["Obama", "visited", "Paris"], ["B-PER", "O", "B-LOC"]),
    TaggedSentence(["Merkel", "met", "Obama", "."], ["B-PER", "O", "B-PER", "O"]),
    TaggedSentence(["Rain", "in", "Berlin"], ["O", "O", "B-LOC"]),
]


def _train(**kw):
    corpus = build_corpus(SENTS, task="ner")
    model = SequenceTagger(TaggerConfig(hidden_size=4, word_dim=4), EncoderConfig.preset("charcnn"),
                           corpus.word_vocab, corpus.char_vocab, corpus.tag_set, RngState(0))
    cfg = TrainConfig(batch_size=2, eta0=0.05, **kw)
    return model, train(model, corpus, cfg)


def test_training_is_deterministic():
    m1, r1 = _train(max_epochs=4)
    m2, r2 = _train(max_epochs=4)
    assert r1.history == r2.history
    assert all(np.array_equal(r1.best_state[k], r2.best_state[k]) for k in r1.best_state)


def test_early_stopping_patience_and_best_state():
    model, res = _train(max_epochs=60, patience=2)
    hist = res.history
    assert len(hist) == 60 or len(hist) - res.best_epoch == 2
    keys = [(h["dev_f1"], h["dev_token_accuracy"]) for h in hist]
    assert keys[res.best_epoch - 1] == max(keys)
    assert keys.index(max(keys)) == res.best_epoch - 1  # first epoch reaching the best wins
    assert all(h["epoch"] == i + 1 for i, h in enumerate(hist))
    assert hist[0]["lr"] == 0.05


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_best_state():
    corpus = build_corpus(SENTS, task="ner")
    model = SequenceTagger(TaggerConfig(hidden_size=4, word_dim=4), EncoderConfig.preset("charcnn"),
                           corpus.word_vocab, corpus.char_vocab, corpus.tag_set, RngState(0))
    model.crf.transitions.values[0, 0] = np.inf
    with pytest.raises(TrainingDivergedError) as err:
        train(model, corpus, TrainConfig(max_epochs=2))
    assert err.value.best_state is not None


def test_patience_one_with_falling_dev_metric(monkeypatch):
    import intnet.training as training
    scores = iter([0.9, 0.8, 0.7, 0.6])

    def scripted(model, sentences, *a, **kw):
        s = next(scores)
        return EvalReport(s, s, s, s), None

    monkeypatch.setattr(training, "evaluate_model", scripted)
    model, res = _train(max_epochs=4, patience=1)
    assert len(res.history) == 2 and res.best_epoch == 1
    assert res.best_metrics["f1"] == 0.9
