# Nearest neighbours in character-encoding space. Even untrained, IntNet puts
# words with shared substrings close together.
import numpy as np

from intnet import autodiff as ad
from intnet.autodiff import RngState
from intnet.encoders import CharVocab, EncoderConfig, build_encoder
from intnet.evaluation import nearest_neighbors

words = ["Paris", "Parisian", "paris", "Berlin", "Berliner", "2018", "2019", "11-month", "12-month", "Obama"]
vocab = CharVocab.from_words(words)
enc = build_encoder(EncoderConfig.preset("intnet5"), len(vocab), RngState(0))
with ad.no_grad():
    enc.encode_words(words, vocab, training=True)   # batch-norm statistics


def encode(ws):
    with ad.no_grad():
        return np.asarray(enc.encode_words(list(ws), vocab).values)


# %%
for q in ("Paris", "2018", "11-month"):
    nn = nearest_neighbors(q, words, encode, 3)
    print(q, "->", ", ".join(f"{w} ({s:.3f})" for w, s in nn))
