# What the IntNet encoder computes for a handful of words, layer by layer.
from intnet import autodiff as ad
from intnet.autodiff import RngState
from intnet.encoders import CharVocab, EncoderConfig, IntNetEncoder, output_dim, pad_words

words = ["Obama", "visited", "Paris", "11-month", "a"]
vocab = CharVocab.from_words(words)
print("characters:", len(vocab), "(PADDING and UNKNOWN included)")

# %% widths: initial layer 32 maps per kernel, each block adds 16 per kernel
for preset in ("intnet5", "intnet9", "charlstm", "charcnn"):
    print(f"{preset:9s} z dim = {output_dim(EncoderConfig.preset(preset))}")

# %% feature maps of IntNet-5: the initial layer, then two funnel blocks
enc = IntNetEncoder(EncoderConfig.preset("intnet5"), len(vocab), RngState(0))
ids, lengths = pad_words(words, vocab)
with ad.no_grad():
    maps = enc.feature_maps(ids, lengths, training=True)
for i, m in enumerate(maps):
    print(f"map {i}: {m.shape}")

# %% the word vector is the max over time of every map, concatenated
with ad.no_grad():
    z = enc.encode_words(words, vocab)
print("z:", z.shape)
print("unseen characters fall back to UNKNOWN:", vocab.encode("λx"))
