"""IntNet character-to-word encoder and BiLSTM-CRF sequence tagger on a small numpy autodiff."""

import os

from .autodiff import (ConfigError, DimensionError, EmptyWordError, NonFiniteError, Parameter,
                       RngState, Tensor, UninitializedStatsError, backward, grad_check, no_grad)
from .config import ExperimentConfig, load_config, parse_config
from .crf import crf_log_partition, crf_nll, crf_score, viterbi
from .data import (Corpus, TaggedSentence, build_corpus, from_bioes, load_embeddings, read_conll,
                   to_bioes)
from .encoders import CharVocab, EncoderConfig, build_encoder, output_dim
from .evaluation import entity_f1, evaluate, nearest_neighbors, token_accuracy
from .tagger import SequenceTagger, TaggerConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingDivergedError, lr_at, train

__version__ = "0.1.0"

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
