"""nertrainer: a reference token-classification trainer over CoNLL files.

Tokens are split into corpus-built subword pieces and encoded with a small
transformer; each word's first subword is projected to BIO label logits.
Training minimizes token-level cross-entropy; prediction decodes by argmax
and repairs the tag sequence before writing CoNLL output.
"""

from .data import (
    DataError,
    Sentence,
    bio_labels,
    check_labels,
    extract_spans,
    micro_f1,
    parse_conll,
    read_conll,
    read_schema,
    repair_bio,
    serialize_conll,
    write_conll,
)
from .model import RECIPES, TokenTagger, sinusoidal_positions
from .tokenizer import PAD, SubwordTokenizer
from .training import (
    ModelArtifact,
    SpotCheck,
    TrainConfig,
    compute_loss,
    predict,
    token_logits,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "ModelArtifact",
    "PAD",
    "RECIPES",
    "Sentence",
    "SpotCheck",
    "SubwordTokenizer",
    "TokenTagger",
    "TrainConfig",
    "__version__",
    "bio_labels",
    "check_labels",
    "compute_loss",
    "extract_spans",
    "micro_f1",
    "parse_conll",
    "predict",
    "read_conll",
    "read_schema",
    "repair_bio",
    "serialize_conll",
    "sinusoidal_positions",
    "token_logits",
    "train",
    "write_conll",
]
