"""BiLSTM-CRF named-entity recognition with pluggable character embeddings."""

from .corpus import (
    LabelSchema,
    Sentence,
    Token,
    build_char_vocab,
    conll_schema,
    germeval_schema,
    iob_to_bio,
    parse_conll03,
    parse_germeval,
)
from .embeddings import EmbeddingStore, load_store, lookup_word
from .evaluation import EvalReport, evaluate_bio, extract_chunks, germeval_combined, split_oov_iv
from .model import ModelConfig, NerModel, build_model, load_model, predict, save_model
from .training import TrainConfig, TrainReport, train_two_stage

__version__ = "0.1.0"

__all__ = [
    "LabelSchema",
    "Sentence",
    "Token",
    "build_char_vocab",
    "conll_schema",
    "germeval_schema",
    "iob_to_bio",
    "parse_conll03",
    "parse_germeval",
    "EmbeddingStore",
    "load_store",
    "lookup_word",
    "EvalReport",
    "evaluate_bio",
    "extract_chunks",
    "germeval_combined",
    "split_oov_iv",
    "ModelConfig",
    "NerModel",
    "build_model",
    "load_model",
    "predict",
    "save_model",
    "TrainConfig",
    "TrainReport",
    "train_two_stage",
]
