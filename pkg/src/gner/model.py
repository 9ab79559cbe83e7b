"""Full network assembly for the five character-embedding variants, plus
model serialization.

The per-token input is the concatenation of a fixed word vector, the casing
one-hot and (except for the ``none`` variant) a learned character feature:
a single CNN over the decorated character window, three parallel CNNs, or a
one/two-layer BiLSTM over the raw character sequence.  A token-level BiLSTM,
a linearly activated dense layer and a linear-chain CRF sit on top.

Word vectors come from an external store and are never trained.  Character
features are computed once per distinct character row in a batch and shared
across positions, which is both faster and gradient-equivalent.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .corpus import Batch, CharVocab, LabelSchema, Sentence, Token, batch_from_sentences
from .crf import CrfParams, init_crf_params, viterbi_decode
from .embeddings import EmbeddingStore, lookup_word
from .layers import (
    Conv1dParams,
    EmbeddingTable,
    LstmParams,
    bilstm_sequence,
    conv1d_globalmaxpool,
    dropout_mask,
    embed_lookup,
    init_conv1d_params,
    init_embedding_table,
    init_dense_params,
    init_lstm_params,
)

__all__ = [
    "ModelError",
    "ModelFormatError",
    "CHAR_VARIANTS",
    "ModelConfig",
    "NerModel",
    "build_model",
    "forward_emissions",
    "predict",
    "predict_batch",
    "save_model",
    "load_model",
]

CHAR_VARIANTS = ("none", "cnn", "cnn3", "bilstm", "bilstm2")

MODEL_MAGIC = b"MNER1"
MODEL_VERSION = 1


class ModelError(Exception):
    pass


class ModelFormatError(ModelError):
    pass


@dataclass
class ModelConfig:
    label_schema: LabelSchema
    char_variant: str = "bilstm"
    word_dim: int = 300
    casing_dim: int = 7
    char_emb_dim: int = 32
    char_cnn_filters: int = 32
    char_cnn_kernels: tuple[int, ...] | None = None
    char_lstm_cells: int = 50
    token_lstm_cells: int = 200
    dropout: float = 0.5
    embedding_kind: str = "fasttext"

    def __post_init__(self):
        if self.char_variant not in CHAR_VARIANTS:
            raise ModelError(f"unknown char variant {self.char_variant!r}; choose from {CHAR_VARIANTS}")
        if self.char_cnn_kernels is not None:
            self.char_cnn_kernels = tuple(self.char_cnn_kernels)

    @property
    def resolved_kernels(self) -> tuple[int, ...]:
        if self.char_cnn_kernels is not None:
            return self.char_cnn_kernels
        if self.char_variant == "cnn":
            return (3,)
        if self.char_variant == "cnn3":
            return (3, 4, 5)
        return ()

    @property
    def char_feature_dim(self) -> int:
        if self.char_variant == "none":
            return 0
        if self.char_variant in ("cnn", "cnn3"):
            return self.char_cnn_filters * len(self.resolved_kernels)
        return 2 * self.char_lstm_cells

    @property
    def input_width(self) -> int:
        return self.word_dim + self.casing_dim + self.char_feature_dim

    @property
    def required_char_mode(self) -> str | None:
        if self.char_variant == "none":
            return None
        return "cnn" if self.char_variant in ("cnn", "cnn3") else "rnn"

    @property
    def min_char_pad(self) -> int:
        return max(self.resolved_kernels, default=1)

    @property
    def num_labels(self) -> int:
        return len(self.label_schema)

    def to_dict(self) -> dict:
        return {
            "entity_classes": list(self.label_schema.entity_classes),
            "char_variant": self.char_variant,
            "word_dim": self.word_dim,
            "casing_dim": self.casing_dim,
            "char_emb_dim": self.char_emb_dim,
            "char_cnn_filters": self.char_cnn_filters,
            "char_cnn_kernels": list(self.char_cnn_kernels) if self.char_cnn_kernels else None,
            "char_lstm_cells": self.char_lstm_cells,
            "token_lstm_cells": self.token_lstm_cells,
            "dropout": self.dropout,
            "embedding_kind": self.embedding_kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        classes = tuple(d.pop("entity_classes"))
        kernels = d.pop("char_cnn_kernels", None)
        return cls(
            label_schema=LabelSchema(classes),
            char_cnn_kernels=tuple(kernels) if kernels else None,
            **d,
        )


@dataclass
class NerModel:
    config: ModelConfig
    char_vocab: CharVocab | None
    char_table: EmbeddingTable | None
    char_convs: list[Conv1dParams] = field(default_factory=list)
    char_lstms: list[tuple[LstmParams, LstmParams]] = field(default_factory=list)
    token_fwd: LstmParams = None  # type: ignore[assignment]
    token_bwd: LstmParams = None  # type: ignore[assignment]
    dense_w: Node = None  # type: ignore[assignment]
    dense_b: Node = None  # type: ignore[assignment]
    crf: CrfParams = None  # type: ignore[assignment]

    def parameters(self) -> list[tuple[str, Node]]:
        """All trainable parameters in a stable order."""
        out: list[tuple[str, Node]] = []
        if self.char_table is not None and self.char_table.trainable:
            out.append(("char_table.rows", self.char_table.rows))
        for i, conv in enumerate(self.char_convs):
            out.append((f"char_conv{i}.kernels", conv.kernels))
            out.append((f"char_conv{i}.bias", conv.bias))
        for i, (fwd, bwd) in enumerate(self.char_lstms):
            for tag, p in (("fwd", fwd), ("bwd", bwd)):
                out.append((f"char_lstm{i}.{tag}.w_input", p.w_input))
                out.append((f"char_lstm{i}.{tag}.w_recurrent", p.w_recurrent))
                out.append((f"char_lstm{i}.{tag}.bias", p.bias))
        for tag, p in (("fwd", self.token_fwd), ("bwd", self.token_bwd)):
            out.append((f"token_lstm.{tag}.w_input", p.w_input))
            out.append((f"token_lstm.{tag}.w_recurrent", p.w_recurrent))
            out.append((f"token_lstm.{tag}.bias", p.bias))
        out.append(("dense.w", self.dense_w))
        out.append(("dense.b", self.dense_b))
        out.append(("crf.transitions", self.crf.transitions))
        out.append(("crf.start", self.crf.start_scores))
        out.append(("crf.end", self.crf.end_scores))
        return out

    def zero_frozen_grad_rows(self, grads: dict[str, np.ndarray]):
        """Padding embedding rows receive no update."""
        if self.char_table is not None and "char_table.rows" in grads:
            for r in self.char_table.frozen_rows:
                grads["char_table.rows"][r, :] = 0.0

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self.parameters()}

    def restore(self, snap: dict[str, np.ndarray]):
        for name, node in self.parameters():
            node.value[:] = snap[name]


def build_model(config: ModelConfig, char_vocab: CharVocab | None = None, seed: int = 0) -> NerModel:
    """Initialize all parameters for the configured variant."""
    rng = np.random.default_rng(seed)
    needs_chars = config.char_variant != "none"
    if needs_chars and char_vocab is None:
        raise ModelError(f"char variant {config.char_variant!r} needs a character vocabulary")

    char_table = None
    char_convs: list[Conv1dParams] = []
    char_lstms: list[tuple[LstmParams, LstmParams]] = []
    if needs_chars:
        char_table = init_embedding_table(len(char_vocab), config.char_emb_dim, rng)
        if config.char_variant in ("cnn", "cnn3"):
            char_convs = [
                init_conv1d_params(k, config.char_emb_dim, config.char_cnn_filters, rng)
                for k in config.resolved_kernels
            ]
        else:
            layers = 2 if config.char_variant == "bilstm2" else 1
            in_dim = config.char_emb_dim
            for _ in range(layers):
                char_lstms.append(
                    (init_lstm_params(in_dim, config.char_lstm_cells, rng),
                     init_lstm_params(in_dim, config.char_lstm_cells, rng))
                )
                in_dim = 2 * config.char_lstm_cells

    token_fwd = init_lstm_params(config.input_width, config.token_lstm_cells, rng)
    token_bwd = init_lstm_params(config.input_width, config.token_lstm_cells, rng)
    dense_w, dense_b = init_dense_params(2 * config.token_lstm_cells, config.num_labels, rng)
    return NerModel(
        config=config,
        char_vocab=char_vocab,
        char_table=char_table,
        char_convs=char_convs,
        char_lstms=char_lstms,
        token_fwd=token_fwd,
        token_bwd=token_bwd,
        dense_w=dense_w,
        dense_b=dense_b,
        crf=init_crf_params(config.num_labels),
    )


def _char_features(model: NerModel, batch: Batch) -> tuple[Node, np.ndarray]:
    """Character feature matrix over the distinct character rows of the batch.

    Returns (features (U, char_dim), inverse (B*T,)): position p uses row
    ``inverse[p]``.  Deduplication shares one feature computation among equal
    character rows; gradients accumulate exactly as if computed per position.
    """
    cfg = model.config
    b, t, p = batch.char_indices.shape
    rows = batch.char_indices.reshape(b * t, p)
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    xs = [embed_lookup(model.char_table, uniq[:, s]) for s in range(p)]

    if cfg.char_variant in ("cnn", "cnn3"):
        feats = [conv1d_globalmaxpool(conv, xs) for conv in model.char_convs]
        feat = feats[0] if len(feats) == 1 else ad.concat_last(feats)
    else:
        outs = xs
        for fwd, bwd in model.char_lstms:
            outs = bilstm_sequence(fwd, bwd, outs, [True] * len(outs))
        # Final-state readout: forward half after the last character,
        # backward half after the first.
        c = cfg.char_lstm_cells
        feat = ad.concat_last(
            [ad.slice_(outs[-1], (Ellipsis, slice(0, c))), ad.slice_(outs[0], (Ellipsis, slice(c, 2 * c)))]
        )
    return feat, inverse.reshape(-1)


def forward_emissions(
    model: NerModel,
    batch: Batch,
    embedding_store: EmbeddingStore,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Node:
    """Per-token label scores before the CRF, shaped (batch, max_len, labels).

    Dropout (input and recurrent, per-sequence-constant masks) is active only
    in train mode.  Masked positions produce zero BiLSTM output and carry no
    gradient into the token BiLSTM.
    """
    cfg = model.config
    if mode not in ("train", "eval"):
        raise ModelError(f"unknown mode {mode!r}")
    required = cfg.required_char_mode
    if required is not None:
        if batch.char_mode != required:
            raise ModelError(
                f"char-mode mismatch: variant {cfg.char_variant!r} needs {required!r} "
                f"sequences, batch has {batch.char_mode!r}"
            )
        if batch.char_indices is None:
            raise ModelError("batch carries no character sequences")
    train = mode == "train"
    if train and cfg.dropout > 0.0 and rng is None:
        raise ModelError("train mode with dropout needs an rng")

    b, t = len(batch.sentences), batch.max_len
    word = np.zeros((b, t, cfg.word_dim))
    casing = np.zeros((b, t, cfg.casing_dim))
    cache: dict[str, np.ndarray] = {}
    for i, sent in enumerate(batch.sentences):
        for j, tok in enumerate(sent.tokens):
            vec = cache.get(tok.text)
            if vec is None:
                vec, _ = lookup_word(embedding_store, tok.text)
                cache[tok.text] = vec
            word[i, j, :] = vec
            casing[i, j, :] = tok.casing

    char_feat = None
    char_map = None
    if required is not None:
        char_feat, char_map = _char_features(model, batch)

    in_mask = None
    if train and cfg.dropout > 0.0:
        in_mask = ad.constant(dropout_mask((b, cfg.input_width), cfg.dropout, rng))

    xs = []
    for j in range(t):
        parts = [ad.constant(word[:, j, :]), ad.constant(casing[:, j, :])]
        if char_feat is not None:
            parts.append(ad.gather_rows(char_feat, char_map[j::t]))
        x = ad.concat_last(parts)
        if in_mask is not None:
            x = ad.mul(x, in_mask)
        xs.append(x)

    mask_cols = [batch.mask[:, j] for j in range(t)]
    hidden = bilstm_sequence(
        model.token_fwd,
        model.token_bwd,
        xs,
        mask_cols,
        recurrent_dropout=cfg.dropout if train else 0.0,
        mode=mode,
        rng=rng,
    )
    emissions = [ad.add(ad.matmul(h, model.dense_w), model.dense_b) for h in hidden]
    return ad.stack(emissions, axis=1)


def predict_batch(model: NerModel, embedding_store: EmbeddingStore, sentences: list[Sentence],
                  batch_size: int = 64) -> list[list[str]]:
    """Viterbi-decoded BIO labels for each sentence, eval mode."""
    schema = model.config.label_schema
    out: list[list[str]] = []
    for lo in range(0, len(sentences), batch_size):
        group = sentences[lo : lo + batch_size]
        batch = batch_from_sentences(
            group, model.char_vocab, model.config.required_char_mode, model.config.min_char_pad
        )
        em = forward_emissions(model, batch, embedding_store, mode="eval").value
        for i, sent in enumerate(group):
            path, _ = viterbi_decode(model.crf, em[i, : len(sent)])
            out.append([schema.label_of(y) for y in path])
    return out


def predict(model: NerModel, embedding_store: EmbeddingStore, tokens: list[str]) -> list[str]:
    """Label one pre-tokenized sentence."""
    if not tokens:
        raise ModelError("cannot predict on an empty token list")
    if any(not isinstance(tok, str) or not tok for tok in tokens):
        raise ModelError("tokens must be non-empty strings")
    sentence = Sentence([Token(tok) for tok in tokens], ["O"] * len(tokens))
    return predict_batch(model, embedding_store, [sentence])[0]


# ---------------------------------------------------------------------------
# serialization: MNER1 magic, JSON header (config, schema, char vocab,
# declared parameter shapes), then named blocks of little-endian float32.


def save_model(model: NerModel, path: str | Path):
    path = Path(path)
    params = model.parameters()
    header = {
        "version": MODEL_VERSION,
        "config": model.config.to_dict(),
        "char_vocab": model.char_vocab.ordered_symbols() if model.char_vocab else None,
        "params": [{"name": name, "shape": list(node.value.shape)} for name, node in params],
    }
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MODEL_MAGIC + b"\n")
        fh.write(str(len(blob)).encode("ascii") + b"\n")
        fh.write(blob)
        for _, node in params:
            fh.write(np.ascontiguousarray(node.value, dtype="<f4").tobytes())


def _read_exact(fh: io.BufferedReader, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ModelFormatError(f"truncated model file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def load_model(path: str | Path) -> NerModel:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r} version {MODEL_VERSION}")
        try:
            header_len = int(fh.readline().strip())
        except ValueError as exc:
            raise ModelFormatError(f"{path}: unreadable header length") from exc
        header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        if header.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"{path}: unsupported version {header.get('version')}")

        config = ModelConfig.from_dict(header["config"])
        vocab = None
        if header["char_vocab"] is not None:
            vocab = CharVocab({sym: i for i, sym in enumerate(header["char_vocab"])})
        model = build_model(config, vocab, seed=0)

        declared = header["params"]
        params = model.parameters()
        if [d["name"] for d in declared] != [name for name, _ in params]:
            raise ModelFormatError(f"{path}: parameter blocks do not match the configured architecture")
        for d, (name, node) in zip(declared, params):
            shape = tuple(d["shape"])
            if shape != node.value.shape:
                raise ModelFormatError(f"{path}: {name} has shape {shape}, expected {node.value.shape}")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(fh, 4 * count, name)
            node.value[:] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise ModelFormatError(f"{path}: trailing bytes after parameter blocks")
    return model
