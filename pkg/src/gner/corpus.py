"""Corpus handling: TSV/column parsers, tagging-scheme conversion, casing
features, character index sequences and mini-batch assembly.

Two file formats are read and written.  The nested-annotation TSV format has
four tab-separated columns (token number, token, outer label, inner label),
``#`` comment lines and blank-line sentence breaks.  The column format is
whitespace-separated with the token first and the NE tag last; ``-DOCSTART-``
sentences are dropped.  Parsing and batching are pure functions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CorpusError",
    "Token",
    "Sentence",
    "LabelSchema",
    "CharVocab",
    "GERMEVAL_CLASSES",
    "CONLL_CLASSES",
    "COMBINED_CLASSES",
    "germeval_schema",
    "conll_schema",
    "combined_schema",
    "parse_germeval",
    "parse_conll03",
    "write_germeval",
    "write_conll03",
    "iob_to_bio",
    "extract_casing_feature",
    "CASING_FEATURE_NAMES",
    "build_char_vocab",
    "build_char_sequences",
    "Batch",
    "batch_from_sentences",
    "make_batches",
]


class CorpusError(Exception):
    pass


_LABEL_RE = re.compile(r"^([BI])-(\S+)$")


@dataclass(frozen=True)
class Token:
    text: str

    @property
    def casing(self) -> np.ndarray:
        return extract_casing_feature(self.text)

    @property
    def word_vector_ref(self) -> str:
        return self.text


@dataclass
class Sentence:
    tokens: list[Token]
    outer_labels: list[str]
    inner_labels: list[str] | None = None
    source_id: str = ""

    def __post_init__(self):
        n = len(self.tokens)
        if len(self.outer_labels) != n or (self.inner_labels is not None and len(self.inner_labels) != n):
            raise CorpusError(f"{self.source_id}: label counts do not match {n} tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    def labels(self, level: str = "outer") -> list[str]:
        if level == "outer":
            return self.outer_labels
        if level == "inner":
            if self.inner_labels is None:
                raise CorpusError(f"{self.source_id}: no inner annotation level")
            return self.inner_labels
        raise CorpusError(f"unknown annotation level {level!r}")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Sentence)
            and self.tokens == other.tokens
            and self.outer_labels == other.outer_labels
            and self.inner_labels == other.inner_labels
        )


GERMEVAL_CLASSES = (
    "LOC", "LOCderiv", "LOCpart",
    "ORG", "ORGderiv", "ORGpart",
    "OTH", "OTHderiv", "OTHpart",
    "PER", "PERderiv", "PERpart",
)
CONLL_CLASSES = ("LOC", "MISC", "ORG", "PER")
# The model trained on both corpora keeps the four main classes, folds the
# derived sub-classes into MISC and drops the -part sub-classes.
COMBINED_CLASSES = ("LOC", "MISC", "ORG", "OTH", "PER")


@dataclass(frozen=True)
class LabelSchema:
    """Ordered BIO label set: "O" first, then B-/I- per entity class."""

    entity_classes: tuple[str, ...]
    labels: tuple[str, ...] = field(init=False)
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        labels = ["O"]
        for cls in self.entity_classes:
            labels += [f"B-{cls}", f"I-{cls}"]
        object.__setattr__(self, "labels", tuple(labels))
        object.__setattr__(self, "index", {lab: i for i, lab in enumerate(labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise CorpusError(f"label {label!r} not in schema over {self.entity_classes}") from None

    def label_of(self, idx: int) -> str:
        return self.labels[idx]


def germeval_schema() -> LabelSchema:
    return LabelSchema(GERMEVAL_CLASSES)


def conll_schema() -> LabelSchema:
    return LabelSchema(CONLL_CLASSES)


def combined_schema() -> LabelSchema:
    return LabelSchema(COMBINED_CLASSES)


def _validate_label(label: str, schema: LabelSchema, path, line_no: int):
    if label not in schema.index:
        raise CorpusError(f"{path}:{line_no}: unknown label {label!r}")


def parse_germeval(path: str | Path, schema: LabelSchema | None = None) -> list[Sentence]:
    """Parse the four-column nested-annotation TSV into sentences carrying
    both label levels."""
    path = Path(path)
    schema = schema or germeval_schema()
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    outer: list[str] = []
    inner: list[str] = []

    def flush():
        if tokens:
            sentences.append(
                Sentence(list(tokens), list(outer), list(inner), source_id=f"{path.name}:{len(sentences)}")
            )
            tokens.clear()
            outer.clear()
            inner.clear()

    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    for i, line in enumerate(lines, start=1):
        if line.startswith("#"):
            continue
        if not line.strip():
            flush()
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise CorpusError(f"{path}:{i}: expected 4 tab-separated columns, got {len(cols)}")
        _, text, out_lab, in_lab = cols
        if not text:
            raise CorpusError(f"{path}:{i}: empty token")
        _validate_label(out_lab, schema, path, i)
        _validate_label(in_lab, schema, path, i)
        tokens.append(Token(text))
        outer.append(out_lab)
        inner.append(in_lab)
    flush()
    return sentences


_IOB_RE = re.compile(r"^(?:O|[BI]-\S+)$")


def parse_conll03(path: str | Path, schema: LabelSchema | None = None) -> list[Sentence]:
    """Parse whitespace-separated columns (token first, NE tag last).

    Tags are kept exactly as found in the file; the original distribution
    uses the IOB scheme, so run :func:`iob_to_bio` on the labels before
    training.  ``-DOCSTART-`` sentences are dropped.
    """
    path = Path(path)
    schema = schema or conll_schema()
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    tags: list[str] = []
    skip_docstart = False

    def flush():
        nonlocal skip_docstart
        if tokens and not skip_docstart:
            sentences.append(Sentence(list(tokens), list(tags), None, source_id=f"{path.name}:{len(sentences)}"))
        tokens.clear()
        tags.clear()
        skip_docstart = False

    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            flush()
            continue
        cols = line.split()
        if len(cols) < 2:
            raise CorpusError(f"{path}:{i}: expected at least 2 columns, got {len(cols)}")
        text, tag = cols[0], cols[-1]
        if text == "-DOCSTART-":
            skip_docstart = True
        if not _IOB_RE.match(tag):
            raise CorpusError(f"{path}:{i}: malformed tag {tag!r}")
        if tag != "O":
            cls = tag[2:]
            if cls not in schema.entity_classes:
                raise CorpusError(f"{path}:{i}: unknown label {tag!r}")
        tokens.append(Token(text))
        tags.append(tag)
    flush()
    return sentences


def write_germeval(sentences: Iterable[Sentence], path: str | Path):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in sentences:
            inner = s.inner_labels if s.inner_labels is not None else ["O"] * len(s)
            for n, (tok, out_lab, in_lab) in enumerate(zip(s.tokens, s.outer_labels, inner), start=1):
                fh.write(f"{n}\t{tok.text}\t{out_lab}\t{in_lab}\n")
            fh.write("\n")


def write_conll03(sentences: Iterable[Sentence], path: str | Path):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in sentences:
            for tok, tag in zip(s.tokens, s.outer_labels):
                fh.write(f"{tok.text} {tag}\n")
            fh.write("\n")


def _split_tag(label: str, pos: int) -> tuple[str, str]:
    if label == "O":
        return "O", ""
    m = _LABEL_RE.match(label)
    if not m:
        raise CorpusError(f"malformed tag {label!r} at position {pos}")
    return m.group(1), m.group(2)


def iob_to_bio(labels: Sequence[str]) -> list[str]:
    """Convert IOB to BIO: I-X becomes B-X at sentence start or when the
    previous label does not continue class X.  Idempotent on BIO input."""
    out: list[str] = []
    prev_marker, prev_cls = "O", ""
    for pos, label in enumerate(labels):
        marker, cls = _split_tag(label, pos)
        if marker == "I" and not (prev_marker in ("B", "I") and prev_cls == cls):
            out.append(f"B-{cls}")
        else:
            out.append(label)
        prev_marker, prev_cls = marker, cls
    return out


CASING_FEATURE_NAMES = (
    "all_lower", "all_upper", "initial_upper", "numeric", "mainly_numeric", "contains_digit", "other",
)
_CASE_INDEX = {name: i for i, name in enumerate(CASING_FEATURE_NAMES)}


def casing_feature_name(token_text: str) -> str:
    """First matching rule, in order: numeric, mainly numeric, all lower,
    all upper, initial upper, contains digit, other."""
    if not token_text:
        raise CorpusError("empty token has no casing feature")
    n_digits = sum(ch.isdecimal() for ch in token_text)
    n = len(token_text)
    if n_digits == n:
        return "numeric"
    if 2 * n_digits > n:
        return "mainly_numeric"
    if token_text.islower():
        return "all_lower"
    if token_text.isupper():
        return "all_upper"
    if token_text[0].isupper() and (n == 1 or token_text[1:].islower()):
        return "initial_upper"
    if n_digits > 0:
        return "contains_digit"
    return "other"


def extract_casing_feature(token_text: str) -> np.ndarray:
    """One-hot surface-shape descriptor of length 7."""
    vec = np.zeros(len(CASING_FEATURE_NAMES))
    vec[_CASE_INDEX[casing_feature_name(token_text)]] = 1.0
    return vec


PAD_INDEX = 0
UNK_INDEX = 1
SENT_START = "<S>"
SENT_END = "</S>"
WORD_START = "<W>"
WORD_END = "</W>"
VIRTUAL_CHARS = (SENT_START, SENT_END, WORD_START, WORD_END)


@dataclass(frozen=True)
class CharVocab:
    """Character-to-index map with reserved slots: 0 pad, 1 unknown, then the
    four virtual boundary symbols, then real characters.  Built from the
    training split only so dev/test unknowns exercise the unknown slot."""

    index: dict[str, int]

    @classmethod
    def from_chars(cls, chars: Iterable[str]) -> "CharVocab":
        index = {"<pad>": PAD_INDEX, "<unk>": UNK_INDEX}
        for v in VIRTUAL_CHARS:
            index[v] = len(index)
        for ch in sorted(set(chars)):
            if ch not in index:
                index[ch] = len(index)
        return cls(index)

    def lookup(self, symbol: str) -> int:
        return self.index.get(symbol, UNK_INDEX)

    def __len__(self) -> int:
        return len(self.index)

    def ordered_symbols(self) -> list[str]:
        return [s for s, _ in sorted(self.index.items(), key=lambda kv: kv[1])]


def build_char_vocab(sentences: Iterable[Sentence]) -> CharVocab:
    chars: set[str] = set()
    for s in sentences:
        for tok in s.tokens:
            chars.update(tok.text)
    return CharVocab.from_chars(chars)


def decorated_char_length(token_text: str, first: bool, last: bool, mode: str) -> int:
    if mode == "rnn":
        return len(token_text)
    return len(token_text) + 2 + (1 if first else 0) + (1 if last else 0)


def build_char_sequences(sentence: Sentence, vocab: CharVocab, mode: str, pad_len: int) -> list[list[int]]:
    """Per-token character index sequences.

    ``cnn`` mode wraps every token in word-boundary symbols, additionally
    marking the sentence start/end on the first/last token, then post-pads;
    ``rnn`` mode uses the raw characters pre-padded to ``pad_len``.
    """
    if mode not in ("cnn", "rnn"):
        raise CorpusError(f"unknown char mode {mode!r}")
    out = []
    last = len(sentence) - 1
    for t, tok in enumerate(sentence.tokens):
        if mode == "cnn":
            symbols = [WORD_START, *tok.text, WORD_END]
            if t == 0:
                symbols.insert(0, SENT_START)
            if t == last:
                symbols.append(SENT_END)
            if len(symbols) > pad_len:
                raise CorpusError(
                    f"pad_len {pad_len} too small for decorated token of length {len(symbols)}"
                )
            idx = [vocab.lookup(s) for s in symbols] + [PAD_INDEX] * (pad_len - len(symbols))
        else:
            if len(tok.text) > pad_len:
                raise CorpusError(f"pad_len {pad_len} too small for token of length {len(tok.text)}")
            idx = [PAD_INDEX] * (pad_len - len(tok.text)) + [vocab.lookup(ch) for ch in tok.text]
        out.append(idx)
    return out


@dataclass
class Batch:
    """Padded mini-batch: ``mask`` marks real tokens, ``char_indices`` is a
    (batch, max_len, char_pad_len) index array when a char mode is set
    (masked positions hold all-pad rows)."""

    sentences: list[Sentence]
    max_len: int
    mask: np.ndarray
    char_mode: str | None = None
    char_pad_len: int = 0
    char_indices: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.sentences)


def batch_from_sentences(
    sentences: Sequence[Sentence],
    char_vocab: CharVocab | None = None,
    char_mode: str | None = None,
    min_char_pad: int = 5,
    pad_to: int | None = None,
    char_pad_to: int | None = None,
) -> Batch:
    """Assemble one padded batch.

    Character sequences are padded to the batch's longest decorated token by
    default; ``char_pad_to`` fixes the length instead (character features of
    trained models see the pad region, so a fixed length keeps them identical
    across batchings).  ``pad_to`` forces extra token-level padding.
    """
    if not sentences:
        raise CorpusError("cannot batch zero sentences")
    max_len = max(len(s) for s in sentences)
    if pad_to is not None:
        if pad_to < max_len:
            raise CorpusError(f"pad_to {pad_to} < longest sentence {max_len}")
        max_len = pad_to
    mask = np.zeros((len(sentences), max_len), dtype=bool)
    for b, s in enumerate(sentences):
        mask[b, : len(s)] = True

    char_indices = None
    pad_len = 0
    if char_mode is not None:
        if char_vocab is None:
            raise CorpusError("char sequences need a char vocabulary")
        needed = max(
            decorated_char_length(tok.text, t == 0, t == len(s) - 1, char_mode)
            for s in sentences
            for t, tok in enumerate(s.tokens)
        )
        pad_len = needed if char_pad_to is None else char_pad_to
        if pad_len < needed:
            raise CorpusError(f"char_pad_to {char_pad_to} < longest decorated token {needed}")
        if char_mode == "cnn":
            pad_len = max(pad_len, min_char_pad)
        char_indices = np.full((len(sentences), max_len, pad_len), PAD_INDEX, dtype=np.int64)
        for b, s in enumerate(sentences):
            rows = build_char_sequences(s, char_vocab, char_mode, pad_len)
            for t, row in enumerate(rows):
                char_indices[b, t] = row
    return Batch(
        sentences=list(sentences),
        max_len=max_len,
        mask=mask,
        char_mode=char_mode,
        char_pad_len=pad_len,
        char_indices=char_indices,
    )


def make_batches(
    sentences: Sequence[Sentence],
    batch_size: int,
    seed: int,
    char_vocab: CharVocab | None = None,
    char_mode: str | None = None,
    min_char_pad: int = 5,
) -> list[Batch]:
    """Shuffle by seed, bucket by similar length, pad per batch.

    Every sentence appears exactly once; batch order is shuffled again so
    length buckets do not impose a curriculum.
    """
    if batch_size < 1:
        raise CorpusError(f"batch_size must be >= 1, got {batch_size}")
    if not sentences:
        return []
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sentences))
    # Stable sort keeps the shuffled order within each length bucket.
    order = sorted(order, key=lambda i: len(sentences[i]))
    groups = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(groups)
    return [
        batch_from_sentences([sentences[i] for i in g], char_vocab, char_mode, min_char_pad)
        for g in groups
    ]
