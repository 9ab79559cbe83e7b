"""Two-stage mini-batch training with Nesterov Adam and validation-F1
checkpoint selection.

Stage one runs small batches, stage two continues from the stage-one best
checkpoint with large batches; the returned model is the best stage-two
checkpoint by validation chunk F1 (ties break to the earliest epoch).  The
per-batch loss is the sum of sentence CRF negative log-likelihoods divided
by the number of sentences; gradients are clipped to a global norm before
the optimizer step.  Word embeddings live outside the parameter set and are
never updated.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import LabelSchema, Sentence, make_batches
from .crf import crf_negative_log_likelihood
from .embeddings import EmbeddingStore
from .evaluation import evaluate_bio
from .model import NerModel, forward_emissions, predict_batch, save_model

__all__ = [
    "TrainingError",
    "TrainConfig",
    "NadamState",
    "EpochRecord",
    "TrainReport",
    "nadam_step",
    "train_epoch",
    "train_two_stage",
    "evaluate_chunk_f1",
]


class TrainingError(Exception):
    pass


@dataclass
class TrainConfig:
    stage1_epochs: int = 10
    stage1_batch: int = 16
    stage2_epochs: int = 10
    stage2_batch: int = 512
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    gradient_clip_norm: float | None = 5.0
    label_level: str = "outer"
    reset_stage2_optimizer: bool = True


@dataclass
class NadamState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def nadam_step(
    params: list[tuple[str, ad.Node]],
    grads: dict[str, np.ndarray],
    state: NadamState,
    config: TrainConfig,
):
    """Nesterov Adam update, applied in place.

    Bias-corrected first/second moments with a Nesterov lookahead on the
    first moment:

        m <- b1*m + (1-b1)*g            v <- b2*v + (1-b2)*g^2
        m_hat = m / (1 - b1^t)          v_hat = v / (1 - b2^t)
        m_bar = b1*m_hat + (1-b1)*g / (1 - b1^t)
        theta <- theta - lr * m_bar / (sqrt(v_hat) + eps)
    """
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, node in params:
        g = grads.get(name)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(node.value)
            state.v[name] = np.zeros_like(node.value)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_bar = b1 * (m / bc1) + (1.0 - b1) * g / bc1
        node.value -= config.learning_rate * m_bar / (np.sqrt(v / bc2) + config.epsilon)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    """Scale all gradients so the global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm is not None and total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def _gold_indices(sentence: Sentence, schema: LabelSchema, level: str) -> list[int]:
    return [schema.index_of(lab) for lab in sentence.labels(level)]


def batch_loss(
    model: NerModel,
    batch,
    store: EmbeddingStore,
    level: str,
    mode: str,
    rng: np.random.Generator | None,
) -> ad.Node:
    """Mean per-sentence CRF negative log-likelihood for one batch."""
    schema = model.config.label_schema
    emissions = forward_emissions(model, batch, store, mode=mode, rng=rng)
    losses = []
    for i, sent in enumerate(batch.sentences):
        em_i = ad.slice_(emissions, (i, slice(0, len(sent))))
        losses.append(crf_negative_log_likelihood(model.crf, em_i, _gold_indices(sent, schema, level)))
    total = losses[0]
    for piece in losses[1:]:
        total = ad.add(total, piece)
    return ad.mul(total, ad.constant(1.0 / len(losses)))


def train_epoch(
    model: NerModel,
    data: list[Sentence],
    embedding_store: EmbeddingStore,
    config: TrainConfig,
    stage: int,
    state: NadamState | None = None,
    epoch_seed: int = 0,
) -> dict:
    """One pass over all batches; returns {"mean_loss", "batches", "grad_norm"}."""
    if stage not in (1, 2):
        raise TrainingError(f"stage must be 1 or 2, got {stage}")
    if not data:
        raise TrainingError("training on an empty dataset")
    state = state if state is not None else NadamState()
    batch_size = config.stage1_batch if stage == 1 else config.stage2_batch
    batches = make_batches(
        data,
        batch_size,
        seed=epoch_seed,
        char_vocab=model.char_vocab,
        char_mode=model.config.required_char_mode,
        min_char_pad=model.config.min_char_pad,
    )
    rng = np.random.default_rng(epoch_seed + 0x9E3779B9)
    losses = []
    last_norm = 0.0
    for batch in batches:
        loss = batch_loss(model, batch, embedding_store, config.label_level, "train", rng)
        grad_map = ad.backward(loss)
        grads = {
            name: grad_map[node].copy()
            for name, node in model.parameters()
            if node in grad_map
        }
        model.zero_frozen_grad_rows(grads)
        last_norm = clip_gradients(grads, config.gradient_clip_norm)
        nadam_step(model.parameters(), grads, state, config)
        losses.append(float(loss.value))
    return {"mean_loss": float(np.mean(losses)), "batches": len(batches), "grad_norm": last_norm}


def evaluate_chunk_f1(
    model: NerModel,
    sentences: list[Sentence],
    store: EmbeddingStore,
    level: str = "outer",
) -> float:
    """Chunk F1 of model predictions against gold labels at ``level``."""
    gold = [s.labels(level) for s in sentences]
    pred = predict_batch(model, store, sentences)
    return evaluate_bio(gold, pred).f1


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    mean_loss: float
    dev_f1: float
    checkpoint_id: str


@dataclass
class TrainReport:
    rows: list[EpochRecord] = field(default_factory=list)
    selected: dict[int, str] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "stage": r.stage,
                    "epoch": r.epoch,
                    "mean_loss": r.mean_loss,
                    "dev_f1": r.dev_f1,
                    "checkpoint_id": r.checkpoint_id,
                }
            )
            for r in self.rows
        ]
        lines.append(json.dumps({"selected": self.selected, "wall_clock_s": self.wall_clock_s}))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path):
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def _run_stage(
    model: NerModel,
    train: list[Sentence],
    dev: list[Sentence],
    store: EmbeddingStore,
    config: TrainConfig,
    stage: int,
    epochs: int,
    state: NadamState,
    report: TrainReport,
    checkpoint_dir: Path | None,
) -> dict[str, np.ndarray]:
    best_f1 = -1.0
    best_snap: dict[str, np.ndarray] | None = None
    best_id = ""
    for epoch in range(1, epochs + 1):
        epoch_seed = config.seed * 1_000_003 + stage * 10_007 + epoch
        row = train_epoch(model, train, store, config, stage, state, epoch_seed=epoch_seed)
        dev_f1 = evaluate_chunk_f1(model, dev, store, config.label_level)
        ckpt_id = f"stage{stage}_epoch{epoch}"
        if checkpoint_dir is not None:
            save_model(model, checkpoint_dir / f"{ckpt_id}.mner")
        report.rows.append(EpochRecord(stage, epoch, row["mean_loss"], dev_f1, ckpt_id))
        # argmax with ties broken by the earliest epoch
        if dev_f1 > best_f1:
            best_f1 = dev_f1
            best_snap = model.snapshot()
            best_id = ckpt_id
    assert best_snap is not None
    report.selected[stage] = best_id
    return best_snap


def train_two_stage(
    model: NerModel,
    train: list[Sentence],
    dev: list[Sentence],
    embedding_store: EmbeddingStore,
    config: TrainConfig,
    checkpoint_dir: str | Path | None = None,
) -> tuple[NerModel, TrainReport]:
    """Stage one at the small batch size, stage two continues from the
    stage-one best checkpoint at the large batch size; returns the stage-two
    best checkpoint and the epoch-by-epoch report."""
    if not train:
        raise TrainingError("training on an empty dataset")
    if not dev:
        raise TrainingError("two-stage training needs a validation set")
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    report = TrainReport()
    state = NadamState()
    best1 = _run_stage(model, train, dev, embedding_store, config, 1, config.stage1_epochs,
                       state, report, checkpoint_dir)
    model.restore(best1)
    if config.reset_stage2_optimizer:
        state = NadamState()
    best2 = _run_stage(model, train, dev, embedding_store, config, 2, config.stage2_epochs,
                       state, report, checkpoint_dir)
    model.restore(best2)
    report.wall_clock_s = time.perf_counter() - started
    return model, report
