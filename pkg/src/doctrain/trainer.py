"""Pre-training loops (document objective and the MLM comparison arm) plus
parameter-drift instrumentation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .corpus import Corpus
from .errors import ConfigError, NumericError, ValidationError
from .losses import hierarchical_loss_rows, triplet_loss
from .mining import Triplet
from .model import DocumentModel, group_of
from .optim import AdamW, ParamGroup, linear_lr
from .seeding import make_rng
from .taxonomy import HierarchyLabels
from .tensor import Tensor, backward
from .text import MASK_ID, encode_tokens, tokenize

log = logging.getLogger(__name__)

LOSS_MODES = ("triplet", "hier", "both")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    initial_lr: float = 5e-5
    epochs: int = 1
    max_triplets: int = 4000
    loss: str = "both"
    hier_negative: bool = True
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    mlm_mask_rate: float = 0.15
    log_every: int = 10
    lora_rank: int = 0  # 0 trains the base encoder; > 0 trains adapters only
    lora_targets: tuple[str, ...] = ("query", "value")
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1 or self.epochs < 1 or self.max_triplets < 1:
            raise ConfigError(f"bad sizes in {self}")
        if self.initial_lr < 0:
            raise ConfigError(f"initial_lr must be >= 0, got {self.initial_lr}")
        if self.loss not in LOSS_MODES:
            raise ConfigError(f"loss must be one of {LOSS_MODES}, got {self.loss!r}")
        if not 0.0 < self.mlm_mask_rate < 1.0:
            raise ConfigError(f"mlm_mask_rate must sit in (0, 1)")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        if self.lora_rank < 0:
            raise ConfigError(f"lora_rank must be >= 0, got {self.lora_rank}")
        return self


@dataclass(frozen=True)
class DriftRecord:
    step: int | None  # None marks the end-of-run record
    group: str
    value: float
    zero_reference: bool = False


@dataclass
class DriftReport:
    records: list[DriftRecord] = field(default_factory=list)

    def final_by_group(self) -> dict[str, DriftRecord]:
        out: dict[str, DriftRecord] = {}
        for rec in self.records:
            if rec.step is None:
                out[rec.group] = rec
        return out

    def rows(self) -> list[dict]:
        return [
            {"step": "final" if r.step is None else r.step, "group": r.group,
             "relative_l1_change": r.value, "zero_reference": r.zero_reference}
            for r in self.records
        ]


class _DriftTracker:
    """Relative L1 change of each parameter group against its start state."""

    def __init__(self, groups: list[ParamGroup]):
        self.groups = groups
        self.before = {
            g.name: [t.data.copy() for t in g.tensors] for g in groups
        }
        self.report = DriftReport()

    def record(self, step: int | None) -> None:
        for g in self.groups:
            ref = self.before[g.name]
            denom = float(sum(np.abs(b).sum() for b in ref))
            num = float(sum(np.abs(t.data - b).sum()
                            for t, b in zip(g.tensors, ref)))
            if denom == 0.0:
                self.report.records.append(
                    DriftRecord(step, g.name, 0.0, zero_reference=True))
            else:
                self.report.records.append(
                    DriftRecord(step, g.name, num / denom))


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    drift: DriftReport
    loss_curve: list[dict]
    total_steps: int


def _batches(n: int, batch_size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def total_step_count(n_items: int, batch_size: int, epochs: int) -> int:
    """Partial final batches still train, so steps = epochs * ceil(n/b)."""
    return epochs * math.ceil(n_items / batch_size)


def pretrain(model: DocumentModel, corpus: Corpus, triplets: list[Triplet],
             labels: dict[str, HierarchyLabels] | None,
             config: TrainConfig) -> PretrainResult:
    """Train the upper encoder (and heads) on document triplets.

    The featurizer and the embedding table stay frozen. `labels` maps document
    id to padded hierarchy indices and is required unless loss == "triplet".
    """
    config.validate()
    if not triplets:
        raise ValidationError("no triplets to train on")
    use_triplet = config.loss in ("triplet", "both")
    use_hier = config.loss in ("hier", "both")
    if use_hier:
        if model.heads.depth == 0:
            raise ConfigError("hierarchy loss requested but the model has no "
                              "classification heads (empty level_sizes)")
        if labels is None:
            raise ValidationError("hierarchy loss requested but no labels given")
    for t in triplets:
        for doc_id in (t.anchor_id, t.positive_id, t.negative_id):
            if not corpus.has(doc_id):
                raise ValidationError(f"triplet references unknown document "
                                      f"{doc_id!r}")
            if use_hier and doc_id not in labels:
                raise ValidationError(f"no hierarchy labels for document "
                                      f"{doc_id!r}")
    if len(triplets) > config.max_triplets:
        log.info("capping %d triplets at max_triplets=%d",
                 len(triplets), config.max_triplets)
        triplets = triplets[:config.max_triplets]

    matrices = {}
    for t in triplets:
        for doc_id in (t.anchor_id, t.positive_id, t.negative_id):
            if doc_id not in matrices:
                matrices[doc_id] = model.embed_sentences(
                    list(corpus.get(doc_id).sentences))

    groups = model.param_groups()
    for g in groups:
        if g.name.startswith("embed."):
            g.frozen = True  # embeddings never train during pre-training
        if g.name == "heads" and not use_hier:
            g.frozen = True
    if config.lora_rank > 0:
        adapter = model.attach_adapter(config.lora_rank, config.lora_targets,
                                       config.seed)
        for g in groups:
            if g.name != "heads":
                g.frozen = True  # adapters replace base-weight training
        groups.append(ParamGroup("lora", adapter.adapter.trainable_tensors()))
    optimizer = AdamW(groups, lr=config.initial_lr, betas=config.betas,
                      eps=config.eps, weight_decay=config.weight_decay)
    tracker = _DriftTracker(groups)
    rng = make_rng(config.seed, "pretrain-shuffle")

    total_steps = total_step_count(len(triplets), config.batch_size,
                                   config.epochs)
    depth = model.heads.depth
    loss_curve: list[dict] = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(triplets))
        for lo, hi in _batches(len(triplets), config.batch_size):
            batch = [triplets[i] for i in order[lo:hi]]
            vec_cache: dict[str, Tensor] = {}

            def doc_vec(doc_id: str) -> Tensor:
                hit = vec_cache.get(doc_id)
                if hit is None:
                    hit = model.encode_matrix(matrices[doc_id])
                    vec_cache[doc_id] = hit
                return hit

            members = ["anchor_id", "positive_id"]
            if config.hier_negative:
                members.append("negative_id")
            loss = None
            if use_triplet:
                anchors = T.stack([doc_vec(t.anchor_id) for t in batch])
                positives = T.stack([doc_vec(t.positive_id) for t in batch])
                negatives = T.stack([doc_vec(t.negative_id) for t in batch])
                loss = triplet_loss(anchors, positives, negatives)
            if use_hier:
                rows = T.stack([doc_vec(getattr(t, m))
                                for t in batch for m in members])
                logits_per_level = model.heads.logits_matrix(rows)
                targets_per_level = [
                    np.array([labels[getattr(t, m)].indices[lv]
                              for t in batch for m in members])
                    for lv in range(depth)
                ]
                hier = hierarchical_loss_rows(logits_per_level,
                                              targets_per_level,
                                              num_sets=len(batch))
                loss = hier if loss is None else loss + hier
            if not np.isfinite(loss.data).all():
                raise NumericError(f"non-finite loss at step {step}")
            backward(loss)
            lr = linear_lr(config.initial_lr, step, total_steps)
            optimizer.step(lr)
            optimizer.zero_grad()
            loss_curve.append({"step": step, "lr": lr,
                               "loss": float(loss.item())})
            step += 1
            if step % config.log_every == 0 and step < total_steps:
                tracker.record(step)
    tracker.record(None)

    ckpt = model.to_checkpoint(extra_meta={
        "objective": "doc",
        "train": {"loss": config.loss, "batch_size": config.batch_size,
                  "initial_lr": config.initial_lr, "epochs": config.epochs,
                  "seed": config.seed, "total_steps": total_steps,
                  "lora_rank": config.lora_rank,
                  "lora_targets": list(config.lora_targets)},
    })
    return PretrainResult(ckpt, tracker.report, loss_curve, total_steps)


def pretrain_mlm(model: DocumentModel, corpus: Corpus,
                 config: TrainConfig) -> PretrainResult:
    """Masked-token comparison arm over the same upper encoder and schedule.

    Exists for the drift comparison: masks a fraction of token positions,
    scores them against the vocabulary through a separate output head, and
    trains with the identical optimizer and decay.
    """
    config.validate()
    docs = list(corpus)
    if not docs:
        raise ValidationError("empty corpus")
    vocab = model.config.vocab_size
    sequences = []
    for d in docs:
        ids = encode_tokens(tokenize(" ".join(d.sentences)),
                            vocab)[:model.config.max_positions]
        if len(ids) >= 2:
            sequences.append(ids)
    if not sequences:
        raise ValidationError("no document yields a 2+ token sequence")

    mlm_head_w = Tensor(np.zeros((model.config.d_model, vocab)),
                        requires_grad=True)
    mlm_head_b = Tensor(np.zeros(vocab), requires_grad=True)
    groups = model.param_groups()
    for g in groups:
        if g.name.startswith("embed.") or g.name == "heads":
            g.frozen = True
    groups.append(ParamGroup("mlm_head", [mlm_head_w, mlm_head_b]))
    optimizer = AdamW(groups, lr=config.initial_lr, betas=config.betas,
                      eps=config.eps, weight_decay=config.weight_decay)
    tracker = _DriftTracker(groups)
    rng = make_rng(config.seed, "pretrain-mlm")

    total_steps = total_step_count(len(sequences), config.batch_size,
                                   config.epochs)
    loss_curve: list[dict] = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(sequences))
        for lo, hi in _batches(len(sequences), config.batch_size):
            logits_rows = []
            target_rows = []
            for i in order[lo:hi]:
                ids = sequences[i]
                n_mask = max(1, int(round(config.mlm_mask_rate * len(ids))))
                mask_pos = np.sort(rng.choice(len(ids), size=n_mask,
                                              replace=False))
                masked = list(ids)
                for pos in mask_pos:
                    masked[pos] = MASK_ID
                out = model.forward_tokens(masked)
                picked = T.take(out, mask_pos)
                logits_rows.append(T.matmul(picked, mlm_head_w) + mlm_head_b)
                target_rows.append(np.array(ids)[mask_pos])
            logits = T.concat(logits_rows, axis=0)
            targets = np.concatenate(target_rows)
            loss = T.cross_entropy_rows(logits, targets, reduction="mean")
            if not np.isfinite(loss.data).all():
                raise NumericError(f"non-finite loss at step {step}")
            backward(loss)
            lr = linear_lr(config.initial_lr, step, total_steps)
            optimizer.step(lr)
            optimizer.zero_grad()
            loss_curve.append({"step": step, "lr": lr,
                               "loss": float(loss.item())})
            step += 1
            if step % config.log_every == 0 and step < total_steps:
                tracker.record(step)
    tracker.record(None)

    ckpt = model.to_checkpoint(extra_meta={
        "objective": "mlm",
        "train": {"batch_size": config.batch_size,
                  "initial_lr": config.initial_lr, "epochs": config.epochs,
                  "seed": config.seed, "total_steps": total_steps},
    })
    return PretrainResult(ckpt, tracker.report, loss_curve, total_steps)


def track_drift(before: Checkpoint, after: Checkpoint) -> DriftReport:
    """Per-group relative L1 change between two checkpoints of one model."""
    names = sorted(before.tensors)
    if names != sorted(after.tensors):
        raise ValidationError("checkpoints hold different tensor sets")
    by_group: dict[str, tuple[float, float]] = {}
    for name in names:
        b = before.tensors[name].astype(np.float64)
        a = after.tensors[name].astype(np.float64)
        if a.shape != b.shape:
            raise ValidationError(f"tensor {name!r} changed shape: "
                                  f"{b.shape} -> {a.shape}")
        group = group_of(name)
        num, den = by_group.get(group, (0.0, 0.0))
        by_group[group] = (num + float(np.abs(a - b).sum()),
                           den + float(np.abs(b).sum()))
    report = DriftReport()
    for group in sorted(by_group):
        num, den = by_group[group]
        if den == 0.0:
            report.records.append(DriftRecord(None, group, 0.0, True))
        else:
            report.records.append(DriftRecord(None, group, num / den))
    return report
