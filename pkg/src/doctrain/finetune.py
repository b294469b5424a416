"""Fine-tuning over the token-embedding path: span extraction, token tagging,
and sentence-pair classification, with their task metrics."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericError, ParseError, ValidationError
from .model import DocumentModel
from .optim import AdamW, ParamGroup
from .seeding import make_rng
from .tensor import Tensor, backward, no_grad
from .text import CLS_ID, SEP_ID, encode_tokens

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FinetuneConfig:
    lr: float = 3e-5
    epochs: int = 30
    batch_size: int = 8
    max_examples: int | None = None  # few-shot budget, e.g. 50
    patience: int = 5
    weight_decay: float = 0.01
    seed: int = 0

    def validate(self) -> "FinetuneConfig":
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"bad finetune config {self}")
        if self.max_examples is not None and self.max_examples < 1:
            raise ConfigError("max_examples must be >= 1 when set")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        return self


@dataclass(frozen=True)
class SpanQaExample:
    question: tuple[str, ...]
    context: tuple[str, ...]
    answer: tuple[int, int] | None  # token span in context coords, or None

    def __post_init__(self):
        if not self.question or not self.context:
            raise ValidationError("question and context must be non-empty")
        if self.answer is not None:
            s, e = self.answer
            if not (0 <= s <= e < len(self.context)):
                raise ValidationError(
                    f"answer span {self.answer} out of range for context of "
                    f"length {len(self.context)}")


@dataclass(frozen=True)
class TokenClassExample:
    tokens: tuple[str, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        if not self.tokens:
            raise ValidationError("empty token sequence")
        if len(self.labels) != len(self.tokens):
            raise ValidationError(
                f"{len(self.labels)} labels for {len(self.tokens)} tokens")


@dataclass(frozen=True)
class PairExample:
    first: tuple[str, ...]
    second: tuple[str, ...]
    label: int

    def __post_init__(self):
        if not self.first or not self.second:
            raise ValidationError("both segments must be non-empty")
        if self.label not in (0, 1):
            raise ValidationError(f"pair label must be 0 or 1, got {self.label}")


@dataclass
class FinetuneResult:
    metrics: dict[str, float]
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValidationError("accuracy needs two equal non-empty label lists")
    return float((y_true == y_pred).mean())


def macro_f1(y_true, y_pred, num_classes: int) -> float:
    """Mean per-class F1; classes that never occur in y_true are skipped."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValidationError("macro_f1 needs two equal non-empty label lists")
    scores = []
    for c in range(num_classes):
        tp = int(((y_true == c) & (y_pred == c)).sum())
        fp = int(((y_true != c) & (y_pred == c)).sum())
        fn = int(((y_true == c) & (y_pred != c)).sum())
        if tp + fn == 0:
            continue  # no support
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn)
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        scores.append(f1)
    if not scores:
        raise ValidationError("no class has support in y_true")
    return float(np.mean(scores))


def binary_f1(y_true, y_pred, positive: int = 1) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = int(((y_true == positive) & (y_pred == positive)).sum())
    fp = int(((y_true != positive) & (y_pred == positive)).sum())
    fn = int(((y_true == positive) & (y_pred != positive)).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2 * precision * recall / (precision + recall))


def span_token_f1(pred: tuple[int, int] | None,
                  gold: tuple[int, int] | None) -> float:
    """Overlap F1 of two token spans; both-unanswerable scores 1."""
    if pred is None and gold is None:
        return 1.0
    if pred is None or gold is None:
        return 0.0
    a = set(range(pred[0], pred[1] + 1))
    b = set(range(gold[0], gold[1] + 1))
    overlap = len(a & b)
    if overlap == 0:
        return 0.0
    precision = overlap / len(a)
    recall = overlap / len(b)
    return 2 * precision * recall / (precision + recall)


def _zero_head(rows: int, cols: int) -> tuple[Tensor, Tensor]:
    w = Tensor(np.zeros((rows, cols)), requires_grad=True)
    b = Tensor(np.zeros(cols), requires_grad=True)
    return w, b


class SpanQaModel:
    """Joint start/end span scorer over [CLS] question [SEP] context.

    Position 0 (the leading classification slot) doubles as the
    no-answer target, so unanswerable examples train toward span (0, 0).
    """

    primary_metric = "f1"

    def __init__(self, model: DocumentModel):
        self.model = model
        d = model.config.d_model
        self.w_start, self.b_start = _zero_head(d, 1)
        self.w_end, self.b_end = _zero_head(d, 1)

    def head_tensors(self) -> list[Tensor]:
        return [self.w_start, self.b_start, self.w_end, self.b_end]

    def _encode(self, ex: SpanQaExample):
        vocab = self.model.config.vocab_size
        budget = self.model.config.max_positions
        q_ids = encode_tokens(list(ex.question), vocab)
        ctx_ids = encode_tokens(list(ex.context), vocab)
        room = budget - 2 - len(q_ids)
        if room < 1:
            raise ValidationError(
                f"question of {len(q_ids)} tokens leaves no room for context "
                f"within {budget} positions")
        if len(ctx_ids) > room:
            log.warning("truncating context from %d to %d tokens",
                        len(ctx_ids), room)
            ctx_ids = ctx_ids[:room]
        ids = [CLS_ID] + q_ids + [SEP_ID] + ctx_ids
        offset = 2 + len(q_ids)  # index of the first context position
        return ids, offset, len(ctx_ids)

    def _logits(self, ex: SpanQaExample):
        ids, offset, kept = self._encode(ex)
        out = self.model.forward_tokens(ids)
        n = len(ids)
        start = T.reshape(T.matmul(out, self.w_start) + self.b_start, (n,))
        end = T.reshape(T.matmul(out, self.w_end) + self.b_end, (n,))
        return start, end, offset, kept

    def loss(self, ex: SpanQaExample) -> Tensor:
        start, end, offset, kept = self._logits(ex)
        if ex.answer is None:
            ts = te = 0
        else:
            s, e = ex.answer
            if e >= kept:  # span truncated away; fall back to no-answer
                log.warning("gold span %s lost to truncation", ex.answer)
                ts = te = 0
            else:
                ts, te = offset + s, offset + e
        return T.cross_entropy(start, ts) + T.cross_entropy(end, te)

    def predict(self, ex: SpanQaExample) -> tuple[int, int] | None:
        with no_grad():
            start, end, offset, kept = self._logits(ex)
        s_log = start.data
        e_log = end.data
        best_score = s_log[0] + e_log[0]
        best: tuple[int, int] | None = None
        for s in range(offset, offset + kept):
            for e in range(s, offset + kept):
                score = s_log[s] + e_log[e]
                if score > best_score:
                    best_score = score
                    best = (s - offset, e - offset)
        return best

    def evaluate(self, examples) -> dict[str, float]:
        if not examples:
            raise ValidationError("no examples to evaluate")
        em = 0.0
        f1 = 0.0
        for ex in examples:
            pred = self.predict(ex)
            em += float(pred == ex.answer)
            f1 += span_token_f1(pred, ex.answer)
        n = len(examples)
        return {"exact_match": em / n, "f1": f1 / n}


class TokenTaggerModel:
    """Per-position classifier over the token path."""

    primary_metric = "macro_f1"

    def __init__(self, model: DocumentModel, num_classes: int):
        if num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
        self.model = model
        self.num_classes = num_classes
        self.w, self.b = _zero_head(model.config.d_model, num_classes)

    def head_tensors(self) -> list[Tensor]:
        return [self.w, self.b]

    def _check(self, ex: TokenClassExample):
        bad = [l for l in ex.labels if not 0 <= l < self.num_classes]
        if bad:
            raise ValidationError(
                f"labels {sorted(set(bad))} outside [0, {self.num_classes})")

    def _logits(self, ex: TokenClassExample) -> Tensor:
        ids = encode_tokens(list(ex.tokens), self.model.config.vocab_size)
        ids = ids[:self.model.config.max_positions]
        out = self.model.forward_tokens(ids)
        return T.matmul(out, self.w) + self.b

    def loss(self, ex: TokenClassExample) -> Tensor:
        self._check(ex)
        logits = self._logits(ex)
        n = logits.data.shape[0]
        targets = np.asarray(ex.labels[:n])
        return T.cross_entropy_rows(logits, targets, reduction="mean")

    def predict(self, ex: TokenClassExample) -> list[int]:
        self._check(ex)
        with no_grad():
            logits = self._logits(ex)
        return [int(i) for i in logits.data.argmax(axis=1)]

    def evaluate(self, examples) -> dict[str, float]:
        if not examples:
            raise ValidationError("no examples to evaluate")
        y_true: list[int] = []
        y_pred: list[int] = []
        for ex in examples:
            pred = self.predict(ex)
            y_true.extend(ex.labels[:len(pred)])
            y_pred.extend(pred)
        return {"macro_f1": macro_f1(y_true, y_pred, self.num_classes),
                "accuracy": accuracy(y_true, y_pred)}


class PairClassifierModel:
    """Two-way classifier on the first-position output of [CLS] a [SEP] b."""

    primary_metric = "accuracy"

    def __init__(self, model: DocumentModel):
        self.model = model
        self.w, self.b = _zero_head(model.config.d_model, 2)

    def head_tensors(self) -> list[Tensor]:
        return [self.w, self.b]

    def _logits(self, ex: PairExample) -> Tensor:
        vocab = self.model.config.vocab_size
        ids = ([CLS_ID] + encode_tokens(list(ex.first), vocab) + [SEP_ID]
               + encode_tokens(list(ex.second), vocab))
        ids = ids[:self.model.config.max_positions]
        out = self.model.forward_tokens(ids)
        first = T.take(out, 0)
        return T.matmul(T.reshape(first, (1, -1)), self.w) + self.b

    def loss(self, ex: PairExample) -> Tensor:
        logits = self._logits(ex)
        return T.cross_entropy_rows(logits, np.array([ex.label]),
                                    reduction="mean")

    def predict(self, ex: PairExample) -> int:
        with no_grad():
            logits = self._logits(ex)
        return int(logits.data[0].argmax())

    def evaluate(self, examples) -> dict[str, float]:
        if not examples:
            raise ValidationError("no examples to evaluate")
        y_true = [ex.label for ex in examples]
        y_pred = [self.predict(ex) for ex in examples]
        return {"accuracy": accuracy(y_true, y_pred),
                "f1": binary_f1(y_true, y_pred)}


def _trainable_groups(model: DocumentModel,
                      head: list[Tensor]) -> list[ParamGroup]:
    # Fine-tuning trains the upper encoder, both embedding tables, and the
    # task head. The featurizer stays frozen; pre-training heads are dropped.
    groups = model.param_groups()
    for g in groups:
        if g.name == "heads":
            g.frozen = True
    groups.append(ParamGroup("task_head", head))
    return groups


def _snapshot(tensors: list[Tensor]) -> list[np.ndarray]:
    return [t.data.copy() for t in tensors]


def _restore(tensors: list[Tensor], blobs: list[np.ndarray]) -> None:
    for t, blob in zip(tensors, blobs):
        t.data = blob.copy()


def finetune(task, train: list, dev: list,
             config: FinetuneConfig) -> FinetuneResult:
    """Shared epoch loop with early stopping on the task's primary metric.

    `task` is one of the task model classes above, already wrapping a
    DocumentModel. Mutates the wrapped model in place and leaves it at the
    best-scoring epoch's state.
    """
    config.validate()
    if not train or not dev:
        raise ValidationError("both train and dev sets must be non-empty")
    if config.max_examples is not None:
        train = train[:config.max_examples]

    groups = _trainable_groups(task.model, task.head_tensors())
    optimizer = AdamW(groups, lr=config.lr,
                      weight_decay=config.weight_decay)
    trainable = [t for g in groups if not g.frozen for t in g.tensors]
    rng = make_rng(config.seed, "finetune-shuffle")

    best_metric = -np.inf
    best_state = _snapshot(trainable)
    best_epoch = 0
    best_metrics: dict[str, float] = {}
    history: list[dict] = []
    stale = 0
    epochs_run = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        for lo in range(0, len(train), config.batch_size):
            batch = [train[i] for i in order[lo:lo + config.batch_size]]
            loss = task.loss(batch[0])
            for ex in batch[1:]:
                loss = loss + task.loss(ex)
            loss = loss * (1.0 / len(batch))
            if not np.isfinite(loss.data).all():
                raise NumericError(f"non-finite loss in epoch {epoch}")
            backward(loss)
            optimizer.step()
            optimizer.zero_grad()
        epochs_run = epoch + 1
        metrics = task.evaluate(dev)
        history.append({"epoch": epoch, **metrics})
        score = metrics[task.primary_metric]
        if score > best_metric:
            best_metric = score
            best_state = _snapshot(trainable)
            best_epoch = epoch
            best_metrics = dict(metrics)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    _restore(trainable, best_state)
    return FinetuneResult(metrics=best_metrics, history=history,
                          best_epoch=best_epoch, epochs_run=epochs_run)


def _load_jsonl(path, build):
    examples = []
    problems = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                examples.append(build(json.loads(line)))
            except (json.JSONDecodeError, ValidationError, KeyError,
                    TypeError) as exc:
                problems.append(f"line {line_no}: {exc}")
    if problems:
        raise ParseError(f"{path}:\n" + "\n".join(problems))
    return examples


def load_span_qa(path) -> list[SpanQaExample]:
    """JSONL: {"question": [...], "context": [...], "answer": [s, e] | null}"""
    def build(obj):
        answer = obj["answer"]
        return SpanQaExample(tuple(obj["question"]), tuple(obj["context"]),
                             None if answer is None else (int(answer[0]),
                                                          int(answer[1])))
    return _load_jsonl(path, build)


def load_token_class(path) -> list[TokenClassExample]:
    """JSONL: {"tokens": [...], "labels": [int per token]}"""
    return _load_jsonl(path, lambda obj: TokenClassExample(
        tuple(obj["tokens"]), tuple(int(v) for v in obj["labels"])))


def load_pairs(path) -> list[PairExample]:
    """JSONL: {"first": [...], "second": [...], "label": 0 | 1}"""
    return _load_jsonl(path, lambda obj: PairExample(
        tuple(obj["first"]), tuple(obj["second"]), int(obj["label"])))


def finetune_span_qa(model: DocumentModel, train: list[SpanQaExample],
                     dev: list[SpanQaExample],
                     config: FinetuneConfig) -> tuple[SpanQaModel, FinetuneResult]:
    task = SpanQaModel(model)
    return task, finetune(task, train, dev, config)


def finetune_token_classification(
        model: DocumentModel, train: list[TokenClassExample],
        dev: list[TokenClassExample], num_classes: int,
        config: FinetuneConfig) -> tuple[TokenTaggerModel, FinetuneResult]:
    task = TokenTaggerModel(model, num_classes)
    return task, finetune(task, train, dev, config)


def finetune_pair_classification(
        model: DocumentModel, train: list[PairExample],
        dev: list[PairExample],
        config: FinetuneConfig) -> tuple[PairClassifierModel, FinetuneResult]:
    task = PairClassifierModel(model)
    return task, finetune(task, train, dev, config)
