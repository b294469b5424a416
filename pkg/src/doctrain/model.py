"""The full pipeline model: frozen featurizer, upper encoder, embeddings, heads."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .encoder import (AdaptedUpperEncoder, ClassificationHeads, EmbeddingTable,
                      LowerEncoder, ModelConfig, UpperEncoder, apply_lora)
from .errors import CorruptCheckpoint, LengthError, NumericError, ShapeError
from .optim import ParamGroup, snap32
from .seeding import make_rng
from .tensor import Tensor

log = logging.getLogger(__name__)

# parameter-type groups used for optimizer wiring and drift reporting
GROUPS = (
    "lower",
    "embed.token",
    "embed.position",
    "upper.attention.query",
    "upper.attention.key",
    "upper.attention.value",
    "upper.attention.output",
    "upper.ffn",
    "upper.layer_norm",
    "heads",
)


def group_of(tensor_name: str) -> str:
    """Map a checkpoint tensor name onto its parameter-type group."""
    if tensor_name.startswith("lower"):
        return "lower"
    if tensor_name.startswith("embed."):
        return tensor_name
    if tensor_name.startswith("heads."):
        return "heads"
    if tensor_name.startswith("upper."):
        rest = tensor_name.split(".", 2)[2]
        if rest.startswith("attention."):
            return "upper.attention." + rest.split(".")[1]
        if rest.startswith("ffn."):
            return "upper.ffn"
        if rest.startswith("norm"):
            return "upper.layer_norm"
    raise ShapeError(f"tensor name {tensor_name!r} belongs to no known group")


class DocumentModel:
    """Everything needed to run both input paths against one parameter set."""

    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        self.lower = LowerEncoder(config)
        self.upper = UpperEncoder(config, make_rng(config.seed, "upper"))
        self.embed = EmbeddingTable(config)
        self.heads = ClassificationHeads(config.d_model, config.level_sizes)
        self.adapted: AdaptedUpperEncoder | None = None

    def attach_adapter(self, rank: int, targets: tuple[str, ...] = ("query", "value"),
                       seed: int = 0) -> AdaptedUpperEncoder:
        """Route both input paths through low-rank adapters; base stays frozen."""
        self.adapted = apply_lora(self.upper, rank, targets, seed)
        return self.adapted

    def detach_adapter(self) -> None:
        self.adapted = None

    def _encoder(self):
        return self.adapted if self.adapted is not None else self.upper

    # -- sentence path ----------------------------------------------------

    def embed_sentences(self, sentences: list[str]) -> np.ndarray:
        """Sentence strings -> frozen [S, d] matrix (truncated with a warning)."""
        if not sentences:
            raise LengthError("document has no sentences")
        cap = self.config.max_sentences
        if len(sentences) > cap:
            log.warning("truncating document from %d to %d sentences",
                        len(sentences), cap)
            sentences = sentences[:cap]
        return np.stack([self.lower.embed(s) for s in sentences], axis=0)

    def encode_matrix(self, matrix: np.ndarray) -> Tensor:
        """[S, d] sentence-vector matrix -> [d] document vector (mean of upper
        outputs). Sentence rows carry no positional vectors."""
        if matrix.ndim != 2 or matrix.shape[1] != self.config.d_model:
            raise ShapeError(f"expected [S, {self.config.d_model}] matrix, "
                             f"got {matrix.shape}")
        out = self._encoder().forward(Tensor(matrix))
        return T.tmean(out, axis=0)

    def encode_document(self, sentences: list[str]) -> Tensor:
        return self.encode_matrix(self.embed_sentences(sentences))

    # -- token path ---------------------------------------------------------

    def forward_tokens(self, ids: list[int]) -> Tensor:
        """Token ids -> [T, d] contextualized outputs from the same upper tier."""
        rows = self.embed.rows(ids)
        return self._encoder().forward(rows)

    # -- heads ----------------------------------------------------------------

    def classify_hierarchy(self, doc_vector: Tensor) -> list[Tensor]:
        return self.heads.logits(doc_vector)

    # -- parameter bookkeeping -------------------------------------------------

    def named_params(self, include_lower: bool = False) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.upper.named_params())
        out.update(self.embed.named_params())
        out.update(self.heads.named_params())
        if include_lower:
            out.update(self.lower.named_params())
        return out

    def param_groups(self) -> list[ParamGroup]:
        """All groups, with the always-frozen featurizer marked frozen.

        Callers flip `frozen` on the others per training phase.
        """
        buckets: dict[str, list[Tensor]] = {name: [] for name in GROUPS}
        for name, t in self.named_params().items():
            buckets[group_of(name)].append(t)
        groups = [ParamGroup("lower",
                             list(self.lower.named_params().values()),
                             frozen=True)]
        for name in GROUPS:
            if name == "lower":
                continue
            if buckets[name]:
                groups.append(ParamGroup(name, buckets[name]))
        return groups

    def check_finite(self, out: Tensor) -> Tensor:
        if not np.isfinite(out.data).all():
            raise NumericError("non-finite values in forward output")
        return out

    # -- persistence ----------------------------------------------------------

    def to_checkpoint(self, extra_meta: dict | None = None) -> Checkpoint:
        """Upper encoder, heads and embedding table as named float32 tensors;
        the frozen featurizer travels as its seed inside the config echo."""
        meta = {"config": dataclasses.asdict(self.config)}
        if extra_meta:
            meta.update(extra_meta)
        tensors = {name: t.data.astype(np.float32)
                   for name, t in self.named_params().items()}
        return Checkpoint(meta=meta, tensors=tensors)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "DocumentModel":
        raw = dict(ckpt.meta.get("config") or {})
        if not raw:
            raise CorruptCheckpoint("checkpoint metadata has no config echo")
        try:
            raw["level_sizes"] = tuple(raw.get("level_sizes", ()))
            config = ModelConfig(**raw)
        except TypeError as exc:
            raise CorruptCheckpoint(f"bad config echo: {exc}") from exc
        model = cls(config)
        expected = model.named_params()
        missing = sorted(set(expected) - set(ckpt.tensors))
        if missing:
            raise CorruptCheckpoint(f"checkpoint lacks tensors: {missing[:5]}")
        for name, t in expected.items():
            arr = ckpt.tensor(name)
            if tuple(arr.shape) != t.shape:
                raise CorruptCheckpoint(
                    f"tensor {name!r} has shape {arr.shape}, expected {t.shape}"
                )
            t.data = snap32(arr.astype(np.float64))
        return model
