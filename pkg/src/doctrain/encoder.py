"""Two-tier document encoder.

The lower tier is a small frozen transformer that featurizes one sentence at a
time (mean pool over sub-word hash pieces). The upper tier is a trainable
post-norm transformer that consumes either sentence vectors (pre-training) or
token embeddings plus learned positions (fine-tuning). Both tiers share the
same token-vector initialization, mirroring a lower featurizer and an
embedding table copied from one parent model.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, LengthError, ShapeError, VocabularyError
from .optim import snap32
from .seeding import make_rng
from .tensor import Tensor
from .text import NUM_RESERVED, subword_ids

log = logging.getLogger(__name__)

LORA_TARGETS = ("query", "key", "value", "output", "ffn")

# sub-word pieces per sentence are capped defensively; desk-scale sentences
# stay far below this
_MAX_PIECES = 1024


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    vocab_size: int = 8192
    max_positions: int = 512
    max_sentences: int = 64
    lower_layers: int = 2
    level_sizes: tuple[int, ...] = ()
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.d_model < 1 or self.num_layers < 0 or self.lower_layers < 1:
            raise ConfigError(f"bad sizes in {self}")
        if self.num_heads < 1 or self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}"
            )
        if self.ffn_dim < 1:
            raise ConfigError(f"ffn_dim must be >= 1, got {self.ffn_dim}")
        if self.vocab_size <= NUM_RESERVED:
            raise ConfigError(f"vocab_size must exceed {NUM_RESERVED}")
        if self.max_positions < 1 or self.max_sentences < 1:
            raise ConfigError("positional/sentence capacity must be >= 1")
        if any(c < 1 for c in self.level_sizes):
            raise ConfigError(f"level_sizes must be positive, got {self.level_sizes}")
        return self


def _init(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return snap32(rng.normal(0.0, 0.02, shape))


class TransformerLayer:
    """One post-norm block: self-attention, then a GELU feed-forward."""

    def __init__(self, d_model: int, num_heads: int, ffn_dim: int,
                 rng: np.random.Generator, trainable: bool):
        self.d_model = d_model
        self.num_heads = num_heads
        mk = lambda *shape: Tensor(_init(rng, *shape), requires_grad=trainable)
        zeros = lambda *shape: Tensor(np.zeros(shape), requires_grad=trainable)
        ones = lambda *shape: Tensor(np.ones(shape), requires_grad=trainable)
        self.wq, self.bq = mk(d_model, d_model), zeros(d_model)
        self.wk, self.bk = mk(d_model, d_model), zeros(d_model)
        self.wv, self.bv = mk(d_model, d_model), zeros(d_model)
        self.wo, self.bo = mk(d_model, d_model), zeros(d_model)
        self.norm1_g, self.norm1_b = ones(d_model), zeros(d_model)
        self.w1, self.b1 = mk(d_model, ffn_dim), zeros(ffn_dim)
        self.w2, self.b2 = mk(ffn_dim, d_model), zeros(d_model)
        self.norm2_g, self.norm2_b = ones(d_model), zeros(d_model)

    def named_params(self) -> dict[str, Tensor]:
        return {
            "attention.query.weight": self.wq, "attention.query.bias": self.bq,
            "attention.key.weight": self.wk, "attention.key.bias": self.bk,
            "attention.value.weight": self.wv, "attention.value.bias": self.bv,
            "attention.output.weight": self.wo, "attention.output.bias": self.bo,
            "norm1.gain": self.norm1_g, "norm1.bias": self.norm1_b,
            "ffn.w1": self.w1, "ffn.b1": self.b1,
            "ffn.w2": self.w2, "ffn.b2": self.b2,
            "norm2.gain": self.norm2_g, "norm2.bias": self.norm2_b,
        }

    @staticmethod
    def _adapted(x: Tensor, w: Tensor, b: Tensor, pairs) -> Tensor:
        out = T.matmul(x, w) + b
        if pairs:
            for pair in pairs:
                out = out + T.matmul(T.matmul(x, pair.a), pair.b)
        return out

    def forward(self, x: Tensor, adapters: dict | None = None,
                return_attention: bool = False):
        """[S, d] -> [S, d]; optionally also the [heads, S, S] attention map."""
        s, d = x.shape
        if d != self.d_model:
            raise ShapeError(f"layer width {self.d_model} got input width {d}")
        ad = adapters or {}
        q = self._adapted(x, self.wq, self.bq, ad.get("query"))
        k = self._adapted(x, self.wk, self.bk, ad.get("key"))
        v = self._adapted(x, self.wv, self.bv, ad.get("value"))
        h, dh = self.num_heads, d // self.num_heads
        split = lambda t: T.transpose(T.reshape(t, (s, h, dh)), (1, 0, 2))
        scores = T.matmul(split(q), T.transpose(split(k), (0, 2, 1))) * (dh**-0.5)
        attn = T.softmax(scores, axis=-1)
        ctx = T.reshape(T.transpose(T.matmul(attn, split(v)), (1, 0, 2)), (s, d))
        ffn_pairs = ad.get("ffn")
        attn_out = self._adapted(ctx, self.wo, self.bo, ad.get("output"))
        x = T.layer_norm(x + attn_out, self.norm1_g, self.norm1_b)
        hidden = T.gelu(self._adapted(x, self.w1, self.b1,
                                      ffn_pairs[:1] if ffn_pairs else None))
        ffn_out = self._adapted(hidden, self.w2, self.b2,
                                ffn_pairs[1:] if ffn_pairs else None)
        x = T.layer_norm(x + ffn_out, self.norm2_g, self.norm2_b)
        if return_attention:
            return x, attn.data
        return x


class UpperEncoder:
    """Stack of trainable transformer layers shared by both input paths."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.layers = [
            TransformerLayer(config.d_model, config.num_heads, config.ffn_dim,
                             rng, trainable=True)
            for _ in range(config.num_layers)
        ]

    def forward(self, x: Tensor, adapter: "LoraAdapter | None" = None,
                return_attention: bool = False):
        maps = []
        for i, layer in enumerate(self.layers):
            ad = adapter.layer_adapters(i) if adapter is not None else None
            if return_attention:
                x, attn = layer.forward(x, ad, return_attention=True)
                maps.append(attn)
            else:
                x = layer.forward(x, ad)
        return (x, maps) if return_attention else x

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            for name, t in layer.named_params().items():
                out[f"upper.{i}.{name}"] = t
        return out


class LowerEncoder:
    """Frozen sentence featurizer: sub-word hash pieces -> small transformer
    -> mean pool. Token rows are initialized from the same derived seed as the
    trainable embedding table, then kept as an independent frozen copy."""

    def __init__(self, config: ModelConfig):
        self.config = config
        # identical derivation to EmbeddingTable.token: shared lineage
        self.token = Tensor(_init(make_rng(config.seed, "embed.token"),
                                  config.vocab_size, config.d_model))
        rng = make_rng(config.seed, "lower")
        self.layers = [
            TransformerLayer(config.d_model, config.num_heads, config.ffn_dim,
                             rng, trainable=False)
            for _ in range(config.lower_layers)
        ]
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, sentence: str) -> np.ndarray:
        """One sentence -> one d_model vector (cached; deterministic)."""
        hit = self._cache.get(sentence)
        if hit is not None:
            return hit
        ids = subword_ids(sentence, self.config.vocab_size)[:_MAX_PIECES]
        if not ids:
            ids = [NUM_RESERVED]  # degenerate sentence with no word characters
        with T.no_grad():
            x = T.embedding(self.token, ids)
            for layer in self.layers:
                x = layer.forward(x)
            vec = x.data.mean(axis=0)
        self._cache[sentence] = vec
        return vec

    def named_params(self) -> dict[str, Tensor]:
        out = {"lower.token": self.token}
        for i, layer in enumerate(self.layers):
            for name, t in layer.named_params().items():
                out[f"lower.{i}.{name}"] = t
        return out

    def state_bytes(self) -> bytes:
        """Digest of every frozen parameter, for freeze-contract checks."""
        params = self.named_params()
        h = hashlib.sha256()
        for name in sorted(params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(
                params[name].data.astype(np.float32)).tobytes())
        return h.digest()


class EmbeddingTable:
    """Token vectors plus learned positional vectors for the token path."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.token = Tensor(_init(make_rng(config.seed, "embed.token"),
                                  config.vocab_size, config.d_model),
                            requires_grad=True)
        self.position = Tensor(_init(make_rng(config.seed, "embed.position"),
                                     config.max_positions, config.d_model),
                               requires_grad=True)

    def rows(self, ids: list[int]) -> Tensor:
        """[T] ids -> [T, d] input rows: token vector plus positional vector."""
        n = len(ids)
        if n == 0:
            raise LengthError("token sequence is empty")
        if n > self.config.max_positions:
            raise LengthError(
                f"sequence length {n} exceeds positional capacity "
                f"{self.config.max_positions}"
            )
        bad = [i for i in ids if not 0 <= int(i) < self.config.vocab_size]
        if bad:
            raise VocabularyError(
                f"token id(s) outside vocabulary of size "
                f"{self.config.vocab_size}: {bad[:5]}"
            )
        return T.embedding(self.token, ids) + T.take(self.position, slice(0, n))

    def named_params(self) -> dict[str, Tensor]:
        return {"embed.token": self.token, "embed.position": self.position}


class ClassificationHeads:
    """One affine map per taxonomy level; level widths include the null class.

    Heads start at zero so initial logits are uniform and each level's loss
    starts at exactly ln(classes).
    """

    def __init__(self, d_model: int, level_sizes: tuple[int, ...]):
        self.level_sizes = tuple(int(c) for c in level_sizes)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for c in self.level_sizes:
            self.weights.append(Tensor(np.zeros((d_model, c + 1)), requires_grad=True))
            self.biases.append(Tensor(np.zeros(c + 1), requires_grad=True))

    @property
    def depth(self) -> int:
        return len(self.level_sizes)

    def logits_matrix(self, doc_vectors: Tensor) -> list[Tensor]:
        """[N, d] document vectors -> per level [N, C_level + 1] logits."""
        if doc_vectors.ndim != 2:
            raise ShapeError(f"expected [N, d] vectors, got {doc_vectors.shape}")
        return [T.matmul(doc_vectors, w) + b
                for w, b in zip(self.weights, self.biases)]

    def logits(self, doc_vector: Tensor) -> list[Tensor]:
        """[d] document vector -> per level [C_level + 1] logits."""
        mat = T.reshape(doc_vector, (1, doc_vector.shape[-1]))
        return [T.reshape(lv, (lv.shape[-1],)) for lv in self.logits_matrix(mat)]

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"heads.{i}.weight"] = w
            out[f"heads.{i}.bias"] = b
        return out


@dataclass
class LoraPair:
    a: Tensor
    b: Tensor


class LoraAdapter:
    """Low-rank residual factors W x + B(A x) for selected projections.

    B starts at zero, so a fresh adapter computes exactly the base forward.
    Square attention targets contribute 2*r*d_model parameters each; the ffn
    target factors both feed-forward matrices (r*(d_model+ffn_dim) each).
    """

    def __init__(self, config: ModelConfig, rank: int,
                 targets: tuple[str, ...], seed: int):
        if rank < 0:
            raise ConfigError(f"lora rank must be >= 0, got {rank}")
        bad = [t for t in targets if t not in LORA_TARGETS]
        if bad:
            raise ConfigError(f"unknown lora target(s) {bad}; valid: {LORA_TARGETS}")
        if len(set(targets)) != len(targets):
            raise ConfigError(f"duplicate lora targets: {targets}")
        self.rank = rank
        self.targets = tuple(targets)
        self._adapters: list[dict[str, list[LoraPair]]] = []
        rng = make_rng(seed, "lora")
        d, f = config.d_model, config.ffn_dim
        for _ in range(config.num_layers):
            per_layer: dict[str, list[LoraPair]] = {}
            if rank > 0:
                for target in self.targets:
                    shapes = ([(d, f), (f, d)] if target == "ffn" else [(d, d)])
                    pairs = []
                    for d_in, d_out in shapes:
                        a = Tensor(_init(rng, d_in, rank), requires_grad=True)
                        b = Tensor(np.zeros((rank, d_out)), requires_grad=True)
                        pairs.append(LoraPair(a, b))
                    per_layer[target] = pairs
            self._adapters.append(per_layer)

    def layer_adapters(self, layer_idx: int) -> dict[str, list[LoraPair]] | None:
        per_layer = self._adapters[layer_idx]
        return per_layer or None

    def trainable_tensors(self) -> list[Tensor]:
        out = []
        for per_layer in self._adapters:
            for target in sorted(per_layer):
                for pair in per_layer[target]:
                    out.extend((pair.a, pair.b))
        return out

    def num_params(self) -> int:
        return sum(t.size for t in self.trainable_tensors())


class AdaptedUpperEncoder:
    """View of an upper encoder with adapters active and base weights frozen."""

    def __init__(self, base: UpperEncoder, adapter: LoraAdapter):
        self.base = base
        self.adapter = adapter

    def forward(self, x: Tensor, return_attention: bool = False):
        if self.adapter.rank == 0:
            # rank 0 is a strict no-op view
            return self.base.forward(x, return_attention=return_attention)
        return self.base.forward(x, adapter=self.adapter,
                                 return_attention=return_attention)


def apply_lora(upper: UpperEncoder, rank: int,
               targets: tuple[str, ...] = ("query", "value"),
               seed: int = 0) -> AdaptedUpperEncoder:
    return AdaptedUpperEncoder(upper, LoraAdapter(upper.config, rank, targets, seed))
