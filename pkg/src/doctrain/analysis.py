"""Embedding-space correspondence analyses: positional word-alignment score,
sentence-path vs token-path correlation, principal-component projection, and
paragraph-level lexical similarity."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ValidationError
from .model import DocumentModel
from .seeding import make_rng
from .taxonomy import _tfidf_matrix
from .tensor import Tensor, no_grad
from .text import encode_tokens, tokenize

log = logging.getLogger(__name__)

EMBEDDING_MODES = ("sentence", "token")


def _sentence_inputs(model: DocumentModel, sentences: list[str]) -> np.ndarray:
    return model.embed_sentences(sentences)


def _token_inputs(model: DocumentModel, sentences: list[str]) -> np.ndarray:
    tokens = tokenize(" ".join(sentences))
    if not tokens:
        raise ContractError("document has no tokens")
    ids = encode_tokens(tokens, model.config.vocab_size)
    if len(ids) > model.config.max_positions:
        log.warning("truncating %d tokens to %d positions",
                    len(ids), model.config.max_positions)
        ids = ids[:model.config.max_positions]
    with no_grad():
        rows = model.embed.rows(ids)
    return rows.data.copy()


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    an = np.linalg.norm(a, axis=1, keepdims=True)
    bn = np.linalg.norm(b, axis=1, keepdims=True)
    an = np.where(an == 0, 1.0, an)
    bn = np.where(bn == 0, 1.0, bn)
    return (a / an) @ (b / bn).T


def wl_metric(model: DocumentModel, doc_a: list[str], doc_b: list[str],
              embedding_mode: str = "sentence") -> float:
    """Positional distance between best-matching input embeddings.

    For each input position i of doc_a, j(i) is the doc_b position whose
    input embedding is most cosine-similar (ties: smallest |i - j|, then
    smallest j). Returns 1 + mean_i |i - j(i)|, so identical documents with
    pairwise-distinct embeddings score exactly 1.
    """
    if embedding_mode not in EMBEDDING_MODES:
        raise ConfigError(f"embedding_mode must be one of {EMBEDDING_MODES}")
    if not doc_a or not doc_b:
        raise ContractError("wl_metric needs two non-empty documents")
    embed = _sentence_inputs if embedding_mode == "sentence" else _token_inputs
    a = embed(model, doc_a)
    b = embed(model, doc_b)
    sims = _cosine_rows(a, b)
    total = 0.0
    for i in range(a.shape[0]):
        row = sims[i]
        best = row.max()
        ties = np.flatnonzero(row == best)
        j = min(ties, key=lambda jj: (abs(i - jj), jj))
        total += abs(i - int(j))
    return 1.0 + total / a.shape[0]


@dataclass(frozen=True)
class CorrelationReport:
    pearson_r: float | None
    num_pairs: int
    degenerate: bool  # a similarity vector had zero spread

    def __post_init__(self):
        if self.pearson_r is not None and not -1.0 <= self.pearson_r <= 1.000001:
            raise ContractError(f"correlation {self.pearson_r} outside [-1, 1]")


def _doc_vectors(model: DocumentModel, docs: list[list[str]]) -> tuple[np.ndarray, np.ndarray]:
    sent_vecs = []
    tok_vecs = []
    for sentences in docs:
        with no_grad():
            sent_vecs.append(model.encode_document(sentences).data.copy())
        tokens = tokenize(" ".join(sentences))
        ids = encode_tokens(tokens, model.config.vocab_size)
        if len(ids) > model.config.max_positions:
            log.warning("truncating %d tokens to %d positions",
                        len(ids), model.config.max_positions)
            ids = ids[:model.config.max_positions]
        with no_grad():
            out = model.forward_tokens(ids)
        tok_vecs.append(out.data.mean(axis=0))
    return np.stack(sent_vecs), np.stack(tok_vecs)


def _pairwise_cosines(vecs: np.ndarray) -> np.ndarray:
    sims = _cosine_rows(vecs, vecs)
    n = vecs.shape[0]
    return np.array([sims[i, j] for i, j in itertools.combinations(range(n), 2)])


def _max_min_normalize(x: np.ndarray) -> tuple[np.ndarray, bool]:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x), True
    return (x - lo) / (hi - lo), False


def representation_correlation(model: DocumentModel,
                               docs: list[list[str]]) -> CorrelationReport:
    """Pearson r between pairwise doc similarities under the two input paths.

    Doc vectors come from the sentence-embedding path and the token-embedding
    path; each path's C(n,2) cosine vector is max-min normalized before
    correlating.
    """
    if len(docs) < 3:
        raise ValidationError(f"need at least 3 documents, got {len(docs)}")
    sent_vecs, tok_vecs = _doc_vectors(model, docs)
    a, dg_a = _max_min_normalize(_pairwise_cosines(sent_vecs))
    b, dg_b = _max_min_normalize(_pairwise_cosines(tok_vecs))
    num_pairs = len(a)
    if dg_a or dg_b:
        return CorrelationReport(None, num_pairs, True)
    r = float(np.corrcoef(a, b)[0, 1])
    if not np.isfinite(r):
        return CorrelationReport(None, num_pairs, True)
    return CorrelationReport(min(max(r, -1.0), 1.0), num_pairs, False)


@dataclass(frozen=True)
class PcaResult:
    coordinates: np.ndarray         # [n, k]
    components: np.ndarray          # [k, d], unit rows
    explained_variance: np.ndarray  # [k] fractions of total variance


def pca_project(vectors: np.ndarray, k: int = 2, seed: int = 0,
                iters: int = 500) -> PcaResult:
    """Top-k principal components via seeded power iteration with deflation."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"expected [n, d] matrix, got shape {x.shape}")
    n, d = x.shape
    if k < 1 or k > d:
        raise ConfigError(f"k must sit in [1, {d}], got {k}")
    if n < k:
        raise ValidationError(f"need at least {k} vectors, got {n}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / max(n - 1, 1)
    total = float(np.trace(cov))
    rng = make_rng(seed, "pca")
    comps = np.zeros((k, d))
    ev = np.zeros(k)
    work = cov.copy()
    for c in range(k):
        v = rng.normal(size=d)
        v /= np.linalg.norm(v)
        for _ in range(iters):
            nxt = work @ v
            norm = np.linalg.norm(nxt)
            if norm < 1e-15:
                break  # no variance left in this direction
            nxt /= norm
            if np.abs(nxt @ v) > 1.0 - 1e-13:
                v = nxt
                break
            v = nxt
        lam = float(v @ work @ v)
        # deterministic sign: largest-magnitude coordinate made positive
        pivot = int(np.abs(v).argmax())
        if v[pivot] < 0:
            v = -v
        comps[c] = v
        ev[c] = max(lam, 0.0)
        work = work - lam * np.outer(v, v)
    fractions = ev / total if total > 0 else np.zeros(k)
    return PcaResult(centered @ comps.T, comps, fractions)


@dataclass(frozen=True)
class ParagraphSimilarityReport:
    scores_a: np.ndarray      # per paragraph of doc_a: max cosine vs doc_b
    scores_b: np.ndarray
    bin_edges: np.ndarray     # 11 edges over [0, 1]
    histogram: np.ndarray     # counts over both score lists


def split_paragraphs(text: str) -> list[str]:
    paras = [p.strip() for p in text.split("\n\n")]
    return [p for p in paras if p]


def paragraph_similarity(doc_a: str, doc_b: str) -> ParagraphSimilarityReport:
    """Max lexical similarity of each paragraph against the other document.

    Paragraphs are blank-line delimited and embedded as tf-idf vectors fit
    over both documents' paragraphs together; similarity is cosine.
    """
    paras_a = split_paragraphs(doc_a)
    paras_b = split_paragraphs(doc_b)
    if not paras_a or not paras_b:
        raise ContractError("each document needs at least one paragraph")
    tokens = [tokenize(p) for p in paras_a + paras_b]
    matrix, _ = _tfidf_matrix(tokens)
    rows_a = matrix[:len(paras_a)]
    rows_b = matrix[len(paras_a):]
    sims = rows_a @ rows_b.T  # rows are unit (or zero) vectors already
    scores_a = sims.max(axis=1)
    scores_b = sims.max(axis=0)
    both = np.concatenate([scores_a, scores_b])
    edges = np.linspace(0.0, 1.0, 11)
    hist, _ = np.histogram(np.clip(both, 0.0, 1.0), bins=edges)
    return ParagraphSimilarityReport(scores_a, scores_b, edges, hist)
