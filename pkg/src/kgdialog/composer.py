"""Embedding, the desk-scale context encoder, and knowledge composition.

The composition pipeline turns one dialog context plus its acquired
knowledge into the multi-level composed representation T_c:

  1. Embed attribute-knowledge tokens (E_k), context tokens (E_t), and
     projected context image features (E_v), positions running contiguously
     across the concatenation.
  2. Encode the concatenation with a small trainable transformer-style
     encoder to get the attribute-composed representation T_t.
  3. Encode each relation tuple, mean-pool to one row each (T_h), reorganize
     against T_t via cross-attention, and fuse the two views position-wise
     into T_c with learned confidence weights r_t, r_h.

With no relation tuples the relation stage is skipped and T_c = T_t.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .acquire import (AttributeKnowledge, RelationTuple, linearize_tuple,
                      order_tuples, tokenize)
from .autodiff import Tensor

__all__ = [
    "Vocabulary", "EmbeddingTable", "AttentionParams", "MlpParams",
    "EncoderBlockParams", "ImageProjectionParams", "FusionParams",
    "ComposerParams", "ComposedRepresentation", "tokenize",
    "linearize_attributes", "embed_tokens", "embed_indices",
    "project_image_features", "encode", "compose_attributes",
    "encode_relation_tuples", "reorganize_relations", "fuse", "compose",
    "NoRelationKnowledge",
]

logger = logging.getLogger(__name__)


class NoRelationKnowledge(ValueError):
    """Signals that relation composition must be skipped (no tuples)."""


class Vocabulary:
    """Token-to-index map with four reserved entries.

    Indices 0..3 are pad, begin, end, unknown; real tokens follow in sorted
    order, so the same token multiset always yields the same mapping.
    Lookup lowercases, making the vocabulary case-insensitive.
    """

    RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
    PAD, BOS, EOS, UNK = 0, 1, 2, 3

    def __init__(self, tokens: Iterable[str]):
        cleaned = sorted({t.lower() for t in tokens} - set(self.RESERVED))
        if not cleaned:
            raise ValueError("vocabulary needs at least one real token")
        self._tokens = list(self.RESERVED) + cleaned
        self._index = {tok: i for i, tok in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def index(self, token: str) -> int:
        return self._index.get(token.lower(), self.UNK)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index(t) for t in tokens]

    def decode(self, indices: Sequence[int]) -> list[str]:
        return [self.token(i) for i in indices]

    @property
    def tokens(self) -> list[str]:
        """All tokens including the reserved head, in index order."""
        return list(self._tokens)


@dataclass
class EmbeddingTable:
    """Trainable token and position embeddings sharing one width D."""

    token: Tensor      # V x D
    position: Tensor   # L_max x D

    @property
    def dim(self) -> int:
        return self.token.shape[1]

    @property
    def max_len(self) -> int:
        return self.position.shape[0]


@dataclass
class AttentionParams:
    """Single-head attention projections, each D x D."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor


@dataclass
class MlpParams:
    """Two-layer perceptron weights: D -> hidden -> D."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class EncoderBlockParams:
    """One post-norm encoder block: self-attention then MLP."""

    attn: AttentionParams
    ln1_gain: Tensor
    ln1_bias: Tensor
    mlp: MlpParams
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class ImageProjectionParams:
    """Linear map from image feature space to D, with layer-norm params."""

    w: Tensor      # feature_dim x D
    b: Tensor      # 1 x D
    gain: Tensor   # 1 x D
    bias: Tensor   # 1 x D


@dataclass
class FusionParams:
    """Attention fusion of T_t and the reorganized relation view.

    Separate tanh-linear scorers per side share one query vector ``a`` that
    asks which side contributes more at each position.
    """

    w_t: Tensor   # D x D
    b_t: Tensor   # 1 x D
    w_h: Tensor   # D x D
    b_h: Tensor   # 1 x D
    a: Tensor     # D x 1


@dataclass
class ComposerParams:
    """Everything the composition pipeline trains."""

    table: EmbeddingTable
    image_proj: ImageProjectionParams
    encoder: tuple[EncoderBlockParams, ...]
    relation_attn: AttentionParams
    fusion: FusionParams


@dataclass
class ComposedRepresentation:
    """The composition outputs for one context, plus inspection hooks.

    ``E_k`` is the attribute-knowledge embedding the decoder's knowledge
    sub-layer attends over. ``relation_attention``, ``r_t``, ``r_h`` are
    None when the context had no relation tuples (then T_c is T_t itself).
    """

    E_k: Tensor
    T_t: Tensor
    T_h: Tensor
    T_c: Tensor
    tuples: list[RelationTuple]
    relation_attention: Optional[Tensor]
    r_t: Optional[Tensor]
    r_h: Optional[Tensor]
    n_knowledge: int
    n_text: int
    n_visual: int

    @property
    def n_positions(self) -> int:
        return self.n_knowledge + self.n_text + self.n_visual


def linearize_attributes(knowledge: AttributeKnowledge) -> list[str]:
    """Render attribute knowledge as a token run: "type : value ;" per pair,
    in the knowledge's deterministic order."""
    tokens: list[str] = []
    for ap in knowledge:
        tokens += tokenize(ap.pair.attribute_type)
        tokens.append(":")
        tokens += tokenize(ap.pair.value)
        tokens.append(";")
    return tokens


def embed_tokens(tokens: Sequence[str], vocab: Vocabulary,
                 table: EmbeddingTable, offset: int = 0) -> Tensor:
    """Token embedding plus position embedding, positions offset..offset+n.

    Sequences running past the position table are truncated with a warning.
    """
    budget = table.max_len - offset
    if len(tokens) > budget:
        logger.warning("embed_tokens: truncating %d tokens to %d",
                       len(tokens), budget)
        tokens = tokens[:budget]
    if not tokens:
        return Tensor(np.zeros((0, table.dim)))
    rows = ad.take_rows(table.token, vocab.encode(tokens))
    pos = ad.slice_rows(table.position, offset, offset + len(tokens))
    return ad.add(rows, pos)


def embed_indices(indices: Sequence[int], table: EmbeddingTable,
                  offset: int = 0) -> Tensor:
    """As embed_tokens but for already-indexed tokens (decoder prefixes)."""
    if not indices:
        return Tensor(np.zeros((0, table.dim)))
    if offset + len(indices) > table.max_len:
        raise ValueError("index sequence exceeds the position table")
    rows = ad.take_rows(table.token, list(indices))
    pos = ad.slice_rows(table.position, offset, offset + len(indices))
    return ad.add(rows, pos)


def project_image_features(features: np.ndarray,
                           proj: ImageProjectionParams) -> Tensor:
    """Project image feature vectors into the model space: LN(F W + b)."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.size == 0:
        return Tensor(np.zeros((0, proj.w.shape[1])))
    if feats.ndim != 2 or feats.shape[1] != proj.w.shape[0]:
        raise ValueError(f"image features {feats.shape} do not match "
                         f"projection input dim {proj.w.shape[0]}")
    return ad.layer_norm(ad.linear(Tensor(feats), proj.w, proj.b),
                         proj.gain, proj.bias)


def encode(E: Tensor, blocks: Sequence[EncoderBlockParams]) -> Tensor:
    """Shared encoder: per block, post-norm self-attention then post-norm
    MLP, both residual. Zero blocks (or an empty input) is the identity."""
    h = E
    if h.shape[0] == 0:
        return h
    for block in blocks:
        attn_out, _ = ad.cross_attention(h, h, block.attn.w_q,
                                         block.attn.w_k, block.attn.w_v)
        h = ad.layer_norm(ad.add(h, attn_out), block.ln1_gain, block.ln1_bias)
        m = ad.mlp(h, block.mlp.w1, block.mlp.b1, block.mlp.w2, block.mlp.b2)
        h = ad.layer_norm(ad.add(h, m), block.ln2_gain, block.ln2_bias)
    return h


def compose_attributes(E_k: Tensor, E_t: Tensor, E_v: Tensor,
                       blocks: Sequence[EncoderBlockParams]) -> Tensor:
    """T_t: encode the row-concatenation [E_k, E_t, E_v]."""
    for name, part in (("E_k", E_k), ("E_t", E_t), ("E_v", E_v)):
        if part.shape[1] != E_t.shape[1]:
            raise ValueError(f"{name} width {part.shape[1]} != {E_t.shape[1]}")
    parts = [p for p in (E_k, E_t, E_v) if p.shape[0] > 0]
    if not parts:
        raise ValueError("compose_attributes: all segments empty")
    stacked = parts[0] if len(parts) == 1 else ad.concat_rows(parts)
    return encode(stacked, blocks)


def encode_relation_tuples(tuples: Iterable[RelationTuple], vocab: Vocabulary,
                           table: EmbeddingTable,
                           blocks: Sequence[EncoderBlockParams]) -> Tensor:
    """T_h: one mean-pooled encoded row per tuple, rows in the deterministic
    tuple order (shorter first, then lexicographic)."""
    rows = []
    for t in order_tuples(tuples):
        E = embed_tokens(linearize_tuple(t), vocab, table)
        rows.append(ad.mean_rows(encode(E, blocks)))
    if not rows:
        return Tensor(np.zeros((0, table.dim)))
    return ad.concat_rows(rows) if len(rows) > 1 else rows[0]


def reorganize_relations(T_t: Tensor, T_h: Tensor,
                         attn: AttentionParams) -> tuple[Tensor, Tensor]:
    """Reorganize tuple rows against each composed position.

    Cross-attention with query T_t and key/value T_h; returns the
    reorganized representation (N_b x D) and the attention weight matrix
    (N_b x N_h) for inspection.
    """
    if T_h.shape[0] == 0:
        raise NoRelationKnowledge("no relation tuples to reorganize")
    return ad.cross_attention(T_t, T_h, attn.w_q, attn.w_k, attn.w_v)


def fuse(T_t: Tensor, T_h_bar: Tensor,
         fusion: FusionParams) -> tuple[Tensor, Tensor, Tensor]:
    """Position-wise convex fusion of the two composed views.

    Each side is scored by a tanh-linear transform dotted with the query
    vector ``a``; the pair of scores at each position softmax-normalizes to
    (r_t, r_h), and T_c = r_t * T_t + r_h * T_h_bar row-wise.
    """
    if T_t.shape != T_h_bar.shape:
        raise ValueError(f"fuse: {T_t.shape} vs {T_h_bar.shape}")
    h_t = ad.tanh(ad.linear(T_t, fusion.w_t, fusion.b_t))
    h_h = ad.tanh(ad.linear(T_h_bar, fusion.w_h, fusion.b_h))
    s_t = ad.matmul(h_t, fusion.a)                      # N_b x 1
    s_h = ad.matmul(h_h, fusion.a)                      # N_b x 1
    scores = ad.transpose(ad.concat_rows([ad.transpose(s_t),
                                          ad.transpose(s_h)]))  # N_b x 2
    r = ad.softmax_rows(scores)
    r_t = ad.slice_cols(r, 0, 1)
    r_h = ad.slice_cols(r, 1, 2)
    T_c = ad.add(ad.scale_rows(T_t, r_t), ad.scale_rows(T_h_bar, r_h))
    return r_t, r_h, T_c


def compose(knowledge_tokens: Sequence[str], ctx_tokens: Sequence[str],
            image_features: np.ndarray, tuples: Iterable[RelationTuple],
            vocab: Vocabulary, params: ComposerParams) -> ComposedRepresentation:
    """Run the full composition pipeline for one context."""
    table = params.table
    n_vis = int(np.asarray(image_features).shape[0]) if np.asarray(
        image_features).size else 0
    ctx_tokens = list(ctx_tokens)
    # keep context and image rows; give knowledge tokens the leftover budget
    knowledge_budget = table.max_len - len(ctx_tokens) - n_vis
    if len(knowledge_tokens) > knowledge_budget:
        logger.warning("compose: truncating knowledge tokens %d -> %d",
                       len(knowledge_tokens), max(knowledge_budget, 0))
        knowledge_tokens = list(knowledge_tokens)[:max(knowledge_budget, 0)]

    E_k = embed_tokens(knowledge_tokens, vocab, table, offset=0)
    n_k = E_k.shape[0]
    E_t = embed_tokens(ctx_tokens, vocab, table, offset=n_k)
    n_t = E_t.shape[0]
    E_v = project_image_features(image_features, params.image_proj)
    if E_v.shape[0] > 0:
        pos = ad.slice_rows(table.position, n_k + n_t, n_k + n_t + E_v.shape[0])
        E_v = ad.add(E_v, pos)

    T_t = compose_attributes(E_k, E_t, E_v, params.encoder)
    ordered = order_tuples(tuples)
    T_h = encode_relation_tuples(ordered, vocab, table, params.encoder)
    if T_h.shape[0] == 0:
        return ComposedRepresentation(
            E_k=E_k, T_t=T_t, T_h=T_h, T_c=T_t, tuples=[],
            relation_attention=None, r_t=None, r_h=None,
            n_knowledge=n_k, n_text=n_t, n_visual=E_v.shape[0])
    T_h_bar, weights = reorganize_relations(T_t, T_h, params.relation_attn)
    r_t, r_h, T_c = fuse(T_t, T_h_bar, params.fusion)
    return ComposedRepresentation(
        E_k=E_k, T_t=T_t, T_h=T_h, T_c=T_c, tuples=ordered,
        relation_attention=weights, r_t=r_t, r_h=r_h,
        n_knowledge=n_k, n_text=n_t, n_visual=E_v.shape[0])
