"""Relation-aware graph encoder and back-parsing decoder.

All functions take a ``params`` dict of named :class:`Tensor` objects and
operate on padded batches:

* encoder inputs ``(B, N)`` concept ids, ``(B, N, N)`` relation ids and a
  ``(B, N)`` node mask; index 0 of every graph is the NULL node;
* decoder inputs ``(B, T)`` token ids (``<s>`` followed by the gold prefix).

The first decoder layer may attend to up to three extra *slot* positions
per query: the previous word, node vector and projected edge vector. Slots
are only visible to the query they belong to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .tensor import Tensor


# --------------------------------------------------------------- parameters


def _layer_norm_params(p: dict, prefix: str, d: int) -> None:
    p[prefix + ".g"] = np.ones(d)
    p[prefix + ".b"] = np.zeros(d)


def _linear(p: dict, rng, prefix: str, n_in: int, n_out: int, bias: bool = True) -> None:
    p[prefix + ".w"] = T.xavier_uniform(rng, (n_in, n_out))
    if bias:
        p[prefix + ".b"] = np.zeros(n_out)


def _attention_params(p: dict, rng, prefix: str, d: int) -> None:
    for name in ("wq", "wk", "wv", "wo"):
        p[f"{prefix}.{name}"] = T.xavier_uniform(rng, (d, d))


def init_params(
    cfg: ModelConfig,
    n_concepts: int,
    n_words: int,
    n_relations: int,
    n_labels: int,
    rng: np.random.Generator,
) -> dict[str, Tensor]:
    """Create every learnable array in a fixed order (the checkpoint order)."""
    d, dr, db, ffn = cfg.d, cfg.d_r, cfg.d_biaffine, cfg.ffn_size
    dh = d // cfg.heads
    p: dict[str, np.ndarray] = {}
    p["enc.concept_emb"] = rng.normal(0.0, d**-0.5, size=(n_concepts, d))
    p["rel_emb"] = rng.normal(0.0, dr**-0.5, size=(n_relations, dr))
    for i in range(cfg.layers):
        pre = f"enc.{i}"
        _attention_params(p, rng, pre + ".attn", d)
        p[pre + ".attn.wr"] = T.xavier_uniform(rng, (dr, dh))
        _layer_norm_params(p, pre + ".ln1", d)
        _linear(p, rng, pre + ".ff1", d, ffn)
        _linear(p, rng, pre + ".ff2", ffn, d)
        _layer_norm_params(p, pre + ".ln2", d)
    p["word_emb"] = rng.normal(0.0, d**-0.5, size=(n_words, d))
    for i in range(cfg.layers):
        pre = f"dec.{i}"
        _attention_params(p, rng, pre + ".self", d)
        _layer_norm_params(p, pre + ".ln1", d)
        _attention_params(p, rng, pre + ".cross", d)
        _layer_norm_params(p, pre + ".ln2", d)
        _linear(p, rng, pre + ".ff1", d, ffn)
        _linear(p, rng, pre + ".ff2", ffn, d)
        _layer_norm_params(p, pre + ".ln3", d)
    p["dec.label_emb"] = rng.normal(0.0, dr**-0.5, size=(n_labels, dr))
    _linear(p, rng, "dec.edge_proj", dr + d, d)
    for head in ("arc_to", "arc_from", "label_to", "label_from"):
        _linear(p, rng, f"biaff.{head}", d, db)
    for name, r in (("arc", 1), ("label", n_labels)):
        p[f"biaff.{name}.U"] = T.xavier_uniform(rng, (db, r, db))
        p[f"biaff.{name}.W"] = T.xavier_uniform(rng, (2 * db, r))
        p[f"biaff.{name}.b"] = np.zeros(r)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def linear(params: dict, prefix: str, x: Tensor) -> Tensor:
    y = x @ params[prefix + ".w"]
    b = params.get(prefix + ".b")
    return y if b is None else y + b


def layer_norm(params: dict, prefix: str, x: Tensor) -> Tensor:
    return T.layer_norm(x, params[prefix + ".g"], params[prefix + ".b"], 1e-5)


def _heads(x: Tensor, h: int) -> Tensor:
    """``(B, N, d) -> (B, h, N, d/h)``."""
    B, N, d = x.shape
    return x.reshape(B, N, h, d // h).transpose(0, 2, 1, 3)


def _merge(x: Tensor) -> Tensor:
    B, h, N, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, h * dh)


def feed_forward(params: dict, prefix: str, x: Tensor, rate: float, rng) -> Tensor:
    return linear(params, prefix + ".ff2", T.dropout(T.relu(linear(params, prefix + ".ff1", x)), rate, rng))


_PE_CACHE: dict[int, np.ndarray] = {}


def positional_encoding(n: int, d: int) -> np.ndarray:
    pe = _PE_CACHE.get(d)
    if pe is None or pe.shape[0] < n:
        m = max(n, 256)
        pos = np.arange(m)[:, None]
        div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
        pe = np.zeros((m, d))
        pe[:, 0::2] = np.sin(pos * div)
        pe[:, 1::2] = np.cos(pos * div)[:, : d // 2]
        _PE_CACHE[d] = pe
    return pe[:n]


# ------------------------------------------------------------------ encoder


def relation_attention(
    params: dict,
    prefix: str,
    h: Tensor,
    rel_ids: np.ndarray,
    node_mask: np.ndarray,
    heads: int,
    rel_emb: Tensor,
    rate: float = 0.0,
    rng=None,
    weights_out: list | None = None,
) -> Tensor:
    """Multi-head self-attention whose keys and values carry pair relations.

    For head ``n`` with ``r_ij = W^R gamma[rel(i, j)]``:
    ``e_ij = q_i . (k_j + r_ij) / sqrt(d/heads)`` and
    ``out_i = sum_j softmax(e)_ij (v_j + r_ij)``.
    """
    B, N, d = h.shape
    dh = d // heads
    q = _heads(h @ params[prefix + ".wq"], heads)
    k = _heads(h @ params[prefix + ".wk"], heads)
    v = _heads(h @ params[prefix + ".wv"], heads)
    rel_proj = rel_emb @ params[prefix + ".wr"]  # (|R|, dh)
    r = T.embedding(rel_proj, rel_ids)  # (B, N, N, dh)
    scores = q @ T.swap_last(k)
    rel_scores = (q.transpose(0, 2, 1, 3) @ T.swap_last(r)).transpose(0, 2, 1, 3)
    e = T.scale(scores + rel_scores, 1.0 / math.sqrt(dh))
    alpha = T.masked_softmax(e, node_mask[:, None, None, :], axis=-1)
    if weights_out is not None:
        weights_out.append(alpha.data)
    alpha = T.dropout(alpha, rate, rng)
    out = alpha @ v + (alpha.transpose(0, 2, 1, 3) @ r).transpose(0, 2, 1, 3)
    return _merge(out) @ params[prefix + ".wo"]


def encode(
    params: dict,
    cfg: ModelConfig,
    concept_ids: np.ndarray,
    rel_ids: np.ndarray,
    node_mask: np.ndarray,
    rng=None,
    weights_out: list | None = None,
) -> Tensor:
    """Top-layer node states ``(B, N, d)``, NULL node included at index 0."""
    h = T.scale(T.embedding(params["enc.concept_emb"], concept_ids), math.sqrt(cfg.d))
    h = T.dropout(h, cfg.residual_dropout, rng)
    rel_emb = params["rel_emb"]
    for i in range(cfg.layers):
        pre = f"enc.{i}"
        a = relation_attention(
            params, pre + ".attn", h, rel_ids, node_mask, cfg.heads, rel_emb,
            cfg.attention_dropout, rng, weights_out,
        )
        h = layer_norm(params, pre + ".ln1", h + T.dropout(a, cfg.residual_dropout, rng))
        f = feed_forward(params, pre, h, cfg.residual_dropout, rng)
        h = layer_norm(params, pre + ".ln2", h + T.dropout(f, cfg.residual_dropout, rng))
    return h


# ------------------------------------------------------------------ decoder


@dataclass
class DecoderCache:
    """Keys/values of all previous positions for every decoder layer."""

    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)
    cross: list = field(default_factory=list)
    length: int = 0

    def reorder(self, idx: np.ndarray) -> None:
        self.keys = [k[idx] for k in self.keys]
        self.values = [v[idx] for v in self.values]
        self.cross = [(k[idx], v[idx]) for k, v in self.cross]


def _causal_mask(T_new: int, past: int) -> np.ndarray:
    q = np.arange(T_new)[:, None] + past
    k = np.arange(past + T_new)[None, :]
    return k <= q


def decoder_self_attention(
    params: dict,
    prefix: str,
    x: Tensor,
    heads: int,
    cache: DecoderCache | None,
    layer: int,
    slots: Tensor | None = None,
    rate: float = 0.0,
    rng=None,
) -> Tensor:
    """Causal self-attention; ``slots`` ``(B, T, S, d)`` adds per-query key/value positions."""
    B, Tn, d = x.shape
    dh = d // heads
    q = _heads(x @ params[prefix + ".wq"], heads)
    k = _heads(x @ params[prefix + ".wk"], heads)
    v = _heads(x @ params[prefix + ".wv"], heads)
    past = 0
    if cache is not None:
        if layer < len(cache.keys):
            past = cache.keys[layer].shape[2]
            k = T.concat([cache.keys[layer], k], axis=2)
            v = T.concat([cache.values[layer], v], axis=2)
            cache.keys[layer], cache.values[layer] = k, v
        else:
            cache.keys.append(k)
            cache.values.append(v)
    scores = q @ T.swap_last(k)  # (B, h, T, P+T)
    mask = _causal_mask(Tn, past)
    if slots is None:
        alpha = T.masked_softmax(T.scale(scores, 1.0 / math.sqrt(dh)), mask[None, None], axis=-1)
        alpha = T.dropout(alpha, rate, rng)
        return _merge(alpha @ v) @ params[prefix + ".wo"]
    S = slots.shape[2]
    # (B, T, S, d) -> (B, h, T, S, dh)
    ks = (slots @ params[prefix + ".wk"]).reshape(B, Tn, S, heads, dh).transpose(0, 3, 1, 2, 4)
    vs = (slots @ params[prefix + ".wv"]).reshape(B, Tn, S, heads, dh).transpose(0, 3, 1, 2, 4)
    slot_scores = (q.reshape(B, heads, Tn, 1, dh) @ T.swap_last(ks)).reshape(B, heads, Tn, S)
    full = T.concat([scores, slot_scores], axis=-1)
    full_mask = np.concatenate([mask, np.ones((Tn, S), dtype=bool)], axis=1)
    alpha = T.masked_softmax(T.scale(full, 1.0 / math.sqrt(dh)), full_mask[None, None], axis=-1)
    alpha = T.dropout(alpha, rate, rng)
    a_main, a_slot = T.split(alpha, [past + Tn, S], axis=-1)
    out = a_main @ v + (a_slot.reshape(B, heads, Tn, 1, S) @ vs).reshape(B, heads, Tn, dh)
    return _merge(out) @ params[prefix + ".wo"]


def cross_attention(
    params: dict,
    prefix: str,
    x: Tensor,
    enc: Tensor,
    node_mask: np.ndarray,
    heads: int,
    cache: DecoderCache | None,
    layer: int,
    rate: float = 0.0,
    rng=None,
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over encoder states; returns (output, weights)."""
    dh = x.shape[-1] // heads
    q = _heads(x @ params[prefix + ".wq"], heads)
    if cache is not None and layer < len(cache.cross):
        k, v = cache.cross[layer]
    else:
        k = _heads(enc @ params[prefix + ".wk"], heads)
        v = _heads(enc @ params[prefix + ".wv"], heads)
        if cache is not None:
            cache.cross.append((k, v))
    e = T.scale(q @ T.swap_last(k), 1.0 / math.sqrt(dh))
    beta = T.masked_softmax(e, node_mask[:, None, None, :], axis=-1)
    out = T.dropout(beta, rate, rng) @ v
    return _merge(out) @ params[prefix + ".wo"], beta


def embed_tokens(params: dict, cfg: ModelConfig, tokens: np.ndarray, offset: int = 0) -> Tensor:
    B, Tn = tokens.shape
    x = T.scale(T.embedding(params["word_emb"], tokens), math.sqrt(cfg.d))
    return x + positional_encoding(offset + Tn, cfg.d)[offset:]


def decode_block(
    params: dict,
    cfg: ModelConfig,
    tokens: np.ndarray,
    enc: Tensor,
    node_mask: np.ndarray,
    slots: Tensor | None = None,
    cache: DecoderCache | None = None,
    rng=None,
) -> tuple[Tensor, Tensor]:
    """Run all decoder layers over a block of new positions.

    Returns the top-layer states ``(B, T, d)`` and the top-layer cross
    attention ``(B, heads, T, N)`` (before dropout).
    """
    offset = cache.length if cache is not None else 0
    x = T.dropout(embed_tokens(params, cfg, tokens, offset), cfg.residual_dropout, rng)
    beta = None
    for i in range(cfg.layers):
        pre = f"dec.{i}"
        a = decoder_self_attention(
            params, pre + ".self", x, cfg.heads, cache, i,
            slots if i == 0 else None, cfg.attention_dropout, rng,
        )
        x = layer_norm(params, pre + ".ln1", x + T.dropout(a, cfg.residual_dropout, rng))
        c, beta = cross_attention(
            params, pre + ".cross", x, enc, node_mask, cfg.heads, cache, i, cfg.attention_dropout, rng,
        )
        x = layer_norm(params, pre + ".ln2", x + T.dropout(c, cfg.residual_dropout, rng))
        f = feed_forward(params, pre, x, cfg.residual_dropout, rng)
        x = layer_norm(params, pre + ".ln3", x + T.dropout(f, cfg.residual_dropout, rng))
    if cache is not None:
        cache.length += tokens.shape[1]
    return x, beta


# -------------------------------------------------------------------- heads


def word_logits(params: dict, states: Tensor) -> Tensor:
    """Generator sharing the word embedding matrix."""
    return states @ T.swap_last(params["word_emb"])


def node_distribution(beta: Tensor) -> Tensor:
    """Mean over heads of top-layer cross attention: ``(B, h, T, N) -> (B, T, N)``."""
    return T.mean(beta, axis=1)


def node_vector(node_dist, enc: Tensor) -> Tensor:
    """``sum_i node_dist[..., i] * enc[..., i, :]``."""
    return T.as_tensor(node_dist) @ enc


def _biaffine(params: dict, name: str, x_to: Tensor, x_from: Tensor) -> Tensor:
    """``x_to^T U x_from + W (x_to (+) x_from) + b`` for all (from, to) pairs.

    ``x_to`` is ``(B, K, db)``, ``x_from`` is ``(B, Q, db)``; output is
    ``(B, Q, K, R)``.
    """
    U, W, b = params[f"biaff.{name}.U"], params[f"biaff.{name}.W"], params[f"biaff.{name}.b"]
    db, R, _ = U.shape
    B, Q, _ = x_from.shape
    # u_from[b, q, a, r] = sum_c U[a, r, c] x_from[b, q, c]; then contract a with x_to
    u_from = T.reshape(x_from @ T.transpose(T.reshape(U, (db * R, db)), (1, 0)), (B, Q, db, R))
    bil = x_to[:, None, :, :] @ u_from
    w_to, w_from = T.split(W, [db, db], axis=0)
    lin_to = (x_to @ w_to)[:, None, :, :]
    lin_from = (x_from @ w_from)[:, :, None, :]
    return bil + lin_to + lin_from + b


def arc_scores(params: dict, s_from: Tensor, s_to: Tensor) -> Tensor:
    """Raw arc scores ``(B, Q, K)`` for arcs from query positions to key positions."""
    b_to = linear(params, "biaff.arc_to", s_to)
    b_from = linear(params, "biaff.arc_from", s_from)
    out = _biaffine(params, "arc", b_to, b_from)
    B, Q, K, _ = out.shape
    return out.reshape(B, Q, K)


def label_scores(params: dict, s_from: Tensor, s_to: Tensor) -> Tensor:
    """Raw label scores ``(B, Q, K, R)``."""
    b_to = linear(params, "biaff.label_to", s_to)
    b_from = linear(params, "biaff.label_from", s_from)
    return _biaffine(params, "label", b_to, b_from)


def label_embeddings(params: dict, cfg: ModelConfig, label_rel_ids: np.ndarray) -> Tensor:
    """Decoder edge-label embeddings: rows of the shared relation table or an own table."""
    if cfg.share_relation_embeddings:
        return T.embedding(params["rel_emb"], label_rel_ids)
    return params["dec.label_emb"]


def edge_vector(params: dict, arc_probs, label_probs, label_emb: Tensor, states: Tensor) -> Tensor:
    """Projected edge vector ``W_e (r (+) s)``.

    ``arc_probs`` ``(B, Q, K)``; ``label_probs`` ``(B, Q, K, R)`` or the
    already marginalised ``(B, Q, R)``; ``states`` ``(B, K, d)``.
    """
    arc_probs = T.as_tensor(arc_probs)
    label_probs = T.as_tensor(label_probs)
    if label_probs.ndim == 4:
        marg = T.tsum(label_probs * arc_probs.reshape(*arc_probs.shape, 1), axis=2)
    else:
        marg = label_probs
    r = marg @ label_emb
    s = arc_probs @ states
    return linear(params, "dec.edge_proj", T.concat([r, s], axis=-1))


def raw_edge_vector(arc_probs, label_probs, label_emb: Tensor, states: Tensor) -> Tensor:
    """Unprojected ``r (+) s`` of size ``d_r + d``."""
    arc_probs = T.as_tensor(arc_probs)
    marg = T.tsum(T.as_tensor(label_probs) * arc_probs.reshape(*arc_probs.shape, 1), axis=2)
    return T.concat([marg @ label_emb, arc_probs @ states], axis=-1)


def causal_arc_mask(Q: int, K: int, offset: int = 0) -> np.ndarray:
    """``mask[q, k]`` is True when key position ``k`` is not after query ``offset + q``."""
    return np.arange(K)[None, :] <= (np.arange(Q)[:, None] + offset)
