"""The full back-parsing generator: encoder, decoder and the three heads.

:class:`BackParser` bundles the configuration, the parameter dict and the
label-to-relation mapping. Training uses :meth:`BackParser.forward_train`
(teacher forcing with gold nodes and arcs as integration inputs); decoding
uses :meth:`BackParser.start` and :meth:`BackParser.step`, which feed the
model's own node/edge predictions back in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model as Mdl
from . import tensor as T
from .config import ModelConfig
from .data import Batch, Vocabs
from .tensor import Tensor


@dataclass
class TrainOutput:
    word_logits: Tensor  # (B, T, V)
    node_dist: Tensor  # (B, T, N)
    arc_logp: Tensor | None  # (B, T, T), causal
    label_logp: Tensor | None  # (B, T, T, R)
    states: Tensor  # (B, T, d)
    enc: Tensor  # (B, N, d)
    cross_attn: Tensor  # (B, heads, T, N)

    @property
    def arc_probs(self) -> np.ndarray:
        mask = Mdl.causal_arc_mask(self.arc_logp.shape[1], self.arc_logp.shape[2])
        return np.where(mask[None], np.exp(self.arc_logp.data), 0.0)

    @property
    def label_probs(self) -> np.ndarray:
        return np.exp(self.label_logp.data)


@dataclass
class StepOutput:
    """One decoding step for every row of the batch."""

    word_logits: np.ndarray  # (B, V)
    node_dist: np.ndarray  # (B, N)
    arc_probs: np.ndarray | None  # (B, t)
    label_probs: np.ndarray | None  # (B, t, R)
    node_vec: np.ndarray | None  # (B, d)
    edge_vec: np.ndarray | None  # (B, d_r + d), before projection
    state: np.ndarray  # (B, d)


@dataclass
class DecoderState:
    enc: Tensor
    node_mask: np.ndarray
    cache: Mdl.DecoderCache
    states: Tensor | None = None
    prev_node: Tensor | None = None  # (B, 1, d)
    prev_edge: Tensor | None = None  # (B, 1, d), projected
    step: int = 0

    def reorder(self, idx: np.ndarray) -> None:
        idx = np.asarray(idx)
        self.cache.reorder(idx)
        self.enc = self.enc[idx]
        self.node_mask = self.node_mask[idx]
        if self.states is not None:
            self.states = self.states[idx]
        if self.prev_node is not None:
            self.prev_node = self.prev_node[idx]
        if self.prev_edge is not None:
            self.prev_edge = self.prev_edge[idx]


class BackParser:
    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor], label_rel_ids: np.ndarray):
        cfg.validate()
        self.cfg = cfg
        self.params = params
        self.label_rel_ids = np.asarray(label_rel_ids, dtype=np.int64)

    @classmethod
    def create(cls, cfg: ModelConfig, vocabs: Vocabs, rng: np.random.Generator) -> "BackParser":
        params = Mdl.init_params(
            cfg, len(vocabs.concepts), len(vocabs.words), len(vocabs.relations), len(vocabs.labels), rng
        )
        return cls(cfg, params, vocabs.labels.rel_ids)

    def with_config(self, cfg: ModelConfig) -> "BackParser":
        """Same parameters under different switches."""
        return BackParser(cfg, self.params, self.label_rel_ids)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    # ------------------------------------------------------------ encoder

    def encode(self, batch: Batch, rng=None, weights_out: list | None = None) -> Tensor:
        return Mdl.encode(self.params, self.cfg, batch.concept_ids, batch.rel_ids, batch.node_mask, rng, weights_out)

    def label_embeddings(self) -> Tensor:
        return Mdl.label_embeddings(self.params, self.cfg, self.label_rel_ids)

    # ----------------------------------------------------------- training

    def _word_slot(self, tokens: np.ndarray, first: bool) -> Tensor:
        """Embedding of the previous word; zero for the first position."""
        emb = T.scale(T.embedding(self.params["word_emb"], tokens), math.sqrt(self.cfg.d))
        if first:
            keep = np.ones(tokens.shape + (1,))
            keep[:, 0] = 0.0
            emb = emb * keep
        return emb

    def forward_train(self, batch: Batch, rng=None, parallel: bool | None = None) -> TrainOutput:
        """Teacher-forced pass over a batch.

        Integration slots are built from the gold alignment rows and gold
        arcs of the previous position. Edge integration makes position
        ``t+1`` depend on top-layer states of earlier positions, so by
        default that configuration is run step by step; ``parallel=True``
        instead iterates whole-sequence passes to the exact fixed point.
        """
        cfg, p = self.cfg, self.params
        enc = self.encode(batch, rng)
        B, Tn = batch.tgt_in.shape
        edge_int = cfg.n_slots > 0 and cfg.enable_edge
        if parallel is None:
            parallel = not edge_int
        if not cfg.n_slots:
            states, beta = Mdl.decode_block(p, cfg, batch.tgt_in, enc, batch.node_mask, None, None, rng)
        elif parallel:
            states, beta = self._parallel_teacher(batch, enc, rng)
        else:
            states, beta = self._stepwise_teacher(batch, enc, rng)
        return self.heads(states, beta, enc)

    def _static_slots(self, batch: Batch, enc: Tensor) -> list[Tensor]:
        slots = [self._word_slot(batch.tgt_in, first=True)]
        if self.cfg.enable_node:
            prev = np.zeros_like(batch.gold_align)
            prev[:, 1:] = batch.gold_align[:, :-1]
            slots.append(Mdl.node_vector(prev, enc))
        return slots

    def _gold_edge(self, batch: Batch, states: Tensor, rows: slice) -> Tensor:
        K = states.shape[1]
        return Mdl.edge_vector(
            self.params,
            batch.arc_weights[:, rows, :K],
            batch.label_marginal[:, rows],
            self.label_embeddings(),
            states,
        )

    def _parallel_teacher(self, batch: Batch, enc: Tensor, rng):
        cfg, p = self.cfg, self.params
        B, Tn = batch.tgt_in.shape
        static = self._static_slots(batch, enc)
        if not cfg.enable_edge:
            slots = T.stack(static, axis=2)
            return Mdl.decode_block(p, cfg, batch.tgt_in, enc, batch.node_mask, slots, None, rng)
        edge = Tensor(np.zeros((B, Tn, cfg.d)))
        for _ in range(Tn):
            slots = T.stack([*static, edge], axis=2)
            states, beta = Mdl.decode_block(p, cfg, batch.tgt_in, enc, batch.node_mask, slots, None, rng)
            e = self._gold_edge(batch, states, slice(0, Tn - 1))
            edge = T.concat([Tensor(np.zeros((B, 1, cfg.d))), e], axis=1)
        return states, beta

    def _stepwise_teacher(self, batch: Batch, enc: Tensor, rng):
        cfg, p = self.cfg, self.params
        B, Tn = batch.tgt_in.shape
        static = self._static_slots(batch, enc)
        cache = Mdl.DecoderCache()
        states: list[Tensor] = []
        betas: list[Tensor] = []
        edge = Tensor(np.zeros((B, 1, cfg.d)))
        hist = None
        for t in range(Tn):
            parts = [s[:, t : t + 1] for s in static]
            if cfg.enable_edge:
                parts.append(edge)
            slots = T.stack(parts, axis=2)
            s, beta = Mdl.decode_block(p, cfg, batch.tgt_in[:, t : t + 1], enc, batch.node_mask, slots, cache, rng)
            states.append(s)
            betas.append(beta)
            if cfg.enable_edge and t < Tn - 1:
                hist = s if hist is None else T.concat([hist, s], axis=1)
                edge = self._gold_edge(batch, hist, slice(t, t + 1))
        return T.concat(states, axis=1), T.concat(betas, axis=2)

    def heads(self, states: Tensor, beta: Tensor, enc: Tensor) -> TrainOutput:
        p = self.params
        logits = Mdl.word_logits(p, states)
        node = Mdl.node_distribution(beta)
        arc_logp = label_logp = None
        if self.cfg.enable_edge:
            Tn = states.shape[1]
            mask = Mdl.causal_arc_mask(Tn, Tn)[None]
            arc_logp = T.log_softmax(Mdl.arc_scores(p, states, states), mask, axis=-1)
            label_logp = T.log_softmax(Mdl.label_scores(p, states, states), None, axis=-1)
        return TrainOutput(logits, node, arc_logp, label_logp, states, enc, beta)

    # ----------------------------------------------------------- decoding

    def start(self, batch: Batch) -> DecoderState:
        enc = self.encode(batch)
        return DecoderState(enc, batch.node_mask, Mdl.DecoderCache())

    def step(
        self,
        state: DecoderState,
        tokens: np.ndarray,
        gold_node: np.ndarray | None = None,
        gold_arcs: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> StepOutput:
        """Advance every row by one position.

        ``tokens`` ``(B,)`` is the input word at this position (``<s>`` first).
        Integration slots come from the previous step's predictions unless
        ``gold_node`` ``(B, N)`` / ``gold_arcs`` (arc weights ``(B, t)``,
        label marginal ``(B, R)``) override what is fed forward from this step.
        """
        cfg, p = self.cfg, self.params
        B = len(tokens)
        tok = np.asarray(tokens, dtype=np.int64)[:, None]
        slots = None
        if cfg.n_slots:
            zero = Tensor(np.zeros((B, 1, cfg.d)))
            parts = [zero if state.step == 0 else self._word_slot(tok, first=False)]
            if cfg.enable_node:
                parts.append(state.prev_node if state.prev_node is not None else zero)
            if cfg.enable_edge:
                parts.append(state.prev_edge if state.prev_edge is not None else zero)
            slots = T.stack(parts, axis=2)
        s, beta = Mdl.decode_block(p, cfg, tok, state.enc, state.node_mask, slots, state.cache)
        state.states = s if state.states is None else T.concat([state.states, s], axis=1)
        state.step += 1
        logits = Mdl.word_logits(p, s)[:, 0]
        node = Mdl.node_distribution(beta)[:, 0]  # (B, N)
        node_vec = edge_raw = arc = label = None
        if cfg.enable_node:
            src = node if gold_node is None else Tensor(gold_node)
            v = Mdl.node_vector(src.reshape(B, 1, -1), state.enc)
            state.prev_node = v
            node_vec = v.data[:, 0]
        if cfg.enable_edge:
            arc_t = T.softmax(Mdl.arc_scores(p, s, state.states), axis=-1)  # (B, 1, t)
            label_t = T.softmax(Mdl.label_scores(p, s, state.states), axis=-1)  # (B, 1, t, R)
            arc, label = arc_t.data[:, 0], label_t.data[:, 0]
            emb = self.label_embeddings()
            if gold_arcs is None:
                raw = Mdl.raw_edge_vector(arc_t, label_t, emb, state.states)
                state.prev_edge = Mdl.edge_vector(p, arc_t, label_t, emb, state.states)
            else:
                w, marg = gold_arcs
                w = Tensor(np.asarray(w)[:, None, :])
                marg = Tensor(np.asarray(marg)[:, None, :])
                raw = T.concat([marg @ emb, w @ state.states], axis=-1)
                state.prev_edge = Mdl.edge_vector(p, w, marg, emb, state.states)
            edge_raw = raw.data[:, 0]
        return StepOutput(logits.data, node.data, arc, label, node_vec, edge_raw, s.data[:, 0])
