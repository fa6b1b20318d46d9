"""Greedy and beam decoding with online back-parsing, plus forced-decode diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import PreparedExample, Vocabs, make_batch
from .metrics import bleu, bucket_by_graph_size, pearson, sentence_bleu
from .network import BackParser


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def default_max_len(ex: PreparedExample, extra: int = 10) -> int:
    """``2 N + extra`` where ``N`` counts the original (non-NULL) nodes."""
    return 2 * (ex.n_nodes - 1) + extra


@dataclass
class BeamHypothesis:
    """A decoded sequence; ``tokens`` exclude ``</s>`` but ``logprob`` includes it once finished."""

    tokens: list[int]
    logprob: float
    trace: list[tuple[int, int, int]] = field(default_factory=list)  # (node, arc_to, label) per step
    finished: bool = False

    @property
    def length(self) -> int:
        return len(self.tokens) + int(self.finished)

    def score(self, alpha: float) -> float:
        return self.logprob / (max(self.length, 1) ** alpha)


def greedy_decode(
    model: BackParser,
    examples: Sequence[PreparedExample],
    vocabs: Vocabs,
    max_len_extra: int = 10,
) -> list[BeamHypothesis]:
    """Batched greedy decoding; ``</s>`` is forced once a row reaches its length limit."""
    if not examples:
        return []
    batch = make_batch(examples, vocabs)
    state = model.start(batch)
    limits = [default_max_len(ex, max_len_extra) for ex in examples]
    eos = vocabs.words.eos
    hyps = [BeamHypothesis([], 0.0) for _ in examples]
    tok = np.full(len(examples), vocabs.words.bos)
    for _ in range(max(limits) + 1):
        out = model.step(state, tok)
        lp = _log_softmax(out.word_logits)
        nxt = lp.argmax(axis=-1)
        for b, h in enumerate(hyps):
            if h.finished:
                continue
            w = eos if len(h.tokens) >= limits[b] else int(nxt[b])
            nxt[b] = w
            h.logprob += float(lp[b, w])
            h.trace.append(_trace_entry(out, b))
            if w == eos:
                h.finished = True
            else:
                h.tokens.append(w)
        if all(h.finished for h in hyps):
            break
        tok = nxt
    return hyps


def _trace_entry(out, b: int) -> tuple[int, int, int]:
    node = int(out.node_dist[b].argmax())
    if out.arc_probs is None:
        return node, -1, -1
    j = int(out.arc_probs[b].argmax())
    return node, j, int(out.label_probs[b, j].argmax())


def beam_search(
    model: BackParser,
    example: PreparedExample,
    vocabs: Vocabs,
    beam: int = 5,
    max_len: int | None = None,
    len_penalty: float = 0.6,
    keep_greedy: bool = True,
) -> BeamHypothesis:
    """Length-normalised beam search (``score = logP / len ** alpha``).

    Each hypothesis carries its own decoder state, so the node and edge
    predictions made while extending it feed its next step. ``len`` counts
    generated tokens including ``</s>``. At each step the ``width`` best
    extensions survive; those ending in ``</s>`` are set aside and shrink
    the beam, so ``beam=1`` is exactly greedy decoding. Search also stops
    once no live hypothesis can still beat the best finished one. With
    ``keep_greedy`` the greedy hypothesis also competes in the final
    selection, so the result never scores below greedy decoding.
    """
    max_len = default_max_len(example) if max_len is None else max_len
    eos = vocabs.words.eos
    state = model.start(make_batch([example], vocabs))
    alive = [BeamHypothesis([], 0.0)]
    finished: list[BeamHypothesis] = []
    tok = np.array([vocabs.words.bos])
    width = beam
    for t in range(max_len + 1):
        out = model.step(state, tok)
        lp = _log_softmax(out.word_logits)
        cand = []
        for i, h in enumerate(alive):
            top = [eos] if t == max_len else np.argsort(-lp[i], kind="stable")[:width]
            cand += [(h.logprob + float(lp[i, w]), i, int(w)) for w in top]
        cand.sort(key=lambda c: -c[0])
        nxt, src = [], []
        # a finished hypothesis keeps its slot, so the beam narrows as sequences end
        for logp, i, w in cand[:width]:
            h = alive[i]
            trace = h.trace + [_trace_entry(out, i)]
            if w == eos:
                finished.append(BeamHypothesis(list(h.tokens), logp, trace, True))
                width -= 1
            else:
                nxt.append(BeamHypothesis(h.tokens + [w], logp, trace))
                src.append(i)
        if not nxt:
            break
        if finished:
            best = max(h.score(len_penalty) for h in finished)
            # log-probabilities only fall, so a live hypothesis scores at most
            # its current logP over the longest admissible length
            bound = max(h.logprob for h in nxt) / (max_len + 1) ** len_penalty
            if best >= bound:
                break
        state.reorder(np.array(src))
        alive = nxt
        tok = np.array([h.tokens[-1] for h in nxt])
    pool = list(finished)
    if keep_greedy:
        pool += greedy_decode(model, [example], vocabs, max_len - 2 * (example.n_nodes - 1))
    return max(pool, key=lambda h: h.score(len_penalty))


def sequence_logprob(model: BackParser, example: PreparedExample, vocabs: Vocabs, tokens: Sequence[int]) -> float:
    """Log-probability of ``tokens + </s>`` under predicted integration inputs."""
    batch = make_batch([example], vocabs)
    state = model.start(batch)
    seq = [*tokens, vocabs.words.eos]
    inp = [vocabs.words.bos, *tokens]
    total = 0.0
    for x, y in zip(inp, seq):
        out = model.step(state, np.array([x]))
        total += float(_log_softmax(out.word_logits)[0, y])
    return total


# -------------------------------------------------------------- diagnostics


@dataclass
class DiagnosticReport:
    node_accuracy: float
    edge_accuracy: float | None
    n_nodes: int
    node_correct: int = 0
    node_total: int = 0
    edge_correct: int = 0
    edge_total: int = 0
    bleu: float | None = None
    node_matrix: np.ndarray | None = None

    @property
    def both_accuracy(self) -> float:
        total = self.node_total + self.edge_total
        return (self.node_correct + self.edge_correct) / total if total else 0.0


def forced_decode_diagnostics(model: BackParser, example: PreparedExample, vocabs: Vocabs) -> DiagnosticReport:
    """Node/edge prediction accuracy while forcing the gold sentence.

    Words are teacher-forced; node and edge integration inputs are the
    model's own predictions, as at inference time. Only the real word
    positions are scored (the ``</s>`` step is excluded).
    """
    batch = make_batch([example], vocabs)
    state = model.start(batch)
    proj = example.projected
    M = len(proj.tokens) - 1
    inp = batch.tgt_in[0]
    nodes, arcs, labels = [], [], []
    for t in range(M):
        out = model.step(state, inp[t : t + 1])
        nodes.append(out.node_dist[0])
        if out.arc_probs is not None:
            arcs.append(out.arc_probs[0])
            labels.append(out.label_probs[0])
    node_matrix = np.array(nodes)
    gold = proj.gold_align[:M]
    node_ok = 0
    for t in range(M):
        best = np.flatnonzero(gold[t] == gold[t].max())
        node_ok += int(node_matrix[t].argmax() in best)
    edge_ok = edge_n = 0
    edge_acc = None
    if arcs:
        for t, j, k in proj.arcs:
            if t > M:
                continue
            edge_n += 1
            a = arcs[t - 1]
            edge_ok += int(a.argmax() == j - 1 and labels[t - 1][j - 1].argmax() == k)
        edge_acc = edge_ok / edge_n if edge_n else None
    return DiagnosticReport(
        node_ok / M if M else 0.0,
        edge_acc,
        example.n_nodes - 1,
        node_ok,
        M,
        edge_ok,
        edge_n,
        node_matrix=node_matrix,
    )


def export_attention(model: BackParser, example: PreparedExample, vocabs: Vocabs, path) -> dict:
    """Write the forced-decode word-to-node matrix with its labels as JSON."""
    rep = forced_decode_diagnostics(model, example, vocabs)
    obj = {
        "tokens": list(example.raw.tokens),
        "concepts": ["<null>", *example.raw.graph.concepts],
        "matrix": rep.node_matrix.tolist(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f)
    return obj


def generate(
    model: BackParser,
    examples: Sequence[PreparedExample],
    vocabs: Vocabs,
    beam: int = 5,
    len_penalty: float = 0.6,
    max_len_extra: int = 10,
) -> list[list[str]]:
    if beam == 1:
        hyps = []
        for i in range(0, len(examples), 64):
            hyps += greedy_decode(model, examples[i : i + 64], vocabs, max_len_extra)
    else:
        hyps = [
            beam_search(model, ex, vocabs, beam, default_max_len(ex, max_len_extra), len_penalty)
            for ex in examples
        ]
    return [vocabs.words.decode(h.tokens) for h in hyps]


def corpus_bleu_greedy(model: BackParser, examples: Sequence[PreparedExample], vocabs: Vocabs) -> float:
    hyps = generate(model, examples, vocabs, beam=1)
    return bleu(hyps, [list(ex.raw.tokens) for ex in examples])


def diagnose(
    model: BackParser,
    examples: Sequence[PreparedExample],
    vocabs: Vocabs,
    hypotheses: Sequence[Sequence[str]] | None = None,
    bucket_edges: Sequence[int] = (1, 4, 7, 10),
    beam: int = 5,
) -> dict:
    """Per-example diagnostics, graph-size buckets and accuracy/BLEU correlations."""
    if hypotheses is None:
        hypotheses = generate(model, examples, vocabs, beam=beam)
    refs = [list(ex.raw.tokens) for ex in examples]
    reports = []
    for i, (ex, hyp, ref) in enumerate(zip(examples, hypotheses, refs)):
        rep = forced_decode_diagnostics(model, ex, vocabs)
        rep.bleu = sentence_bleu(hyp, ref)
        reports.append(rep)
    rows = [
        {
            "id": ex.raw.id if ex.raw.id is not None else i,
            "n_nodes": rep.n_nodes,
            "node_acc": rep.node_accuracy,
            "edge_acc": rep.edge_accuracy,
            "both_acc": rep.both_accuracy,
            "bleu": rep.bleu,
        }
        for i, (ex, rep) in enumerate(zip(examples, reports))
    ]
    bleus = [r.bleu for r in reports]
    corr = {}
    for name, key in (("node", "node_acc"), ("edge", "edge_acc"), ("both", "both_acc")):
        xs = [row[key] for row in rows]
        if any(x is None for x in xs):
            corr[name] = None
            continue
        try:
            corr[name] = pearson(xs, bleus)
        except ValueError:
            corr[name] = None
    buckets = bucket_by_graph_size([r.n_nodes for r in reports], hypotheses, refs, bucket_edges)
    return {
        "examples": rows,
        "pearson": corr,
        "buckets": buckets,
        "corpus_bleu": bleu(hypotheses, refs),
    }
