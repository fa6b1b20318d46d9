"""Vocabulary building, example preparation and padded batches."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .amr import (
    DEFAULT_MAX_PATH,
    NULL_CONCEPT,
    SELF,
    ProjectedExample,
    RawExample,
    RelationVocab,
    all_label_paths,
    augment_null,
    build_relation_matrix,
    normalize_alignment,
    project_edges,
)
from .vocab import PAD, UNK, Vocab


class LabelVocab:
    """Decoder edge labels: ``self`` plus every single-step ``↑x``/``↓x`` path.

    ``rel_ids[k]`` is the relation-vocabulary id of label ``k``, used when
    the decoder shares relation embeddings with the encoder.
    """

    def __init__(self, relations: RelationVocab):
        self.itos = [SELF, *sorted(relations.single_step_labels())]
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        self.rel_ids = np.array([relations.id(s) for s in self.itos], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def self_id(self) -> int:
        return 0


@dataclass
class Vocabs:
    words: Vocab
    concepts: Vocab
    relations: RelationVocab
    max_path_len: int = DEFAULT_MAX_PATH

    def __post_init__(self):
        self.labels = LabelVocab(self.relations)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.words.save(d / "vocab.words.txt")
        self.concepts.save(d / "vocab.concepts.txt")
        self.relations.save(d / "vocab.relations.txt")

    @classmethod
    def load(cls, directory, max_path_len: int = DEFAULT_MAX_PATH) -> "Vocabs":
        d = Path(directory)
        return cls(
            Vocab.load(d / "vocab.words.txt"),
            Vocab.load(d / "vocab.concepts.txt"),
            RelationVocab.load(d / "vocab.relations.txt"),
            max_path_len,
        )


CONCEPT_SPECIALS = (PAD, UNK, NULL_CONCEPT)


def build_vocabs(examples: Sequence[RawExample], max_path_len: int = DEFAULT_MAX_PATH, min_freq: int = 1) -> Vocabs:
    words = Vocab.build((ex.tokens for ex in examples), min_freq)
    concepts = Vocab.build((ex.graph.concepts for ex in examples), min_freq, specials=CONCEPT_SPECIALS)
    relations = RelationVocab()
    labels = {"root"}
    seen_paths: set[str] = set()
    for ex in examples:
        labels.update(l for _, l, _ in ex.graph.edges)
        for row in all_label_paths(augment_null(ex.graph), max_path_len):
            seen_paths.update(row)
    relations.ensure_single_steps(labels)
    for p in sorted(seen_paths):
        relations.add(p)
    return Vocabs(words, concepts, relations, max_path_len)


@dataclass(frozen=True)
class PreparedExample:
    """Model-ready arrays for one example; the decoder target ends with ``</s>``."""

    concept_ids: np.ndarray  # (N+1,)
    rel_ids: np.ndarray  # (N+1, N+1)
    projected: ProjectedExample  # tokens include </s>
    raw: RawExample

    @property
    def n_nodes(self) -> int:
        return len(self.concept_ids)

    @property
    def length(self) -> int:
        return len(self.projected.tokens)


def prepare(raw: RawExample, vocabs: Vocabs) -> PreparedExample:
    aug = augment_null(raw.graph)
    N = raw.graph.n_nodes
    M = len(raw.tokens)
    concept_ids = np.array([vocabs.concepts.stoi[NULL_CONCEPT], *vocabs.concepts.encode(raw.graph.concepts)])
    rel_ids = build_relation_matrix(aug, vocabs.relations, vocabs.max_path_len)
    align = raw.augmented_align()
    gold = normalize_alignment(align, M, N)
    gold = np.vstack([gold, np.eye(1, N + 1)])
    arcs = []
    for t, j, label in project_edges(aug, align, M):
        k = vocabs.labels.stoi.get(label)
        if k is not None:
            arcs.append((t, j, k))
    covered = {a[0] for a in arcs}
    arcs += [(t, t, vocabs.labels.self_id) for t in range(1, M + 2) if t not in covered]
    tokens = (*vocabs.words.encode(raw.tokens), vocabs.words.eos)
    proj = ProjectedExample(tuple(tokens), gold, tuple(sorted(arcs)))
    return PreparedExample(concept_ids, rel_ids, proj, raw)


@dataclass
class Batch:
    concept_ids: np.ndarray  # (B, N)
    rel_ids: np.ndarray  # (B, N, N)
    node_mask: np.ndarray  # (B, N)
    tgt_in: np.ndarray  # (B, T) <s> y1 .. yM
    tgt_out: np.ndarray  # (B, T) y1 .. yM </s>
    tgt_mask: np.ndarray  # (B, T)
    gold_align: np.ndarray  # (B, T, N)
    arc_index: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]  # (b, t, j, k), 0-based
    arc_weights: np.ndarray  # (B, T, T) teacher-forcing arc distribution
    label_marginal: np.ndarray  # (B, T, R) teacher-forcing label distribution
    examples: list[PreparedExample]

    @property
    def size(self) -> int:
        return len(self.examples)

    @property
    def n_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def make_batch(examples: Sequence[PreparedExample], vocabs: Vocabs) -> Batch:
    B = len(examples)
    N = max(ex.n_nodes for ex in examples)
    Tn = max(ex.length for ex in examples)
    R = len(vocabs.labels)
    concept_ids = np.full((B, N), vocabs.concepts.pad, dtype=np.int64)
    rel_ids = np.zeros((B, N, N), dtype=np.int64)
    node_mask = np.zeros((B, N), dtype=bool)
    tgt_in = np.full((B, Tn), vocabs.words.pad, dtype=np.int64)
    tgt_out = np.full((B, Tn), vocabs.words.pad, dtype=np.int64)
    tgt_mask = np.zeros((B, Tn), dtype=bool)
    gold = np.zeros((B, Tn, N))
    arc_w = np.zeros((B, Tn, Tn))
    lab_m = np.zeros((B, Tn, R))
    idx: list[tuple[int, int, int, int]] = []
    for b, ex in enumerate(examples):
        n, m = ex.n_nodes, ex.length
        concept_ids[b, :n] = ex.concept_ids
        rel_ids[b, :n, :n] = ex.rel_ids
        node_mask[b, :n] = True
        toks = np.array(ex.projected.tokens)
        tgt_out[b, :m] = toks
        tgt_in[b, 0] = vocabs.words.bos
        tgt_in[b, 1:m] = toks[:-1]
        tgt_mask[b, :m] = True
        gold[b, :m, :n] = ex.projected.gold_align
        per_t: dict[int, list[tuple[int, int]]] = {}
        for t, j, k in ex.projected.arcs:
            idx.append((b, t - 1, j - 1, k))
            per_t.setdefault(t - 1, []).append((j - 1, k))
        for t, lst in per_t.items():
            w = 1.0 / len(lst)
            for j, k in lst:
                arc_w[b, t, j] += w
                lab_m[b, t, k] += w
    arr = np.array(idx, dtype=np.int64).reshape(-1, 4)
    arc_index = (arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    return Batch(concept_ids, rel_ids, node_mask, tgt_in, tgt_out, tgt_mask, gold, arc_index, arc_w, lab_m, list(examples))


def token_batches(
    examples: Sequence[PreparedExample],
    batch_tokens: int,
    rng: np.random.Generator | None = None,
) -> Iterator[list[PreparedExample]]:
    """Group examples into batches of at most ``batch_tokens`` padded target tokens.

    Examples are sorted by length (ties shuffled with ``rng``) so padding
    stays small; batch order is shuffled when ``rng`` is given.
    """
    order = np.arange(len(examples))
    if rng is not None:
        order = rng.permutation(len(examples))
    order = sorted(order, key=lambda i: examples[i].length)
    batches: list[list[PreparedExample]] = []
    cur: list[PreparedExample] = []
    longest = 0
    for i in order:
        ex = examples[i]
        width = max(longest, ex.length)
        if cur and width * (len(cur) + 1) > batch_tokens:
            batches.append(cur)
            cur, width = [], ex.length
        cur.append(ex)
        longest = width
    if cur:
        batches.append(cur)
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    yield from batches


def prepare_all(raws: Iterable[RawExample], vocabs: Vocabs) -> list[PreparedExample]:
    return [prepare(r, vocabs) for r in raws]
