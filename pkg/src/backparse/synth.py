"""Synthetic graph-to-sentence corpora with exact alignments.

Graphs are random rooted DAGs over a small concept and label alphabet.
Each graph is realised by a fixed template: every node contributes one
content word, every edge contributes a function word chosen by its label,
and children with a "pre" label are placed before their head. Re-entrant
nodes are realised once; later references become a pronoun aligned to the
same node. The sentence is therefore a deterministic function of the
graph, and the node-to-word alignment is known exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .amr import AmrGraph, RawExample, write_jsonl
from .tensor import make_rng


class SynthError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    min_nodes: int = 3
    max_nodes: int = 8
    n_concepts: int = 40
    n_labels: int = 6
    reentrancy: float = 0.1  # probability of one extra parent edge per graph
    n_train: int = 200
    n_dev: int = 50
    n_test: int = 200
    seed: int = 1
    pronoun: str = "it"

    def validate(self) -> "SyntheticSpec":
        if not 1 <= self.min_nodes <= self.max_nodes:
            raise SynthError("need 1 <= min_nodes <= max_nodes")
        if self.n_concepts < 1 or self.n_labels < 1:
            raise SynthError("concept and label alphabets must be non-empty")
        if not 0.0 <= self.reentrancy <= 1.0:
            raise SynthError("reentrancy is a probability")
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise SynthError("corpus sizes must be non-negative")
        return self

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticSpec":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise SynthError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**obj).validate()

    def to_dict(self) -> dict:
        return asdict(self)


def concept_name(k: int) -> str:
    return f"c{k}"


def label_name(k: int) -> str:
    return f"ARG{k}"


def random_graph(spec: SyntheticSpec, rng: np.random.Generator) -> AmrGraph:
    """Random tree over ``n`` nodes (parents precede children) plus optional re-entrancy."""
    n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
    concepts = [concept_name(int(c)) for c in rng.integers(0, spec.n_concepts, n)]
    edges = []
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.append((u, label_name(int(rng.integers(0, spec.n_labels))), v))
    if n >= 3 and rng.random() < spec.reentrancy:
        v = int(rng.integers(2, n))
        u = int(rng.integers(0, v))
        lab = label_name(int(rng.integers(0, spec.n_labels)))
        # an edge from an earlier node keeps the graph acyclic
        if (u, lab, v) not in edges:
            edges.append((u, lab, v))
    return AmrGraph(tuple(concepts), tuple(edges), 0)


def _is_pre(label: str, n_labels: int) -> bool:
    return int(label[3:]) < n_labels // 2


def realize(g: AmrGraph, n_labels: int, pronoun: str = "it") -> tuple[list[str], list[tuple[int, int]]]:
    """Template realisation; returns tokens and 1-based ``(position, node)`` alignments.

    Function words are unaligned, so they attach to the NULL node.
    """
    children: dict[int, list[tuple[str, int]]] = {}
    for u, lab, v in g.edges:
        children.setdefault(u, []).append((lab, v))
    for u in children:
        children[u].sort(key=lambda c: (c[0], g.concepts[c[1]], c[1]))
    tokens: list[str] = []
    align: list[tuple[int, int]] = []
    seen: set[int] = set()

    def emit(word: str, node: int | None) -> None:
        tokens.append(word)
        if node is not None:
            align.append((len(tokens), node))

    def visit(u: int) -> None:
        if u in seen:
            emit(pronoun, u)
            return
        seen.add(u)
        kids = children.get(u, [])
        for lab, v in kids:
            if _is_pre(lab, n_labels):
                visit(v)
                emit("f" + lab[3:], None)
        emit("w" + g.concepts[u][1:], u)
        for lab, v in kids:
            if not _is_pre(lab, n_labels):
                emit("f" + lab[3:], None)
                visit(v)

    visit(g.root)
    return tokens, align


def make_example(spec: SyntheticSpec, rng: np.random.Generator, ident: str) -> RawExample:
    g = random_graph(spec, rng)
    tokens, align = realize(g, spec.n_labels, spec.pronoun)
    return RawExample(g, tuple(tokens), tuple(align), ident)


def generate_corpus(spec: SyntheticSpec) -> dict[str, list[RawExample]]:
    """``train``/``dev``/``test`` splits; identical specs give identical corpora."""
    spec.validate()
    rng = make_rng(spec.seed)
    out = {}
    for split, size in (("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test)):
        out[split] = [make_example(spec, rng, f"{split}-{i}") for i in range(size)]
    return out


def write_corpus(spec: SyntheticSpec, directory) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, exs in generate_corpus(spec).items():
        paths[split] = d / f"{split}.jsonl"
        write_jsonl(paths[split], exs)
    return paths
