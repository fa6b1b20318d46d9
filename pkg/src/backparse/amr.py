"""AMR graphs: reading, writing, NULL augmentation, label paths, projection.

Graphs use dense integer node ids. Edges are ``(src, label, dst)`` triples
with ``src`` the parent. Label paths render each step with an arrow:
``↓label`` follows an edge parent to child, ``↑label`` child to parent.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

UP = "↑"
DOWN = "↓"
SELF = "self"
LONG_PATH = "long-path"
ROOT = "root"
RESERVED = (SELF, LONG_PATH, ROOT)
NONE_ID = 1
DEFAULT_MAX_PATH = 4


class GraphError(ValueError):
    pass


class PenmanError(GraphError):
    pass


@dataclass(frozen=True)
class AmrGraph:
    concepts: tuple[str, ...]
    edges: tuple[tuple[int, str, int], ...]
    root: int
    variables: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "concepts", tuple(self.concepts))
        object.__setattr__(self, "edges", tuple((int(s), str(l), int(d)) for s, l, d in self.edges))
        self.validate()

    @property
    def n_nodes(self) -> int:
        return len(self.concepts)

    def validate(self) -> None:
        n = len(self.concepts)
        if n == 0:
            raise GraphError("graph has no nodes")
        if not 0 <= self.root < n:
            raise GraphError(f"root {self.root} out of range")
        if len(set(self.edges)) != len(self.edges):
            raise GraphError("duplicate edge triple")
        for s, _, d in self.edges:
            if not (0 <= s < n and 0 <= d < n):
                raise GraphError(f"edge ({s}, {d}) refers to a missing node")
        seen = {self.root}
        todo = [self.root]
        adj = _undirected(n, self.edges)
        while todo:
            u = todo.pop()
            for v, _ in adj[u]:
                if v not in seen:
                    seen.add(v)
                    todo.append(v)
        if len(seen) != n:
            raise GraphError("graph is not connected from its root")
        # Kahn's algorithm: every node leaves the queue iff there is no directed cycle
        indeg = [0] * n
        out: list[list[int]] = [[] for _ in range(n)]
        for s, _, d in self.edges:
            indeg[d] += 1
            out[s].append(d)
        ready = [u for u in range(n) if indeg[u] == 0]
        removed = 0
        while ready:
            u = ready.pop()
            removed += 1
            for v in out[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    ready.append(v)
        if removed != n:
            raise GraphError("graph has a directed cycle")

    def to_json(self) -> dict:
        return {"nodes": list(self.concepts), "edges": [list(e) for e in self.edges], "root": self.root}

    @classmethod
    def from_json(cls, obj: dict) -> "AmrGraph":
        return cls(tuple(obj["nodes"]), tuple(tuple(e) for e in obj["edges"]), int(obj["root"]))

    def permuted(self, perm: Sequence[int]) -> "AmrGraph":
        """Relabel node ``i`` as ``perm[i]``."""
        n = self.n_nodes
        concepts = [None] * n
        for i, c in enumerate(self.concepts):
            concepts[perm[i]] = c
        edges = tuple((perm[s], l, perm[d]) for s, l, d in self.edges)
        return AmrGraph(tuple(concepts), edges, perm[self.root])


@dataclass(frozen=True)
class AugmentedGraph:
    """A graph with the NULL node at index 0 as parent of the original root."""

    base: AmrGraph
    null_id: int = 0

    @property
    def concepts(self) -> tuple[str, ...]:
        return (NULL_CONCEPT, *self.base.concepts)

    @property
    def edges(self) -> tuple[tuple[int, str, int], ...]:
        shifted = tuple((s + 1, l, d + 1) for s, l, d in self.base.edges)
        return ((0, ROOT, self.base.root + 1), *shifted)

    @property
    def n_nodes(self) -> int:
        return self.base.n_nodes + 1

    @property
    def root(self) -> int:
        return 0


NULL_CONCEPT = "<null>"


def augment_null(g) -> AugmentedGraph:
    if isinstance(g, AugmentedGraph):
        raise GraphError("graph is already augmented")
    return AugmentedGraph(g)


# ---------------------------------------------------------------- PENMAN I/O

_TOKEN = re.compile(r'\s*(\(|\)|/|:[^\s()]+|"(?:[^"\\]|\\.)*"|[^\s()/:"]+)')
_VARLIKE = re.compile(r"^[a-z][a-z]?\d*$")


def _tokenize(text: str) -> list[str]:
    toks = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise PenmanError(f"unexpected character {text[pos]!r} at offset {pos}")
        toks.append(m.group(1))
        pos = m.end()
    return toks


# roles that end in "-of" without being inverses
_NON_INVERSE = frozenset({"consist-of", "prep-out-of", "prep-on-behalf-of"})


def _normalize_role(edge: tuple[int, str, int]) -> tuple[int, str, int]:
    s, rel, d = edge
    if rel.endswith("-of") and rel not in _NON_INVERSE:
        return d, rel[:-3], s
    return edge


def _inverse_role(rel: str) -> str:
    return rel + "-of"


def parse_penman(text: str) -> AmrGraph:
    """Read one ``(var / concept :REL child ...)`` expression.

    A bare child token that names a variable defined anywhere in the graph
    is a re-entrance. Other bare tokens (``-``, numbers, quoted strings,
    words) become fresh constant nodes, except short variable-shaped tokens
    such as ``x2`` which are reported as undefined variables. Inverse roles
    ``:X-of`` are stored as ``X`` edges pointing the other way.
    """
    toks = _tokenize(text)
    if not toks:
        raise PenmanError("empty input")
    concepts: list[str] = []
    variables: list[str | None] = []
    var_index: dict[str, int] = {}
    pending: list[tuple[int, str, str]] = []
    edges: list[tuple[int, str, int]] = []
    pos = 0

    def expect(tok):
        nonlocal pos
        if pos >= len(toks):
            raise PenmanError(f"unbalanced parentheses: expected {tok!r} at end of input")
        if toks[pos] != tok:
            raise PenmanError(f"expected {tok!r}, found {toks[pos]!r}")
        pos += 1

    def node() -> int:
        nonlocal pos
        expect("(")
        if pos >= len(toks):
            raise PenmanError("unbalanced parentheses")
        var = toks[pos]
        pos += 1
        if var in var_index:
            raise PenmanError(f"duplicate variable definition {var!r}")
        expect("/")
        if pos >= len(toks) or toks[pos] in "()/" or toks[pos].startswith(":"):
            raise PenmanError(f"missing concept for variable {var!r}")
        idx = len(concepts)
        concepts.append(toks[pos])
        variables.append(var)
        var_index[var] = idx
        pos += 1
        while pos < len(toks) and toks[pos] != ")":
            rel = toks[pos]
            if not rel.startswith(":") or len(rel) < 2:
                raise PenmanError(f"expected relation, found {rel!r}")
            pos += 1
            if pos >= len(toks):
                raise PenmanError("unbalanced parentheses: relation without target")
            if toks[pos] == "(":
                child = node()
                edges.append((idx, rel[1:], child))
            elif toks[pos] in (")", "/") or toks[pos].startswith(":"):
                raise PenmanError(f"relation {rel!r} has no target")
            else:
                pending.append((idx, rel[1:], toks[pos]))
                pos += 1
        expect(")")
        return idx

    root = node()
    if pos != len(toks):
        raise PenmanError("unbalanced parentheses: trailing tokens after graph")
    for src, rel, tok in pending:
        if tok in var_index:
            edges.append((src, rel, var_index[tok]))
        elif _VARLIKE.match(tok) and not tok.startswith('"'):
            raise PenmanError(f"reference to undefined variable {tok!r}")
        else:
            concepts.append(tok)
            variables.append(None)
            edges.append((src, rel, len(concepts) - 1))
    edges = [_normalize_role(e) for e in edges]
    if len(set(edges)) != len(edges):
        raise PenmanError("duplicate edge")
    return AmrGraph(tuple(concepts), tuple(edges), root, tuple(v or "" for v in variables))


def render_penman(g: AmrGraph, indent: int | None = None) -> str:
    """Write ``g`` as PENMAN with variables ``v0 .. v{N-1}``.

    Edges are walked outgoing first; an edge reached from its target is
    written with the inverse role ``:X-of``.
    """
    # (surface role, neighbour, edge index) per node; outgoing roles sort before inverses
    links: dict[int, list[tuple[int, str, int, int]]] = {i: [] for i in range(g.n_nodes)}
    for k, (s, l, d) in enumerate(g.edges):
        links[s].append((0, l, d, k))
        links[d].append((1, _inverse_role(l), s, k))
    for c in links.values():
        c.sort()
    seen: set[int] = set()
    used: set[int] = set()
    parts: list[str] = []

    def emit(u: int, depth: int) -> None:
        seen.add(u)
        parts.append(f"(v{u} / {g.concepts[u]}")
        for _, label, v, k in links[u]:
            if k in used:
                continue
            used.add(k)
            sep = " " if indent is None else "\n" + " " * (indent * (depth + 1))
            parts.append(f"{sep}:{label} ")
            if v in seen:
                parts.append(f"v{v}")
            else:
                emit(v, depth + 1)
        parts.append(")")

    # a node is emitted inline at its first visit; later visits are references
    emit(g.root, 0)
    return "".join(parts)


def read_penman_blocks(text: str) -> Iterator[tuple[int, str]]:
    """Yield ``(first_line_number, block)`` for blank-line separated graphs."""
    block: list[str] = []
    start = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("#"):
            continue
        if not stripped:
            if block:
                yield start, "\n".join(block)
                block = []
            continue
        if not block:
            start = lineno
        block.append(line)
    if block:
        yield start, "\n".join(block)


# ------------------------------------------------------------------ label paths


def _undirected(n: int, edges) -> list[list[tuple[int, str]]]:
    adj: list[list[tuple[int, str]]] = [[] for _ in range(n)]
    for s, l, d in edges:
        adj[s].append((d, DOWN + l))
        adj[d].append((s, UP + l))
    return adj


def _paths_from(adj, src: int, max_len: int) -> list[tuple[str, ...] | None]:
    """Lexicographically smallest shortest step sequence from ``src`` to every node."""
    n = len(adj)
    dist = [-1] * n
    best: list[tuple[str, ...] | None] = [None] * n
    dist[src] = 0
    best[src] = ()
    frontier = [src]
    depth = 0
    while frontier and depth <= max_len:
        depth += 1
        layer: dict[int, tuple[str, ...]] = {}
        for u in frontier:
            for v, step in adj[u]:
                if dist[v] != -1 and dist[v] <= dist[u]:
                    continue
                cand = best[u] + (step,)
                if v not in layer or cand < layer[v]:
                    layer[v] = cand
        for v, p in layer.items():
            dist[v] = depth
            best[v] = p
        frontier = sorted(layer)
    return best


def shortest_label_path(g, i: int, j: int, max_len: int = DEFAULT_MAX_PATH) -> str:
    n = g.n_nodes
    if not (0 <= i < n and 0 <= j < n):
        raise GraphError(f"invalid node id in pair ({i}, {j})")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if i == j:
        return SELF
    p = _paths_from(_undirected(n, g.edges), i, max_len)[j]
    return _render(p, max_len)


def _render(p: tuple[str, ...] | None, max_len: int) -> str:
    if p is None or len(p) > max_len:
        return LONG_PATH
    if not p:
        return SELF
    return " ".join(p)


def all_label_paths(g, max_len: int = DEFAULT_MAX_PATH) -> list[list[str]]:
    n = g.n_nodes
    adj = _undirected(n, g.edges)
    out = []
    for i in range(n):
        row = _paths_from(adj, i, max_len)
        out.append([_render(p, max_len) for p in row])
    return out


class RelationVocab:
    """Path string <-> relation id. Ids 0..2 are ``self``, ``long-path``, ``root``."""

    def __init__(self, paths: Iterable[str] = (), cap: int | None = None):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {s: i for i, s in enumerate(self.itos)}
        self.stoi["none"] = NONE_ID
        self.cap = cap
        for p in paths:
            self.add(p)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, path: str) -> bool:
        return path in self.stoi

    def add(self, path: str) -> int:
        if path in self.stoi:
            return self.stoi[path]
        if self.cap is not None and len(self.itos) >= self.cap:
            return NONE_ID
        self.stoi[path] = len(self.itos)
        self.itos.append(path)
        return self.stoi[path]

    def id(self, path: str) -> int:
        return self.stoi.get(path, NONE_ID)

    def ensure_single_steps(self, labels: Iterable[str]) -> None:
        for label in sorted(set(labels)):
            self.add(DOWN + label)
            self.add(UP + label)

    def single_step_labels(self) -> list[str]:
        return [s for s in self.itos if " " not in s and s[:1] in (UP, DOWN)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for s in self.itos[len(RESERVED):]:
                f.write(s + "\n")

    @classmethod
    def load(cls, path) -> "RelationVocab":
        with open(path, encoding="utf-8") as f:
            return cls(line.rstrip("\n") for line in f if line.rstrip("\n"))


def build_relation_matrix(g, vocab: RelationVocab, max_len: int = DEFAULT_MAX_PATH, grow: bool = False) -> np.ndarray:
    """Relation id for every ordered node pair; ``grow`` adds unseen paths to ``vocab``."""
    paths = all_label_paths(g, max_len)
    lookup = vocab.add if grow else vocab.id
    return np.array([[lookup(p) for p in row] for row in paths], dtype=np.int64)


# ------------------------------------------------------------------ alignment


def normalize_alignment(hard: Iterable[tuple[int, int]], M: int, N: int) -> np.ndarray:
    """Spread each token's mass uniformly over its aligned nodes.

    ``hard`` holds ``(token_pos, node_id)`` pairs with 1-based positions and
    augmented node ids in ``1..N``. Rows of unaligned tokens put all their
    mass on the NULL column 0.
    """
    dist = np.zeros((M, N + 1))
    for pos, node in set((int(p), int(v)) for p, v in hard):
        if not 1 <= pos <= M:
            raise GraphError(f"token position {pos} outside 1..{M}")
        if not 1 <= node <= N:
            raise GraphError(f"node id {node} outside 1..{N}")
        dist[pos - 1, node] = 1.0
    counts = dist.sum(axis=1)
    dist[counts == 0, 0] = 1.0
    counts[counts == 0] = 1.0
    return dist / counts[:, None]


def project_edges(g: AugmentedGraph, align: Iterable[tuple[int, int]], M: int) -> list[tuple[int, int, str]]:
    """Project graph edges onto word positions as backward arcs.

    Returns sorted ``(arc_from, arc_to, label)`` triples with
    ``arc_to <= arc_from``. The label carries the direction relative to the
    later word: ``↓l`` when the later word realises the parent, ``↑l`` when
    it realises the child. Positions without an outgoing arc get a
    ``self`` loop.
    """
    words_of: dict[int, set[int]] = {}
    for pos, node in align:
        if not 1 <= pos <= M or not 0 <= node < g.n_nodes:
            raise GraphError(f"alignment pair ({pos}, {node}) out of range")
        words_of.setdefault(int(node), set()).add(int(pos))
    arcs: set[tuple[int, int, str]] = set()
    for u, label, w in g.edges:
        for pu in words_of.get(u, ()):
            for pw in words_of.get(w, ()):
                if pu == pw:
                    continue
                if pu > pw:
                    arcs.add((pu, pw, DOWN + label))
                else:
                    arcs.add((pw, pu, UP + label))
    covered = {a[0] for a in arcs}
    for t in range(1, M + 1):
        if t not in covered:
            arcs.add((t, t, SELF))
    return sorted(arcs)


def validate_arcs(arcs: Sequence[tuple[int, int, object]], M: int, self_label=SELF) -> None:
    covered = set()
    for t, j, label in arcs:
        if not 1 <= t <= M or not 1 <= j <= M:
            raise GraphError(f"arc ({t}, {j}) outside 1..{M}")
        if j > t:
            raise GraphError(f"arc ({t}, {j}) points forward")
        if j == t and label != self_label:
            raise GraphError(f"arc ({t}, {t}) must carry the self label")
        covered.add(t)
    missing = set(range(1, M + 1)) - covered
    if missing:
        raise GraphError(f"positions without outgoing arc: {sorted(missing)}")


# -------------------------------------------------------------------- examples


@dataclass(frozen=True)
class RawExample:
    """One corpus line: graph, tokens and hard alignments (pre-augmentation ids)."""

    graph: AmrGraph
    tokens: tuple[str, ...]
    align: tuple[tuple[int, int], ...]
    id: str | None = None

    def to_json(self) -> dict:
        obj = {"graph": self.graph.to_json(), "tokens": list(self.tokens), "align": [list(a) for a in self.align]}
        if self.id is not None:
            obj["id"] = self.id
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "RawExample":
        return cls(
            AmrGraph.from_json(obj["graph"]),
            tuple(obj["tokens"]),
            tuple((int(p), int(v)) for p, v in obj.get("align", [])),
            obj.get("id"),
        )

    def augmented_align(self) -> list[tuple[int, int]]:
        return [(p, v + 1) for p, v in self.align]


@dataclass(frozen=True)
class ProjectedExample:
    """Decoder supervision for one sentence.

    ``gold_align`` is ``M x (N+1)``; arcs are ``(arc_from, arc_to, label_id)``
    with 1-based positions and ids in the decoder label vocabulary.
    """

    tokens: tuple[int, ...]
    gold_align: np.ndarray
    arcs: tuple[tuple[int, int, int], ...]

    def validate(self, self_id: int = 0) -> None:
        M = len(self.tokens)
        if self.gold_align.shape[0] != M:
            raise GraphError("gold_align rows do not match token count")
        if not np.allclose(self.gold_align.sum(axis=1), 1.0, atol=1e-9):
            raise GraphError("gold_align rows must sum to 1")
        validate_arcs(self.arcs, M, self_label=self_id)


def read_jsonl(path) -> list[RawExample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(RawExample.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as err:
                raise GraphError(f"{path}:{lineno}: {err}") from err
    return out


def write_jsonl(path, examples: Iterable[RawExample]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(ex.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
