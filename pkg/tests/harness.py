"""Shared checks used by both the unit tests and the acceptance runner."""

from __future__ import annotations

import functools
import time

import numpy as np

from backparse.amr import DOWN, LONG_PATH, SELF, UP, AmrGraph, RawExample
from backparse.config import LossWeights, ablation_config
from backparse.data import build_vocabs, make_batch, prepare
from backparse.network import BackParser
from backparse.tensor import Tensor, grad_check, make_rng
from backparse.training import model_loss

from conftest import tiny_config

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def criterion(name: str):
    """Decorate an acceptance test returning ``(ok, detail)``; record a PASS/FAIL line and assert."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t = time.time()
            try:
                ok, detail = fn(*args, **kwargs)
            except Exception as err:
                ACCEPTANCE_LINES.append(f"FAIL  {name}: {type(err).__name__}: {err}")
                raise
            line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail} [{time.time() - t:.1f}s]"
            ACCEPTANCE_LINES.append(line)
            print(line)
            assert ok, line

        return run

    return wrap


MICRO_MODEL = {
    "model.layers": 2,
    "model.d": 8,
    "model.heads": 2,
    "model.d_r": 4,
    "model.ffn_size": 8,
    "model.d_biaffine": 4,
}


def three_node_example() -> RawExample:
    """``want-01 :ARG0 boy :ARG1 go-02``, with ``go-02 :ARG0 boy`` as re-entrancy."""
    g = AmrGraph(
        ("want-01", "boy", "go-02"),
        ((0, "ARG0", 1), (0, "ARG1", 2), (2, "ARG0", 1)),
        0,
    )
    return RawExample(g, ("the", "boy", "wants", "go"), ((2, 1), (3, 0), (4, 2)))


def full_gradcheck(max_coords: int | None = None, seed: int = 0) -> tuple[float, int]:
    """Max relative error of every parameter gradient of the total loss, all flags on.

    Returns ``(error, n_coordinates_probed)``.
    """
    raw = three_node_example()
    vocabs = build_vocabs([raw])
    cfg = tiny_config(**MICRO_MODEL).model
    m = BackParser.create(cfg, vocabs, make_rng(seed))
    batch = make_batch([prepare(raw, vocabs)], vocabs)
    params = m.parameters()
    w = LossWeights(node=0.7, edge=0.9)
    err = grad_check(lambda: model_loss(m, batch, w), params, eps=1e-5, max_coords=max_coords)
    n = sum(min(p.data.size, max_coords or p.data.size) for p in params)
    return err, n


def probability_fuzz(n_steps: int, seed: int = 0, vocabs=None, examples=None) -> dict:
    """Decode random untrained models step by step and measure worst normalisation errors.

    At every step the node distribution, the arc distribution, each label
    row and the joint arc-label distribution must sum to one and be
    non-negative. Models, inputs and next tokens are all random.
    """
    rng = np.random.default_rng(seed)
    worst = {"node": 0.0, "arc": 0.0, "label": 0.0, "joint": 0.0, "negative": 0.0}
    steps = 0
    k = 0
    while steps < n_steps:
        cfg = tiny_config(
            **{"model.heads": int(rng.choice([1, 2, 4])), "model.layers": int(rng.integers(1, 3))}
        ).model
        m = BackParser.create(cfg, vocabs, make_rng(seed * 7919 + k))
        for p in m.parameters():
            p.data *= float(rng.uniform(0.5, 3.0))
        idx = rng.choice(len(examples), size=int(rng.integers(1, 4)), replace=False)
        batch = make_batch([examples[i] for i in idx], vocabs)
        state = m.start(batch)
        tok = batch.tgt_in[:, 0]
        for t in range(int(rng.integers(3, 12))):
            out = m.step(state, tok)
            valid = batch.node_mask
            worst["node"] = max(worst["node"], np.abs(out.node_dist.sum(-1) - 1).max())
            worst["negative"] = max(worst["negative"], -min(out.node_dist.min(), 0.0))
            assert np.all(out.node_dist[~valid] == 0.0)
            arc, lab = out.arc_probs, out.label_probs
            worst["arc"] = max(worst["arc"], np.abs(arc.sum(-1) - 1).max())
            worst["label"] = max(worst["label"], np.abs(lab.sum(-1) - 1).max())
            joint = arc[..., None] * lab
            worst["joint"] = max(worst["joint"], np.abs(joint.sum((-2, -1)) - 1).max())
            worst["negative"] = max(worst["negative"], -min(arc.min(), lab.min(), 0.0))
            tok = rng.integers(0, out.word_logits.shape[-1], size=len(idx))
            steps += 1
        k += 1
    worst["steps"] = steps
    return worst


def integration_free_matches_baseline(vocabs, examples, seed: int = 0) -> bool:
    """With integration off, word logits of every flag setting equal the baseline exactly."""
    base = tiny_config()
    m = BackParser.create(ablation_config(base, "+both").model, vocabs, make_rng(seed))
    batch = make_batch(examples, vocabs)
    ref = m.with_config(ablation_config(base, "baseline").model).forward_train(batch).word_logits.data
    return all(
        np.array_equal(m.with_config(ablation_config(base, n).model).forward_train(batch).word_logits.data, ref)
        for n in ("+node", "+edge", "+both")
    )


# ------------------------------------------------------------ oracles


def random_dag(rng, n, n_labels=3, extra=0.3):
    edges = set()
    for v in range(1, n):
        edges.add((int(rng.integers(0, v)), f"L{int(rng.integers(0, n_labels))}", v))
    for _ in range(int(extra * n)):
        v = int(rng.integers(1, n))
        u = int(rng.integers(0, v))
        edges.add((u, f"L{int(rng.integers(0, n_labels))}", v))
    perm = rng.permutation(n)
    g = AmrGraph(tuple(f"c{int(rng.integers(0, 5))}" for _ in range(n)), tuple(sorted(edges)), 0)
    return g.permuted([int(p) for p in perm])


def brute_force_path(g, i, j):
    """All simple undirected paths by DFS; shortest first, then lexicographically smallest step tuple."""
    adj = {u: [] for u in range(g.n_nodes)}
    for s, l, d in g.edges:
        adj[s].append((d, DOWN + l))
        adj[d].append((s, UP + l))
    found = []

    def dfs(u, seen, steps):
        if u == j:
            found.append(tuple(steps))
            return
        for v, st_ in adj[u]:
            if v not in seen:
                dfs(v, seen | {v}, steps + [st_])

    dfs(i, {i}, [])
    return min(found, key=lambda p: (len(p), p))


def oracle_render(p, max_len):
    if not p:
        return SELF
    return LONG_PATH if len(p) > max_len else " ".join(p)


def random_attention_instance(rng, n_nodes=None):
    N = int(rng.integers(1, 7)) if n_nodes is None else n_nodes
    heads = int(rng.choice([1, 2, 4]))
    d = heads * int(rng.integers(1, 4))
    dr, R = int(rng.integers(1, 5)), int(rng.integers(1, 6))
    p = {f"a.{k}": Tensor(rng.normal(size=(d, d))) for k in ("wq", "wk", "wv", "wo")}
    p["a.wr"] = Tensor(rng.normal(size=(dr, d // heads)))
    rel_emb = Tensor(rng.normal(size=(R, dr)))
    h = rng.normal(size=(N, d))
    rel_ids = rng.integers(0, R, size=(N, N))
    mask = rng.random(N) < 0.8
    mask[0] = True
    return p, rel_emb, h, rel_ids, mask, heads


def random_biaffine_instance(rng, R):
    Q, K, db = int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 6))
    U, W, b = rng.normal(size=(db, R, db)), rng.normal(size=(2 * db, R)), rng.normal(size=R)
    p = {"biaff.x.U": Tensor(U), "biaff.x.W": Tensor(W), "biaff.x.b": Tensor(b)}
    return p, rng.normal(size=(K, db)), rng.normal(size=(Q, db))
