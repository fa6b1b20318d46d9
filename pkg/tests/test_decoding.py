import json

import numpy as np
import pytest

from backparse.amr import AmrGraph, RawExample
from backparse.data import build_vocabs, make_batch, prepare, prepare_all
from backparse.decoding import (
    _log_softmax,
    beam_search,
    default_max_len,
    diagnose,
    export_attention,
    forced_decode_diagnostics,
    generate,
    greedy_decode,
    sequence_logprob,
)
from backparse.network import BackParser
from backparse.synth import SyntheticSpec, generate_corpus
from backparse.tensor import make_rng
from backparse.training import train

from conftest import tiny_config


@pytest.fixture(scope="module")
def model(vocabs):
    return BackParser.create(tiny_config().model, vocabs, make_rng(21))


def test_default_max_len(prepared):
    ex = prepared[0]
    assert default_max_len(ex) == 2 * (ex.n_nodes - 1) + 10


def test_beam_one_equals_greedy(model, vocabs, prepared):
    greedy = greedy_decode(model, prepared[:8], vocabs)
    for ex, g in zip(prepared[:8], greedy):
        b = beam_search(model, ex, vocabs, beam=1, keep_greedy=False)
        assert b.tokens == g.tokens
        assert b.logprob == pytest.approx(g.logprob, abs=1e-12)


def test_batched_greedy_matches_single(model, vocabs, prepared):
    batched = greedy_decode(model, prepared[:5], vocabs)
    for ex, h in zip(prepared[:5], batched):
        (single,) = greedy_decode(model, [ex], vocabs)
        assert single.tokens == h.tokens
        assert single.logprob == pytest.approx(h.logprob, abs=1e-9)


def test_beam_score_is_rescorable_and_not_below_greedy(model, vocabs, prepared):
    for ex in prepared[:6]:
        b = beam_search(model, ex, vocabs, beam=5)
        assert b.finished
        assert sequence_logprob(model, ex, vocabs, b.tokens) == pytest.approx(b.logprob, abs=1e-9)
        (g,) = greedy_decode(model, [ex], vocabs)
        assert b.score(0.6) >= g.score(0.6)
        assert len(b.tokens) <= default_max_len(ex)


def test_log_probabilities_non_increasing_along_path(model, vocabs, prepared):
    ex = prepared[3]
    b = beam_search(model, ex, vocabs, beam=5)
    state = model.start(make_batch([ex], vocabs))
    total, running = 0.0, [0.0]
    for x, y in zip([vocabs.words.bos, *b.tokens], [*b.tokens, vocabs.words.eos]):
        lp = _log_softmax(model.step(state, np.array([x])).word_logits)[0, y]
        assert np.isfinite(lp)
        total += lp
        running.append(total)
    assert all(a >= c for a, c in zip(running, running[1:]))
    assert running[-1] == pytest.approx(b.logprob, abs=1e-9)


def test_max_len_forces_end(model, vocabs, prepared):
    ex = prepared[0]
    b = beam_search(model, ex, vocabs, beam=3, max_len=2, keep_greedy=False)
    assert b.finished and len(b.tokens) <= 2


def test_generate_returns_strings(model, vocabs, prepared):
    out = generate(model, prepared[:3], vocabs, beam=2)
    assert len(out) == 3 and all(isinstance(w, str) for s in out for w in s)
    assert generate(model, prepared[:3], vocabs, beam=1) == [
        vocabs.words.decode(h.tokens) for h in greedy_decode(model, prepared[:3], vocabs)
    ]


# ------------------------------------------------------------- diagnostics


def test_untrained_node_accuracy_near_chance():
    spec = SyntheticSpec(min_nodes=4, max_nodes=4, n_concepts=10, n_labels=4, n_train=60, n_dev=1, n_test=1,
                         reentrancy=0.0, seed=3)
    raws = generate_corpus(spec)["train"]
    vocabs = build_vocabs(raws)
    exs = prepare_all(raws, vocabs)
    hits = total = 0
    for k in range(5):
        m = BackParser.create(tiny_config().model, vocabs, make_rng(100 + k))
        for ex in exs[k * 12 : (k + 1) * 12]:
            rep = forced_decode_diagnostics(m, ex, vocabs)
            assert ex.n_nodes == 5
            hits += rep.node_correct
            total += rep.node_total
    assert total >= 200
    assert abs(hits / total - 0.2) <= 0.1


def test_single_token_edge_accuracy_is_binary(vocabs):
    raw = RawExample(AmrGraph(("c1",), (), 0), ("w1",), ((1, 0),))
    v = build_vocabs([raw])
    ex = prepare(raw, v)
    for seed in range(4):
        m = BackParser.create(tiny_config().model, v, make_rng(seed))
        rep = forced_decode_diagnostics(m, ex, v)
        assert rep.edge_total == 1
        assert rep.edge_accuracy in (0.0, 1.0)


def test_diagnostics_deterministic_and_bounded(model, vocabs, prepared):
    a = forced_decode_diagnostics(model, prepared[2], vocabs)
    b = forced_decode_diagnostics(model, prepared[2], vocabs)
    assert a.node_accuracy == b.node_accuracy and a.edge_accuracy == b.edge_accuracy
    assert np.array_equal(a.node_matrix, b.node_matrix)
    assert 0.0 <= a.node_accuracy <= 1.0 and 0.0 <= a.edge_accuracy <= 1.0
    pooled = (a.node_correct + a.edge_correct) / (a.node_total + a.edge_total)
    assert a.both_accuracy == pooled


def test_export_attention_round_trips(model, vocabs, prepared, tmp_path):
    ex = prepared[1]
    path = tmp_path / "att.json"
    obj = export_attention(model, ex, vocabs, path)
    back = json.loads(path.read_text())
    assert back == obj
    mat = np.array(back["matrix"])
    assert mat.shape == (len(ex.raw.tokens), ex.n_nodes)
    np.testing.assert_allclose(mat.sum(1), 1.0, atol=1e-9)
    assert back["concepts"][0] == "<null>" and len(back["concepts"]) == ex.n_nodes


def test_diagnose_layout(model, vocabs, prepared):
    res = diagnose(model, prepared[:8], vocabs, beam=1, bucket_edges=(1, 3, 5))
    assert len(res["examples"]) == 8
    assert {"id", "n_nodes", "node_acc", "edge_acc", "both_acc", "bleu"} <= set(res["examples"][0])
    assert sum(b["count"] for b in res["buckets"]) == 8
    assert set(res["pearson"]) == {"node", "edge", "both"}


# ----------------------------------------------------------------- overfit


def test_single_example_overfit_reproduces_sentence(corpus):
    raw = max(corpus["train"][:10], key=lambda r: len(r.tokens))
    vocabs = build_vocabs([raw])
    ex = prepare(raw, vocabs)
    cfg = tiny_config(**{"optim.warmup": 30, "optim.lr_factor": 1.0, "model.attention_dropout": 0.0,
                         "model.residual_dropout": 0.0, "train.log_every": 100})
    res = train(cfg, [ex], vocabs, steps=400)
    out = generate(res.model, [ex], vocabs, beam=5)[0]
    assert out == list(raw.tokens)
    rep = forced_decode_diagnostics(res.model, ex, vocabs)
    assert rep.node_accuracy >= 0.95
