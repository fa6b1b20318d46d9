import numpy as np

from backparse import model as Mdl
from backparse.config import ablation_config
from backparse.data import make_batch
from backparse.network import BackParser
from backparse.tensor import Tensor, make_rng

from conftest import tiny_config
from harness import full_gradcheck, integration_free_matches_baseline, probability_fuzz
from reference import naive_relation_attention


def test_sampled_full_model_gradcheck():
    err, n = full_gradcheck(max_coords=8)
    assert n > 100
    assert err <= 1e-3


def test_probability_fuzz_short(vocabs, prepared):
    worst = probability_fuzz(100, seed=3, vocabs=vocabs, examples=prepared)
    assert worst["steps"] >= 100
    for key in ("node", "arc", "label", "joint", "negative"):
        assert worst[key] <= 1e-9, key


def test_integration_off_reduces_to_baseline(vocabs, prepared):
    assert integration_free_matches_baseline(vocabs, prepared[:4])


def test_zero_relation_projection_gives_vanilla_attention():
    rng = np.random.default_rng(2)
    N, d, heads, R = 5, 8, 2, 4
    p = {f"a.{k}": Tensor(rng.normal(size=(d, d))) for k in ("wq", "wk", "wv", "wo")}
    p["a.wr"] = Tensor(np.zeros((3, d // heads)))
    rel_emb = Tensor(rng.normal(size=(R, 3)))
    h = rng.normal(size=(N, d))
    mask = np.ones(N, dtype=bool)
    got = Mdl.relation_attention(p, "a", Tensor(h[None]), rng.integers(0, R, (1, N, N)), mask[None], heads, rel_emb)
    W = {k: p[f"a.{k}"].data for k in ("wq", "wk", "wv", "wo")}
    want = naive_relation_attention(h, np.zeros((N, N, d // heads)), W["wq"], W["wk"], W["wv"], W["wo"], heads, mask)
    np.testing.assert_allclose(got.data[0], want, rtol=0, atol=1e-12)


def test_attention_rows_sum_to_one(vocabs, prepared):
    m = BackParser.create(tiny_config().model, vocabs, make_rng(1))
    batch = make_batch(prepared[:4], vocabs)
    weights = []
    m.encode(batch, weights_out=weights)
    assert len(weights) == m.cfg.layers
    for w in weights:
        w = w.data if isinstance(w, Tensor) else np.asarray(w)
        rows = w.sum(-1)
        valid = np.broadcast_to(batch.node_mask[:, None, :], rows.shape)
        np.testing.assert_allclose(rows[valid], 1.0, atol=1e-9)
    out = m.forward_train(batch)
    np.testing.assert_allclose(out.cross_attn.data.sum(-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(out.node_dist.data.sum(-1), 1.0, atol=1e-9)


def test_predicted_integration_differs_from_gold(vocabs, prepared):
    m = BackParser.create(tiny_config().model, vocabs, make_rng(2))
    batch = make_batch(prepared[:1], vocabs)
    a, b = m.start(batch), m.start(batch)
    tok = batch.tgt_in[:, 0]
    m.step(a, tok)
    m.step(b, tok, batch.gold_align[:, 0], (batch.arc_weights[:, 0, :1], batch.label_marginal[:, 0]))
    if batch.tgt_in.shape[1] > 1:
        x = m.step(a, batch.tgt_in[:, 1]).word_logits
        y = m.step(b, batch.tgt_in[:, 1]).word_logits
        assert not np.allclose(x, y)


def test_state_reorder_duplicates_rows(vocabs, prepared):
    m = BackParser.create(tiny_config().model, vocabs, make_rng(3))
    batch = make_batch(prepared[:2], vocabs)
    s = m.start(batch)
    m.step(s, batch.tgt_in[:, 0])
    s.reorder(np.array([1, 1]))
    out = m.step(s, batch.tgt_in[[1, 1], 1])
    np.testing.assert_array_equal(out.word_logits[0], out.word_logits[1])


def test_disabled_heads_receive_zero_gradient(vocabs, prepared):
    from backparse.config import LossWeights
    from backparse.tensor import Tape
    from backparse.training import model_loss

    m = BackParser.create(ablation_config(tiny_config(), "baseline").model, vocabs, make_rng(0))
    batch = make_batch(prepared[:3], vocabs)
    with Tape() as tape:
        loss = model_loss(m, batch, LossWeights())
    tape.backward(loss)
    for name, p in m.params.items():
        if name.startswith("biaff."):
            assert not p.grad.any(), name
    assert m.params["dec.edge_proj.w"].grad is None or not m.params["dec.edge_proj.w"].grad.any()
    assert any(p.grad.any() for n, p in m.params.items() if not n.startswith("biaff."))
