import json
import math

import numpy as np
import pytest

from backparse import checkpoint
from backparse.checkpoint import CheckpointError
from backparse.config import LossWeights
from backparse.data import make_batch
from backparse.network import BackParser
from backparse.tensor import NumericError, Tape, Tensor, make_rng
from backparse.training import (
    Adam,
    clip_grad_norm,
    compute_losses,
    loss_label,
    loss_node,
    loss_std,
    loss_total,
    noam_lr,
    train,
)

from conftest import tiny_config


# ------------------------------------------------------------------ loss_std


def test_loss_std_perfect_and_uniform():
    gold = np.array([[1, 2, 0]])
    mask = np.array([[True, True, False]])
    perfect = np.full((1, 3, 4), -1e4)
    perfect[0, [0, 1, 2], [1, 2, 0]] = 1e4
    assert loss_std(Tensor(perfect), gold, mask).data == pytest.approx(0.0, abs=1e-12)
    uniform = np.zeros((2, 5, 1000))
    mask = np.ones((2, 5), dtype=bool)
    mask[1, 3:] = False
    got = loss_std(Tensor(uniform), np.zeros((2, 5), dtype=int), mask).data
    # mean over examples of M_b * ln 1000 with M = (5, 3)
    assert got == pytest.approx((5 + 3) / 2 * math.log(1000), abs=1e-10)


def test_loss_std_matches_reference():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(3, 6, 11))
    gold = rng.integers(0, 11, size=(3, 6))
    mask = rng.random((3, 6)) < 0.7
    want = 0.0
    for b in range(3):
        for t in range(6):
            if mask[b, t]:
                row = logits[b, t]
                want -= row[gold[b, t]] - math.log(sum(math.exp(v) for v in row))
    assert loss_std(Tensor(logits), gold, mask).data == pytest.approx(want / 3, abs=1e-10)


# ----------------------------------------------------------------- loss_node


def test_loss_node_closed_forms():
    mask = np.ones((1, 2), dtype=bool)
    onehot = np.array([[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]])
    assert loss_node(Tensor(onehot), onehot, mask, "MSE").data == 0.0
    assert loss_node(Tensor(onehot), onehot, mask, "CE").data == pytest.approx(0.0, abs=1e-15)
    N1, k = 5, 3
    pred = np.full((1, 1, N1), 1.0 / N1)
    gold = np.zeros((1, 1, N1))
    gold[0, 0, :k] = 1.0 / k
    got = loss_node(Tensor(pred), gold, np.ones((1, 1), dtype=bool), "CE").data
    assert got == pytest.approx(math.log(N1), abs=1e-12)
    with pytest.raises(ValueError):
        loss_node(Tensor(pred), gold, np.ones((1, 1), dtype=bool), "KL")


def test_loss_node_masks_padding():
    pred = np.full((1, 2, 2), 0.5)
    gold = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    only_first = loss_node(Tensor(pred), gold, np.array([[True, False]]), "CE").data
    assert only_first == pytest.approx(math.log(2), abs=1e-12)


# ---------------------------------------------------------------- loss_label


def test_loss_label_self_loop_and_uniform():
    arc_logp = Tensor(np.zeros((1, 1, 1)))
    label_logp = Tensor(np.log(np.array([[[[1.0, 0.0, 0.0]]]]) + 1e-300))
    idx = (np.array([0]), np.array([0]), np.array([0]), np.array([0]))
    assert loss_label(arc_logp, label_logp, idx).data == pytest.approx(0.0, abs=1e-12)
    # uniform factors: arc from position t (0-based) has t+1 choices
    R, Tn = 4, 3
    arc = np.log(np.tril(np.ones((Tn, Tn))) / np.arange(1, Tn + 1)[:, None] + 1e-300)[None]
    lab = np.full((1, Tn, Tn, R), -math.log(R))
    idx = (np.array([0, 0, 0]), np.array([0, 1, 2]), np.array([0, 0, 1]), np.array([0, 2, 3]))
    want = sum(math.log(t + 1) + math.log(R) for t in (0, 1, 2))
    assert loss_label(Tensor(arc), Tensor(lab), idx).data == pytest.approx(want, abs=1e-10)
    with pytest.raises(ValueError):
        loss_label(Tensor(arc), Tensor(lab), (np.array([0]), np.array([0]), np.array([1]), np.array([0])))


def test_loss_label_equals_sum_of_per_arc_terms(vocabs, prepared):
    m = BackParser.create(tiny_config().model, vocabs, make_rng(0))
    batch = make_batch(prepared[:4], vocabs)
    out = m.forward_train(batch)
    got = loss_label(out.arc_logp, out.label_logp, batch.arc_index).data
    arcs, labels = out.arc_probs, out.label_probs
    want = 0.0
    for b, t, j, k in zip(*batch.arc_index):
        want -= math.log(arcs[b, t, j]) + math.log(labels[b, t, j, k])
    assert got == pytest.approx(want / len(batch.examples), abs=1e-10)


def test_zero_biaffine_gives_uniform_label_loss(vocabs, prepared):
    m = BackParser.create(tiny_config().model, vocabs, make_rng(0))
    for name, p in m.params.items():
        if name.startswith("biaff.") and (name.endswith(".U") or name.endswith(".W") or name.endswith(".b")):
            p.data[...] = 0.0
    batch = make_batch(prepared[:1], vocabs)
    out = m.forward_train(batch)
    got = loss_label(out.arc_logp, out.label_logp, batch.arc_index).data
    R = len(vocabs.labels)
    want = sum(math.log(t + 1) + math.log(R) for t in batch.arc_index[1])
    assert got == pytest.approx(want, abs=1e-9)


# ---------------------------------------------------------------- loss_total


def grads_of(m, f):
    for p in m.parameters():
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    return {k: p.grad.copy() for k, p in m.params.items()}


def test_loss_total_weights_and_linearity(vocabs, prepared):
    m = BackParser.create(tiny_config().model, vocabs, make_rng(1))
    batch = make_batch(prepared[:3], vocabs)

    def parts():
        return compute_losses(m, batch, m.forward_train(batch), LossWeights(0.3, 0.7))

    p = parts()
    assert loss_total(p["std"], p["node"], p["label"], LossWeights(0.0, 0.0)).data == p["std"].data
    assert p["total"].data == pytest.approx(p["std"].data + 0.3 * p["node"].data + 0.7 * p["label"].data, abs=1e-12)
    g_total = grads_of(m, lambda: parts()["total"])
    g = {k: grads_of(m, lambda k=k: parts()[k]) for k in ("std", "node", "label")}
    for name in g_total:
        want = g["std"][name] + 0.3 * g["node"][name] + 0.7 * g["label"][name]
        np.testing.assert_allclose(g_total[name], want, rtol=1e-10, atol=1e-12)


def test_disabled_heads_contribute_nothing(vocabs, prepared):
    from backparse.config import ablation_config

    m = BackParser.create(ablation_config(tiny_config(), "baseline").model, vocabs, make_rng(1))
    batch = make_batch(prepared[:2], vocabs)
    p = compute_losses(m, batch, m.forward_train(batch), LossWeights())
    assert p["node"] is None and p["label"] is None
    assert p["total"].data == p["std"].data


# ----------------------------------------------------------------- optimiser


def test_noam_schedule():
    d, f, w = 64, 0.5, 400
    assert noam_lr(w, d, f, w) == pytest.approx(f * d**-0.5 * w**-0.5, rel=1e-15)
    lrs = [noam_lr(s, d, f, w) for s in range(1, 3 * w)]
    assert min(lrs) > 0
    assert int(np.argmax(lrs)) + 1 == w
    assert noam_lr(0, d, f, w) == noam_lr(1, d, f, w)


def test_adam_zero_gradient_is_a_no_op_and_matches_hand_step():
    rng = np.random.default_rng(0)
    p = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    before = p.data.copy()
    opt = Adam([p])
    p.grad = np.zeros_like(p.data)
    opt.step(0.1)
    assert np.array_equal(p.data, before)

    q = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([q], 0.9, 0.98, 1e-9)
    q.grad = np.array([0.5, -4.0])
    opt.step(0.01)
    # first step: m_hat = g, v_hat = g^2, so the update is lr * sign(g) up to eps
    np.testing.assert_allclose(q.data, [1.0 - 0.01, -2.0 + 0.01], atol=1e-9)


def test_clip_grad_norm():
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(1), requires_grad=True)
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    total = math.sqrt((a.grad**2).sum() + (b.grad**2).sum())
    assert total == pytest.approx(1.0, abs=1e-9)
    a.grad = np.array([0.3, 0.0])
    b.grad = np.array([0.4])
    clip_grad_norm([a, b], 1.0)
    np.testing.assert_array_equal(a.grad, [0.3, 0.0])


# ------------------------------------------------------------------ training


def smoke_config(**kw):
    return tiny_config(**{"train.log_every": 1, "train.batch_tokens": 64, "optim.warmup": 20, **kw})


def test_loss_decreases_on_small_corpus(vocabs, prepared):
    # every step sees the whole corpus, so only dropout adds noise
    res = train(smoke_config(**{"train.batch_tokens": 4096}), prepared[:10], vocabs, steps=50)
    losses = np.array([r["loss_total"] for r in res.metrics])
    smooth = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smooth) < 0)
    assert losses[-10:].mean() < 0.7 * losses[:10].mean()


def test_training_is_deterministic_and_logs(vocabs, prepared, tmp_path):
    cfg = smoke_config(**{"train.eval_every": 5})
    a = train(cfg, prepared[:10], vocabs, dev_set=prepared[10:13], steps=10, out_dir=tmp_path / "a")
    b = train(cfg, prepared[:10], vocabs, dev_set=prepared[10:13], steps=10, out_dir=tmp_path / "b")
    la = (tmp_path / "a" / "metrics.jsonl").read_text()
    assert la == (tmp_path / "b" / "metrics.jsonl").read_text()
    recs = [json.loads(line) for line in la.splitlines()]
    assert [r["step"] for r in recs] == list(range(1, 11))
    assert recs[4]["dev_bleu"] is not None and recs[3]["dev_bleu"] is None
    assert all(np.array_equal(a.model.params[k].data, b.model.params[k].data) for k in a.model.params)
    for name in ("best.bpg", "last.bpg", "config.json"):
        assert (tmp_path / "a" / name).exists()
    cfg_back = type(cfg).load(tmp_path / "a" / "config.json")
    assert cfg_back == cfg


def test_best_checkpoint_restored(vocabs, prepared, tmp_path):
    scores = iter([5.0, 1.0])
    snapshots = []

    def fake_eval(model, exs):
        snapshots.append(model.params["word_emb"].data.copy())
        return next(scores)

    cfg = smoke_config(**{"train.eval_every": 2})
    res = train(cfg, prepared[:5], vocabs, dev_set=prepared[:2], steps=4, evaluate=fake_eval, out_dir=tmp_path)
    assert res.best_step == 2 and res.best_bleu == 5.0
    np.testing.assert_array_equal(res.model.params["word_emb"].data, snapshots[0])
    params, meta = checkpoint.load(tmp_path / "best.bpg")
    np.testing.assert_array_equal(params["word_emb"], snapshots[0])
    assert meta["meta"]["step"] == 2


def test_stop_when_ends_training_after_an_evaluation(vocabs, prepared, tmp_path):
    seen = []

    def stop(model, rec):
        seen.append(rec["step"])
        return rec["step"] >= 4

    cfg = smoke_config(**{"train.eval_every": 2})
    res = train(cfg, prepared[:5], vocabs, dev_set=prepared[:2], steps=10, evaluate=lambda m, e: 1.0,
                stop_when=stop, out_dir=tmp_path)
    assert seen == [2, 4] and res.steps_run == 4
    assert [r["step"] for r in res.metrics][-1] == 4
    _, meta = checkpoint.load(tmp_path / "last.bpg")
    assert meta["meta"]["step"] == 4


def test_non_finite_loss_aborts(vocabs, prepared):
    m = BackParser.create(tiny_config().model, vocabs, make_rng(0))
    m.params["word_emb"].data[...] = np.nan
    with pytest.raises(NumericError):
        train(smoke_config(), prepared[:4], vocabs, steps=2, model=m)


def test_empty_corpus_rejected(vocabs):
    with pytest.raises(ValueError):
        train(smoke_config(), [], vocabs, steps=1)


# --------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_is_bit_exact(vocabs, prepared, tmp_path):
    m = BackParser.create(tiny_config().model, vocabs, make_rng(5))
    batch = make_batch(prepared[:3], vocabs)
    before = m.forward_train(batch).word_logits.data
    path = tmp_path / "m.bpg"
    checkpoint.save(path, m.params, seed=5, meta={"note": "x"})
    fresh = BackParser.create(tiny_config().model, vocabs, make_rng(99))
    meta = checkpoint.load_into(path, fresh.params)
    assert meta["rng"] == {"algorithm": "philox4x64", "seed": 5} and meta["meta"] == {"note": "x"}
    assert np.array_equal(fresh.forward_train(batch).word_logits.data, before)


def test_checkpoint_errors(tmp_path, vocabs):
    bad = tmp_path / "bad.bpg"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        checkpoint.load(bad)
    m = BackParser.create(tiny_config().model, vocabs, make_rng(0))
    good = tmp_path / "good.bpg"
    checkpoint.save(good, {"only": np.zeros(2)}, seed=1)
    with pytest.raises(CheckpointError):
        checkpoint.load_into(good, m.params)
