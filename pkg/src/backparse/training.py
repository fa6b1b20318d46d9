"""Losses, Adam with the noam schedule, and the training loop."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import LossWeights, RunConfig
from .data import Batch, PreparedExample, Vocabs, make_batch, token_batches
from .network import BackParser, TrainOutput
from .tensor import NumericError, Tape, Tensor

log = logging.getLogger(__name__)


# ------------------------------------------------------------------- losses


def loss_std(word_logits: Tensor, gold: np.ndarray, mask: np.ndarray) -> Tensor:
    """Summed negative log-likelihood of the gold words, averaged over the batch."""
    B = word_logits.shape[0]
    lp = T.log_softmax(word_logits, None, axis=-1)
    b, t = np.nonzero(mask)
    picked = lp[b, t, gold[b, t]]
    return T.scale(T.tsum(picked), -1.0 / B)


def loss_node(node_dist: Tensor, gold: np.ndarray, mask: np.ndarray, kind: str = "CE") -> Tensor:
    """Discrepancy between predicted and gold node distributions, summed over steps.

    ``CE``: ``-sum_i gold_i log pred_i``; ``MSE``: ``sum_i (pred_i - gold_i)^2``.
    """
    B = node_dist.shape[0]
    step_mask = np.asarray(mask, dtype=np.float64)[..., None]
    if kind == "CE":
        support = gold > 0
        logp = T.log(T.masked_fill(node_dist, ~support, 1.0))
        per = T.mul(logp, gold * step_mask)
        return T.scale(T.tsum(per), -1.0 / B)
    if kind == "MSE":
        d = node_dist - gold
        return T.scale(T.tsum(T.mul(T.mul(d, d), step_mask)), 1.0 / B)
    raise ValueError(f"unknown node loss {kind!r}")


def loss_label(arc_logp: Tensor, label_logp: Tensor, arc_index) -> Tensor:
    """``-sum log(label_prob * arc_prob)`` over all projected gold arcs."""
    b, t, j, k = arc_index
    if np.any(j > t):
        raise ValueError("gold arc points to a later position")
    B = arc_logp.shape[0]
    total = T.tsum(arc_logp[b, t, j]) + T.tsum(label_logp[b, t, j, k])
    return T.scale(total, -1.0 / B)


def loss_total(std: Tensor, node: Tensor | None, label: Tensor | None, w: LossWeights) -> Tensor:
    out = std
    if node is not None and w.node:
        out = out + T.scale(node, w.node)
    if label is not None and w.edge:
        out = out + T.scale(label, w.edge)
    return out


def compute_losses(model: BackParser, batch: Batch, out: TrainOutput, w: LossWeights) -> dict[str, Tensor]:
    cfg = model.cfg
    std = loss_std(out.word_logits, batch.tgt_out, batch.tgt_mask)
    node = loss_node(out.node_dist, batch.gold_align, batch.tgt_mask, cfg.node_loss_kind) if cfg.enable_node else None
    label = loss_label(out.arc_logp, out.label_logp, batch.arc_index) if cfg.enable_edge else None
    return {"std": std, "node": node, "label": label, "total": loss_total(std, node, label, w)}


def model_loss(model: BackParser, batch: Batch, w: LossWeights, rng=None) -> Tensor:
    return compute_losses(model, batch, model.forward_train(batch, rng), w)["total"]


# ---------------------------------------------------------------- optimiser


def noam_lr(step: int, d: int, factor: float, warmup: int) -> float:
    step = max(step, 1)
    return factor * d**-0.5 * min(step**-0.5, step * warmup**-1.5)


class Adam:
    def __init__(self, params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if max_norm > 0 and total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= s
    return total


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    model: BackParser
    metrics: list[dict] = field(default_factory=list)
    best_bleu: float | None = None
    best_step: int | None = None
    clipped: int = 0
    steps_run: int = 0


def seeded_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent counter-based streams for initialisation, batching and dropout."""
    return {name: T.make_rng(seed * 1000 + k) for k, name in enumerate(("init", "batch", "dropout"))}


def train(
    config: RunConfig,
    train_set: Sequence[PreparedExample],
    vocabs: Vocabs,
    dev_set: Sequence[PreparedExample] = (),
    steps: int | None = None,
    out_dir=None,
    model: BackParser | None = None,
    evaluate: Callable[[BackParser, Sequence[PreparedExample]], float] | None = None,
    stop_when: Callable[[BackParser, dict], bool] | None = None,
) -> TrainResult:
    """Optimise ``loss_total`` with Adam under the noam schedule.

    Every ``eval_every`` steps (and at the end) dev BLEU is computed with
    ``evaluate`` (greedy decoding by default); the best-scoring parameters
    are kept and restored at the end. ``stop_when(model, record)`` runs
    after each dev evaluation and ends training early when it returns
    true. With ``out_dir`` the metrics log, effective config and best/last
    checkpoints are written there.
    """
    if not train_set:
        raise ValueError("training corpus is empty")
    config.validate()
    tc, oc = config.train, config.optim
    steps = tc.steps if steps is None else steps
    streams = seeded_streams(tc.seed)
    if model is None:
        model = BackParser.create(config.model, vocabs, streams["init"])
    if evaluate is None:
        from .decoding import corpus_bleu_greedy

        evaluate = lambda m, exs: corpus_bleu_greedy(m, exs, vocabs)  # noqa: E731
    params = model.parameters()
    opt = Adam(params, oc.beta1, oc.beta2, oc.eps)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(config.dumps() + "\n")
        metrics_file = open(out / "metrics.jsonl", "w", encoding="utf-8")
    else:
        metrics_file = None
    result = TrainResult(model)
    best_params = None
    dev = list(dev_set)[: tc.dev_max_examples]
    batches = _batch_stream(train_set, vocabs, tc.batch_tokens, streams["batch"])
    dropout_rng = streams["dropout"]
    running: dict[str, list[float]] = {"std": [], "node": [], "label": [], "total": []}
    try:
        for step in range(1, steps + 1):
            batch = next(batches)
            opt.zero_grad()
            with Tape() as tape:
                losses = compute_losses(model, batch, model.forward_train(batch, dropout_rng), config.loss)
            total = losses["total"]
            if not np.isfinite(total.data):
                raise NumericError(f"non-finite loss at step {step}: {float(total.data)}")
            tape.backward(total)
            norm = clip_grad_norm(params, oc.clip_norm)
            if oc.clip_norm > 0 and norm > oc.clip_norm:
                result.clipped += 1
            lr = noam_lr(step, config.model.d, oc.lr_factor, oc.warmup)
            opt.step(lr)
            result.steps_run = step
            for k, v in losses.items():
                if v is not None:
                    running[k].append(float(v.data))
            do_eval = bool(dev) and (step % tc.eval_every == 0 or step == steps)
            if step % tc.log_every == 0 or do_eval or step == steps:
                rec = {
                    "step": step,
                    "lr": lr,
                    "loss_std": _mean(running["std"]),
                    "loss_node": _mean(running["node"]),
                    "loss_label": _mean(running["label"]),
                    "loss_total": _mean(running["total"]),
                    "dev_bleu": None,
                }
                running = {k: [] for k in running}
                if do_eval:
                    bleu = evaluate(model, dev)
                    rec["dev_bleu"] = bleu
                    if result.best_bleu is None or bleu > result.best_bleu:
                        result.best_bleu, result.best_step = bleu, step
                        best_params = {k: p.data.copy() for k, p in model.params.items()}
                        if out is not None:
                            checkpoint.save(out / "best.bpg", model.params, tc.seed, {"step": step, "dev_bleu": bleu})
                result.metrics.append(rec)
                log.info("step %d lr %.3g loss %.4f dev %s", step, lr, rec["loss_total"] or 0.0, rec["dev_bleu"])
                if metrics_file is not None:
                    metrics_file.write(json.dumps(rec) + "\n")
                    metrics_file.flush()
                if do_eval and stop_when is not None and stop_when(model, rec):
                    log.info("stopping early at step %d", step)
                    break
    finally:
        if metrics_file is not None:
            metrics_file.close()
    if out is not None:
        checkpoint.save(out / "last.bpg", model.params, tc.seed, {"step": result.steps_run})
    if best_params is not None:
        for k, p in model.params.items():
            p.data = best_params[k]
    if result.clipped:
        log.info("gradient clipping triggered on %d of %d steps", result.clipped, result.steps_run)
    return result


def _mean(xs: list[float]) -> float | None:
    return float(np.mean(xs)) if xs else None


def _batch_stream(examples, vocabs: Vocabs, batch_tokens: int, rng):
    while True:
        for group in token_batches(examples, batch_tokens, rng):
            yield make_batch(group, vocabs)


def copy_model(model: BackParser) -> BackParser:
    params = {k: Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in model.params.items()}
    return BackParser(copy.deepcopy(model.cfg), params, model.label_rel_ids)
