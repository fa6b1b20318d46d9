"""The seven-configuration ablation matrix: train each switch setting over several seeds and compare test BLEU."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ABLATIONS, RunConfig, ablation_config
from .data import PreparedExample, Vocabs
from .decoding import generate
from .metrics import bleu

log = logging.getLogger(__name__)


@dataclass
class AblationRow:
    name: str
    scores: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores, ddof=1)) if len(self.scores) > 1 else 0.0


@dataclass
class AblationTable:
    rows: list[AblationRow]
    seeds: list[int]

    def row(self, name: str) -> AblationRow:
        return next(r for r in self.rows if r.name == name)

    def significant(self, name: str, reference: str = "baseline") -> bool:
        """Welch-style check: the gap to ``reference`` exceeds two standard errors."""
        a, b = self.row(name), self.row(reference)
        n = len(self.seeds)
        se = math.sqrt((a.std**2 + b.std**2) / n) if n > 1 else 0.0
        return abs(a.mean - b.mean) > 2.0 * se and a.mean != b.mean

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "rows": [
                {"name": r.name, "scores": r.scores, "mean": r.mean, "std": r.std, "significant": self.significant(r.name)}
                for r in self.rows
            ],
        }


def run_ablation(
    base: RunConfig,
    train_set: Sequence[PreparedExample],
    test_set: Sequence[PreparedExample],
    vocabs: Vocabs,
    seeds: Sequence[int] = (1, 2, 3),
    names: Sequence[str] | None = None,
    steps: int | None = None,
    beam: int | None = None,
    out_dir=None,
    keep_models: bool = False,
) -> AblationTable:
    """Train every configuration for every seed and score corpus BLEU on ``test_set``.

    Dev selection is disabled (no dev set), so each run reports its final
    parameters. ``beam`` defaults to the config's beam size.
    """
    from .training import train

    names = list(names or ABLATIONS)
    beam = base.decode.beam if beam is None else beam
    refs = [list(ex.raw.tokens) for ex in test_set]
    rows = []
    models = {}
    for name in names:
        row = AblationRow(name)
        for seed in seeds:
            cfg = ablation_config(base, name).replace(**{"train.seed": int(seed)})
            res = train(cfg, train_set, vocabs, steps=steps)
            hyps = generate(res.model, test_set, vocabs, beam, cfg.decode.len_penalty, cfg.decode.max_len_extra)
            score = bleu(hyps, refs)
            row.scores.append(score)
            log.info("ablation %s seed %d: BLEU %.2f", name, seed, score)
            if keep_models:
                models[(name, seed)] = res.model
        rows.append(row)
    table = AblationTable(rows, [int(s) for s in seeds])
    table.models = models
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(table.to_dict(), indent=2) + "\n")
        (out / "ablation.txt").write_text(format_table(table) + "\n")
        (out / "config.json").write_text(base.dumps() + "\n")
    return table


def format_table(table: AblationTable) -> str:
    seeds = "".join(f"{'seed ' + str(s):>9}" for s in table.seeds)
    lines = [f"{'configuration':<16}{seeds}{'mean':>9}{'std':>8}  vs baseline"]
    base = table.row("baseline") if any(r.name == "baseline" for r in table.rows) else None
    for r in table.rows:
        cells = "".join(f"{s:>9.2f}" for s in r.scores)
        note = ""
        if base is not None and r is not base:
            delta = r.mean - base.mean
            note = f"{delta:+.2f}" + ("" if table.significant(r.name) else " (n.s.)")
        lines.append(f"{r.name:<16}{cells}{r.mean:>9.2f}{r.std:>8.2f}  {note}")
    return "\n".join(lines)
