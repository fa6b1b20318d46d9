"""Train the seven switch settings over several seeds and compare test BLEU.

Usage: python3 demos/04_ablation_matrix.py [STEPS] [SEEDS]

The defaults (1000 steps, seeds 1,2,3) take about half an hour on one core.
Below a few hundred steps every model is still warming up and scores near zero.
"""

import logging
import sys

from backparse.ablation import format_table, run_ablation
from backparse.config import ABLATIONS, desk_config
from backparse.data import build_vocabs, prepare_all
from backparse.synth import SyntheticSpec, generate_corpus

logging.basicConfig(level=logging.INFO, format="   %(message)s", stream=sys.stdout)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
seeds = [int(s) for s in sys.argv[2].split(",")] if len(sys.argv) > 2 else [1, 2, 3]

print("== configurations ===================================")
for name, flags in ABLATIONS.items():
    print(f"   {name:<14} {flags}")

corpus = generate_corpus(SyntheticSpec())
vocabs = build_vocabs(corpus["train"])
train_set = prepare_all(corpus["train"], vocabs)
test_set = prepare_all(corpus["test"], vocabs)

print(f"== training {len(ABLATIONS)} x {len(seeds)} runs of {steps} steps ==")
table = run_ablation(desk_config(), train_set, test_set, vocabs, seeds=seeds, steps=steps)

print("== test BLEU ========================================")
print(format_table(table))
print("   (n.s.) marks gaps to the baseline within two standard errors")
