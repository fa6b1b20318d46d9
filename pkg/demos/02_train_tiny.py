"""Train a small model on a synthetic corpus and watch it learn (about two minutes)."""

import logging
import sys
import time

from backparse.config import desk_config
from backparse.data import build_vocabs, prepare_all
from backparse.decoding import generate
from backparse.synth import SyntheticSpec, generate_corpus
from backparse.training import train

logging.basicConfig(level=logging.INFO, format="   %(message)s", stream=sys.stdout)

print("== 1. synthesise a corpus ==========================")
corpus = generate_corpus(SyntheticSpec(n_train=100, n_dev=20, n_test=20, seed=3))
ex = corpus["train"][0]
print("   graph:   ", ex.graph.concepts, ex.graph.edges)
print("   sentence:", " ".join(ex.tokens))
print("   aligned: ", ex.align)

print("== 2. vocabularies and tensors =====================")
vocabs = build_vocabs(corpus["train"])
train_set = prepare_all(corpus["train"], vocabs)
dev_set = prepare_all(corpus["dev"], vocabs)
print(f"   {len(vocabs.words)} words, {len(vocabs.concepts)} concepts, {len(vocabs.relations)} relation paths")

print("== 3. train the full model =========================")
cfg = desk_config(**{"train.eval_every": 250, "train.log_every": 250})
t = time.time()
res = train(cfg, train_set, vocabs, dev_set=dev_set, steps=1000)
print(f"   best dev BLEU {res.best_bleu:.2f} at step {res.best_step} ({time.time() - t:.0f}s)")

print("== 4. generate ======================================")
for ex, hyp in zip(corpus["dev"][:3], generate(res.model, dev_set[:3], vocabs, beam=5)):
    print("   ref:", " ".join(ex.tokens))
    print("   hyp:", " ".join(hyp))
