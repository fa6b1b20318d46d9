"""Forced-decode diagnostics: how well the model predicts the nodes and edges behind each word (about two minutes)."""

import json
import tempfile
from pathlib import Path

import numpy as np

from backparse.config import desk_config
from backparse.data import build_vocabs, prepare_all
from backparse.decoding import diagnose, export_attention, forced_decode_diagnostics
from backparse.synth import SyntheticSpec, generate_corpus
from backparse.training import train

corpus = generate_corpus(SyntheticSpec(n_train=200, n_dev=10, n_test=40, seed=5))
vocabs = build_vocabs(corpus["train"])
train_set = prepare_all(corpus["train"], vocabs)
test_set = prepare_all(corpus["test"], vocabs)

print("== 1. a partially trained model =====================")
res = train(desk_config(), train_set, vocabs, steps=800)
model = res.model

print("== 2. one example under forced decoding =============")
rep = forced_decode_diagnostics(model, test_set[0], vocabs)
print(f"   node accuracy {rep.node_accuracy:.2f}, edge accuracy {rep.edge_accuracy:.2f}")
np.set_printoptions(precision=2, suppress=True)
print("   word-to-node distribution (rows: words, cols: NULL + nodes)")
print(rep.node_matrix)

print("== 3. corpus diagnostics ============================")
out = diagnose(model, test_set, vocabs, beam=5, bucket_edges=(1, 4, 7))
print(f"   corpus BLEU {out['corpus_bleu']:.2f}")
for row in out["buckets"]:
    score = "n/a" if row["bleu"] is None else f"{row['bleu']:.2f}"
    print(f"   nodes {row['bucket']:<5} count {row['count']:>3}  BLEU {score}")
print("   pearson rho with sentence BLEU:", {k: round(v, 3) for k, v in out["pearson"].items() if v is not None})

print("== 4. export an attention matrix for plotting ======")
path = Path(tempfile.mkdtemp()) / "attention.json"
export_attention(model, test_set[0], vocabs, path)
obj = json.loads(path.read_text())
print("   tokens:  ", obj["tokens"])
print("   concepts:", obj["concepts"])
print("   written: ", path)
