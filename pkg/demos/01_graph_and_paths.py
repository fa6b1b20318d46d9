"""From a PENMAN graph to encoder relations and decoder arcs."""

import numpy as np

from backparse.amr import RawExample, augment_null, parse_penman, project_edges, shortest_label_path
from backparse.data import build_vocabs, prepare

print("== 1. parse a graph =================================")
g = parse_penman("(p / possible-01 :ARG1 (h / help-01 :ARG0 (p2 / police) :ARG1 (v / victim)))")
print("   concepts:", g.concepts)
print("   edges:   ", g.edges)

print("== 2. add the NULL node ============================")
a = augment_null(g)
print("   concepts:", a.concepts)
print("   root edge:", a.edges[0])

print("== 3. shortest label paths between nodes ===========")
for i, j in [(4, 3), (3, 4), (1, 4), (2, 2)]:
    print(f"   {a.concepts[i]:>12} -> {a.concepts[j]:<12} {shortest_label_path(a, i, j)}")

print("== 4. project graph edges onto a sentence ==========")
tokens = "The police could help the victim".split()
# (1-based token position, augmented node id)
align = [(2, 3), (3, 1), (4, 2), (6, 4)]
for t, j, label in project_edges(a, align, len(tokens)):
    print(f"   {tokens[t - 1]:>7} -> {tokens[j - 1]:<7} {label}")

print("== 5. the prepared training example ================")
raw = RawExample(g, tuple(tokens), ((2, 2), (3, 0), (4, 1), (6, 3)))
vocabs = build_vocabs([raw])
ex = prepare(raw, vocabs)
np.set_printoptions(precision=2, suppress=True)
print("   relation ids:\n", ex.rel_ids)
print("   gold node distribution per target position (last row is </s>):\n", ex.projected.gold_align)
