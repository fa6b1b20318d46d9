import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backparse.metrics import bleu, bleu_stats, bucket_by_graph_size, pearson, sentence_bleu

# hand-computed: clipped matches over the three pairs give
# p1 = 11/14, p2 = 7/11, p3 = 4/8, p4 = 2/5; c = r = 14 so BP = 1;
# the product of precisions is exactly 0.1, BLEU = 100 * 0.1 ** 0.25
FIXTURE_CANDS = ["the cat sat on the mat", "a dog runs", "he reads a book today"]
FIXTURE_REFS = ["the cat sat on a mat", "the dog runs fast", "he reads a book"]
FIXTURE_BLEU = 56.23413251903491


def split(xs):
    return [s.split() for s in xs]


def test_bleu_hand_computed_fixture():
    assert bleu(split(FIXTURE_CANDS), split(FIXTURE_REFS)) == pytest.approx(FIXTURE_BLEU, abs=0.01)
    assert FIXTURE_BLEU == pytest.approx(100 * 0.1**0.25, abs=1e-12)


def test_bleu_stats_per_sentence():
    assert bleu_stats("the cat sat on the mat".split(), "the cat sat on a mat".split()) == [6, 6, 5, 6, 3, 5, 2, 4, 1, 3]


def test_bleu_identical_is_exactly_100():
    refs = split(FIXTURE_REFS)
    assert f"{bleu(refs, refs):.2f}" == "100.00"
    assert bleu(refs, refs) == 100.0


def test_bleu_zero_four_gram_matches():
    assert bleu(split(["a b c d e"]), split(["a b c x d e"])) == 0.0


def test_bleu_brevity_penalty():
    got = bleu(split(["a b c d"]), split(["a b c d e f"]))
    assert got == pytest.approx(100 * math.exp(1 - 6 / 4), abs=1e-9)


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu([["a"]], [])


words = st.lists(st.sampled_from("abcd"), min_size=0, max_size=7)


@settings(max_examples=60, deadline=None)
@given(pairs=st.lists(st.tuples(words, words), min_size=1, max_size=5), seed=st.integers(0, 1000))
def test_property_bleu_permutation_invariant_and_bounded(pairs, seed):
    cands, refs = [list(c) for c, _ in pairs], [list(r) for _, r in pairs]
    score = bleu(cands, refs)
    assert 0.0 <= score <= 100.0
    order = np.random.default_rng(seed).permutation(len(pairs))
    assert bleu([cands[i] for i in order], [refs[i] for i in order]) == pytest.approx(score, abs=1e-9)
    if score == 100.0:
        assert cands == refs


def test_sentence_bleu_smoothed_is_positive_for_partial_match():
    assert sentence_bleu("a b c".split(), "a b d".split()) > 0.0
    assert sentence_bleu([], ["a"]) == 0.0
    assert sentence_bleu("a b c d".split(), "a b c d".split()) == pytest.approx(100.0)


def test_pearson_fixture_and_extremes():
    # dx = (-2,-1,0,1,2), dy = (-2,0,1,0,1): sum dx*dy = 6, sxx = 10, syy = 6
    assert pearson([1, 2, 3, 4, 5], [2, 4, 5, 4, 5]) == pytest.approx(6 / math.sqrt(60), abs=1e-12)
    assert pearson([1, 2, 3, 4, 5], [2, 4, 5, 4, 5]) == pytest.approx(0.7745966692414834, abs=1e-12)
    xs = [0.3, -1.0, 2.5, 4.0]
    assert pearson(xs, xs) == pytest.approx(1.0, abs=1e-15)
    assert pearson(xs, [-x for x in xs]) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(ValueError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [2])


def test_buckets():
    sizes = [1, 2, 5, 9, 12]
    cands = split(["a b c d", "a b c d e", "x y z w", "p q r s", "a b c d"])
    refs = split(["a b c d", "a b c d e", "x y z w", "p q r t", "a b c d"])
    rows = bucket_by_graph_size(sizes, cands, refs, [1, 4, 7, 10, 20])
    assert [r["count"] for r in rows] == [2, 1, 1, 1, 0]
    assert sum(r["count"] for r in rows) == len(sizes)
    assert rows[-1]["bleu"] is None and rows[-1]["bucket"] == "20+"
    assert rows[0]["bleu"] == 100.0
    (single,) = bucket_by_graph_size(sizes, cands, refs, [0])
    assert single["count"] == 5 and single["bleu"] == bleu(cands, refs)
    with pytest.raises(ValueError):
        bucket_by_graph_size(sizes, cands, refs, [5, 1])
