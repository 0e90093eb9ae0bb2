import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from metric_oracles import brute_counts, brute_f1, brute_psa, spearman_enumeration_p, wilcoxon_enumeration_p
from dichotomic.metrics import (
    AlignmentError,
    ConfusionCounts,
    InsufficientData,
    LabelCounts,
    MissingPolicy,
    TieDegenerate,
    confusion,
    f1_scores,
    interrun_agreement,
    label_prevalence,
    metrics_report,
    prevalence_agreement,
    psa,
    spearman,
    wilcoxon_signed_rank,
)


def random_rows(rng, n_docs, k, p_none=0.1):
    def cell():
        r = rng.random()
        return None if r < p_none else r < 0.5 + p_none / 2
    return {f"d{i}": tuple(cell() for _ in range(k)) for i in range(n_docs)}


def test_confusion_examples():
    gold = {f"d{i}": (i % 2 == 0, True) for i in range(5)}
    c = confusion(gold, gold)
    assert all(x.fp == 0 and x.fn == 0 for x in c.labels)
    pred = {f"d{i}": (True,) for i in range(4)}
    neg = {f"d{i}": (False,) for i in range(4)}
    assert confusion(pred, neg).labels[0].fp == 4


def test_confusion_id_mismatch():
    with pytest.raises(AlignmentError):
        confusion({"a": (True,)}, {"b": (True,)})


def test_confusion_recount_oracle():
    rng = random.Random(0)
    for _ in range(200):
        pred, gold = random_rows(rng, 6, 3), random_rows(rng, 6, 3)
        c = confusion(pred, gold)
        for j in range(3):
            x = c.labels[j]
            assert (x.tp, x.fp, x.fn, x.tn) == brute_counts(pred, gold, j)
            assert x.scored + x.missing == 6


def test_missing_as_negative():
    pred = {"a": (None,), "b": (True,)}
    gold = {"a": (True,), "b": (True,)}
    excl = confusion(pred, gold, missing=MissingPolicy.EXCLUDE).labels[0]
    neg = confusion(pred, gold, missing=MissingPolicy.NEGATIVE).labels[0]
    assert (excl.tp, excl.fn, excl.missing) == (1, 0, 1)
    assert (neg.tp, neg.fn, neg.missing) == (1, 1, 1)


def test_f1_examples():
    per, macro, micro = f1_scores(ConfusionCounts(["x"], [LabelCounts(tp=8, fp=1, fn=1)]))
    assert per[0] == pytest.approx(16 / 18) and macro == micro == per[0]
    per, _, _ = f1_scores(ConfusionCounts(["x", "y"], [LabelCounts(), LabelCounts(tp=1)]))
    assert per == [0.0, 1.0]


def test_psa_examples():
    rows = {"a": (True, False), "b": (False, False)}
    per, overall = psa(rows, rows)
    assert per == [1.0, None] and overall == 1.0
    a = {f"d{i}": (i < 9,) for i in range(12)}
    b = {f"d{i}": (i < 8 or i == 9,) for i in range(12)}
    assert psa(a, b)[0][0] == pytest.approx(16 / 18)
    assert psa({"x": (True,), "y": (False,)}, {"x": (False,), "y": (True,)})[0] == [0.0]


def test_random_instances_against_brute_force():
    rng = random.Random(1)
    for _ in range(500):
        n, k = rng.randint(1, 8), rng.randint(1, 4)
        pred, gold = random_rows(rng, n, k), random_rows(rng, n, k)
        per, macro, micro = f1_scores(confusion(pred, gold))
        bper, bmacro, bmicro = brute_f1(pred, gold, k)
        assert all(abs(x - float(y)) <= 1e-12 for x, y in zip(per, bper))
        assert abs(macro - float(bmacro)) <= 1e-12 and abs(micro - float(bmicro)) <= 1e-12
        p_per, p_all = psa(pred, gold)
        q_per, q_all = brute_psa(pred, gold, k)
        for x, y in zip(p_per, q_per):
            assert (x is None) == (y is None) and (x is None or abs(x - float(y)) <= 1e-12)
        assert (p_all is None) == (q_all is None)
        assert psa(gold, pred) == (p_per, p_all)


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=30))
def test_single_label_psa_equals_f1(pairs):
    pred = {f"d{i}": (p,) for i, (p, _) in enumerate(pairs)}
    gold = {f"d{i}": (g,) for i, (_, g) in enumerate(pairs)}
    f1 = f1_scores(confusion(pred, gold))[0][0]
    s = psa(pred, gold)[0][0]
    assert (s if s is not None else 0.0) == f1


@given(st.integers(0, 20), st.integers(0, 20), st.integers(0, 20), st.integers(1, 6))
def test_macro_micro_equal_counts(tp, fp, fn, k):
    counts = ConfusionCounts([str(i) for i in range(k)], [LabelCounts(tp, fp, fn) for _ in range(k)])
    _, macro, micro = f1_scores(counts)
    assert 0 <= macro <= 1 and abs(macro - micro) <= 1e-15


def test_interrun_two_ways():
    r1 = {"a": (True, True), "b": (False, True)}
    r2 = {"a": (True, False), "b": (False, True)}
    r3 = {"a": (True, True), "b": (False, True)}
    out = interrun_agreement([r1, r2, r3])
    assert out["psa_interrun_pooled"] == pytest.approx(2 * 7 / (2 * 7 + 2))
    assert out["psa_interrun_pairwise_mean"] == pytest.approx((0.8 + 1.0 + 0.8) / 3)
    with pytest.raises(InsufficientData):
        interrun_agreement([r1])


def test_prevalence():
    assert label_prevalence({"a": (True, None), "b": (False, None)}) == [0.5, None]


def test_prevalence_agreement_cases():
    assert prevalence_agreement([0.1, 0.2, 0.3, 0.4], [0.5, 0.6, 0.7, 0.9]).statistic == pytest.approx(1.0)
    with pytest.raises(TieDegenerate):
        prevalence_agreement([0.2] * 4, [0.1, 0.2, 0.3, 0.4])
    with pytest.raises(InsufficientData):
        prevalence_agreement([0.1, 0.2, 0.3], [0.4, None, 0.3])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=3, max_size=7), st.randoms())
def test_spearman_exact_matches_enumeration(xs, rnd):
    ys = [rnd.randint(0, 5) for _ in xs]
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    res = spearman(xs, ys)
    assert res.method == "exact-permutation"
    assert res.p_value == float(spearman_enumeration_p(xs, ys))
    assert res.statistic == pytest.approx(stats.spearmanr(xs, ys).statistic, abs=1e-12)
    assert -1 <= res.statistic <= 1


def test_spearman_exact_n8():
    rng = random.Random(3)
    for _ in range(2):
        xs = [rng.random() for _ in range(8)]
        ys = [rng.random() for _ in range(8)]
        assert spearman(xs, ys).p_value == float(spearman_enumeration_p(xs, ys))


@settings(deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=4, max_size=7, unique=True),
       st.lists(st.integers(-100, 100), min_size=7, max_size=7, unique=True))
def test_spearman_monotone_invariance(xs, ys):
    ys = ys[: len(xs)]
    a = spearman(xs, ys)
    b = spearman([x ** 3 + 5 for x in xs], [2 * y - 1 for y in ys])
    assert a.statistic == pytest.approx(b.statistic) and a.p_value == b.p_value


def test_spearman_t_approximation():
    rng = random.Random(4)
    xs = [rng.random() for _ in range(30)]
    ys = [x + rng.random() for x in xs]
    res = spearman(xs, ys)
    ref = stats.spearmanr(xs, ys)
    assert res.method == "t-approximation"
    assert res.statistic == pytest.approx(ref.statistic) and res.p_value == pytest.approx(ref.pvalue)


def test_wilcoxon_degenerate_and_small():
    res = wilcoxon_signed_rank([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    assert res.degenerate and res.p_value == 1.0
    with pytest.raises(InsufficientData):
        wilcoxon_signed_rank([1, 2, 3, 4], [0, 0, 0, 0])


def test_wilcoxon_n6_enumeration():
    x = [0.9, 0.7, 0.65, 0.8, 0.4, 0.55]
    y = [0.5, 0.75, 0.3, 0.1, 0.45, 0.2]
    res = wilcoxon_signed_rank(x, y)
    assert res.method == "exact" and res.n == 6
    assert res.p_value == float(wilcoxon_enumeration_p(x, y))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=5, max_size=10))
def test_wilcoxon_exact_matches_enumeration(pairs):
    x = [a for a, _ in pairs]
    y = [b for _, b in pairs]
    if sum(1 for a, b in pairs if a != b) < 5:
        return
    res = wilcoxon_signed_rank(x, y)
    assert res.p_value == float(wilcoxon_enumeration_p(x, y))
    swapped = wilcoxon_signed_rank(y, x)
    assert swapped.p_value == res.p_value and swapped.statistic == res.statistic


def test_wilcoxon_against_scipy():
    rng = random.Random(6)
    x = [rng.random() for _ in range(15)]
    y = [rng.random() for _ in range(15)]
    assert wilcoxon_signed_rank(x, y).p_value == pytest.approx(stats.wilcoxon(x, y, method="exact").pvalue)
    x = [round(rng.random(), 1) for _ in range(40)]
    y = [round(rng.random(), 1) for _ in range(40)]
    ref = stats.wilcoxon(x, y, method="approx", correction=False)
    res = wilcoxon_signed_rank(x, y)
    assert res.method == "normal-approximation"
    assert res.p_value == pytest.approx(ref.pvalue) and res.statistic == ref.statistic


def test_metrics_report(taxonomy):
    gold = {"a": (True,) * 24, "b": (False,) * 24}
    pred = {"a": (None,) * 24, "b": (False,) * 24}
    rep = metrics_report(pred, gold, taxonomy)
    assert rep["macro_f1"] == 0.0 and rep["labels"][0]["missing"] == 1
    assert rep["parsed_only"]["macro_f1"] == 0.0
    assert {"name", "tp", "fp", "fn", "tn", "f1", "psa"} <= set(rep["labels"][0])
