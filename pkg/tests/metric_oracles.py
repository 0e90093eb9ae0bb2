"""Exhaustive reference computations for the metric tests (exact arithmetic)."""

import itertools
from fractions import Fraction


def mid_ranks(values):
    out = []
    for v in values:
        below = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        out.append(Fraction(2 * below + equal + 1, 2))
    return out


def wilcoxon_enumeration_p(x, y):
    d = [a - b for a, b in zip(x, y) if a != b]
    r = mid_ranks([abs(v) for v in d])
    total = sum(r)
    w_obs = sum(rk for rk, v in zip(r, d) if v > 0)
    dev = abs(w_obs - total / 2)
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        w = sum(rk for rk, s in zip(r, signs) if s)
        if abs(w - total / 2) >= dev:
            hits += 1
    return min(Fraction(1), Fraction(hits, 2 ** len(d)))


def spearman_enumeration_p(x, y):
    rx, ry = mid_ranks(x), mid_ranks(y)
    n = len(x)
    mx, my = sum(rx) / n, sum(ry) / n
    cx = [a - mx for a in rx]
    cy = [b - my for b in ry]
    obs = abs(sum(a * b for a, b in zip(cx, cy)))
    hits = total = 0
    for perm in itertools.permutations(cy):
        total += 1
        if abs(sum(a * b for a, b in zip(cx, perm))) >= obs:
            hits += 1
    return Fraction(hits, total)


def brute_counts(pred, gold, j):
    tp = fp = fn = tn = 0
    for doc in gold:
        p, g = pred[doc][j], gold[doc][j]
        if p is None or g is None:
            continue
        tp += p and g
        fp += p and not g
        fn += (not p) and g
        tn += (not p) and (not g)
    return tp, fp, fn, tn


def brute_f1(pred, gold, k):
    per = []
    pooled = [0, 0, 0]
    for j in range(k):
        tp, fp, fn, _ = brute_counts(pred, gold, j)
        per.append(Fraction(2 * tp, 2 * tp + fp + fn) if 2 * tp + fp + fn else Fraction(0))
        pooled[0] += tp
        pooled[1] += fp
        pooled[2] += fn
    tp, fp, fn = pooled
    micro = Fraction(2 * tp, 2 * tp + fp + fn) if 2 * tp + fp + fn else Fraction(0)
    return per, sum(per) / k, micro


def brute_psa(a, b, k):
    per = []
    tot = [0, 0, 0]
    for j in range(k):
        both = only_a = only_b = 0
        for doc in a:
            x, y = a[doc][j], b[doc][j]
            if x is None or y is None:
                continue
            both += bool(x and y)
            only_a += bool(x and not y)
            only_b += bool(y and not x)
        den = 2 * both + only_a + only_b
        per.append(Fraction(2 * both, den) if den else None)
        tot[0] += both
        tot[1] += only_a
        tot[2] += only_b
    den = 2 * tot[0] + tot[1] + tot[2]
    return per, (Fraction(2 * tot[0], den) if den else None)
