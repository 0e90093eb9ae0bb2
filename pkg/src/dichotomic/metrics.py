"""F1, Positive Specific Agreement and the two rank statistics used in reports.

Rows are ``{doc id: label vector}`` mappings; ``None`` cells are abstentions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats as _stats

from .domain import Taxonomy, ValidationError

Rows = Mapping[str, Sequence[Optional[bool]]]

SPEARMAN_EXACT_MAX_N = 10
WILCOXON_EXACT_MAX_N = 20
WILCOXON_MIN_N = 5


class MetricsError(ValidationError):
    pass


class AlignmentError(MetricsError):
    pass


class InsufficientData(MetricsError):
    pass


class TieDegenerate(MetricsError):
    pass


class MissingPolicy(str, Enum):
    EXCLUDE = "exclude"  # abstained predictions leave the cell unscored
    NEGATIVE = "negative"  # abstained predictions count as a negative answer


@dataclass
class LabelCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    missing: int = 0  # cells with an abstained prediction or gold value

    @property
    def scored(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class ConfusionCounts:
    names: list[str]
    labels: list[LabelCounts]

    def total(self) -> LabelCounts:
        out = LabelCounts()
        for c in self.labels:
            out.tp += c.tp
            out.fp += c.fp
            out.fn += c.fn
            out.tn += c.tn
            out.missing += c.missing
        return out


def _check_aligned(a: Rows, b: Rows) -> int:
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b))[:5]
        only_b = sorted(set(b) - set(a))[:5]
        raise AlignmentError(f"id sets differ (only left: {only_a}, only right: {only_b})")
    widths = {len(v) for v in a.values()} | {len(v) for v in b.values()}
    if len(widths) > 1:
        raise AlignmentError(f"label vectors differ in length: {sorted(widths)}")
    return widths.pop() if widths else 0


def confusion(
    pred: Rows,
    gold: Rows,
    names: Optional[Sequence[str]] = None,
    missing: MissingPolicy = MissingPolicy.EXCLUDE,
) -> ConfusionCounts:
    """Per-label confusion counts over aligned rows.

    A missing gold cell is never scored. A missing prediction is skipped
    under ``exclude`` and read as ``False`` under ``negative``; either way it
    is tallied in ``missing``.
    """
    k = _check_aligned(pred, gold)
    missing = MissingPolicy(missing)
    names = list(names) if names is not None else [f"label_{j}" for j in range(k)]
    if len(names) != k:
        raise AlignmentError(f"{len(names)} names for {k}-wide vectors")
    counts = [LabelCounts() for _ in range(k)]
    for doc_id in sorted(gold):
        p_row, g_row = pred[doc_id], gold[doc_id]
        for j in range(k):
            p, g = p_row[j], g_row[j]
            c = counts[j]
            if g is None:
                c.missing += 1
                continue
            if p is None:
                c.missing += 1
                if missing is MissingPolicy.EXCLUDE:
                    continue
                p = False
            if p and g:
                c.tp += 1
            elif p:
                c.fp += 1
            elif g:
                c.fn += 1
            else:
                c.tn += 1
    return ConfusionCounts(names, counts)


def f1_from(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_scores(counts: ConfusionCounts) -> tuple[list[float], float, float]:
    """Per-label F1, macro F1 (unweighted mean) and micro F1 (pooled counts)."""
    per = [f1_from(c.tp, c.fp, c.fn) for c in counts.labels]
    macro = math.fsum(per) / len(per) if per else 0.0
    t = counts.total()
    return per, macro, f1_from(t.tp, t.fp, t.fn)


# -- agreement ----------------------------------------------------------------


@dataclass
class AgreementCounts:
    a: int = 0  # both positive
    b: int = 0  # positive in the first set only
    c: int = 0  # positive in the second set only
    d: int = 0  # both negative


def psa_from(a: int, b: int, c: int) -> Optional[float]:
    denom = 2 * a + b + c
    return 2 * a / denom if denom else None


def agreement_counts(x: Rows, y: Rows) -> list[AgreementCounts]:
    k = _check_aligned(x, y)
    out = [AgreementCounts() for _ in range(k)]
    for doc_id in x:
        for j, (p, q) in enumerate(zip(x[doc_id], y[doc_id])):
            if p is None or q is None:
                continue
            cell = out[j]
            if p and q:
                cell.a += 1
            elif p:
                cell.b += 1
            elif q:
                cell.c += 1
            else:
                cell.d += 1
    return out


def psa(x: Rows, y: Rows) -> tuple[list[Optional[float]], Optional[float]]:
    """Per-label and pooled Positive Specific Agreement, 2a / (2a + b + c).

    Cells where either side abstains are skipped; ``None`` marks an undefined
    score (no positives on either side).
    """
    cells = agreement_counts(x, y)
    per = [psa_from(c.a, c.b, c.c) for c in cells]
    overall = psa_from(sum(c.a for c in cells), sum(c.b for c in cells), sum(c.c for c in cells))
    return per, overall


def interrun_agreement(runs: Sequence[Rows]) -> dict:
    """PSA over every pair of runs, summarized two ways.

    ``psa_interrun_pairwise_mean`` averages the pooled PSA of each pair;
    ``psa_interrun_pooled`` pools a/b/c counts over all pairs and labels.
    ``per_label_pairwise_mean`` averages each label's PSA over the pairs where
    it is defined.
    """
    if len(runs) < 2:
        raise InsufficientData("inter-run agreement needs at least two runs")
    k = _check_aligned(runs[0], runs[0])
    pair_scores, pooled = [], AgreementCounts()
    per_label: list[list[float]] = [[] for _ in range(k)]
    pairs = []
    for i, j in itertools.combinations(range(len(runs)), 2):
        cells = agreement_counts(runs[i], runs[j])
        a, b, c = (sum(getattr(x, f) for x in cells) for f in "abc")
        pooled.a += a
        pooled.b += b
        pooled.c += c
        score = psa_from(a, b, c)
        pairs.append({"runs": [i, j], "psa": score})
        if score is not None:
            pair_scores.append(score)
        for lab, cell in enumerate(cells):
            s = psa_from(cell.a, cell.b, cell.c)
            if s is not None:
                per_label[lab].append(s)
    return {
        "pairs": pairs,
        "psa_interrun_pairwise_mean": math.fsum(pair_scores) / len(pair_scores) if pair_scores else None,
        "psa_interrun_pooled": psa_from(pooled.a, pooled.b, pooled.c),
        "per_label_pairwise_mean": [math.fsum(v) / len(v) if v else None for v in per_label],
    }


def label_prevalence(*row_sets: Rows) -> list[Optional[float]]:
    """Positive rate per label over all non-missing cells of the given row sets."""
    k = None
    pos: list[int] = []
    tot: list[int] = []
    for rows in row_sets:
        for vec in rows.values():
            if k is None:
                k = len(vec)
                pos, tot = [0] * k, [0] * k
            elif len(vec) != k:
                raise AlignmentError("label vectors differ in length")
            for j, v in enumerate(vec):
                if v is not None:
                    tot[j] += 1
                    pos[j] += bool(v)
    return [p / t if t else None for p, t in zip(pos, tot)]


# -- Spearman -----------------------------------------------------------------


@dataclass
class RankTest:
    statistic: float
    p_value: float
    n: int
    method: str
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _doubled_ranks(values: Sequence[float]) -> list[int]:
    """Twice the average (mid) rank of each value, ranks starting at 1; always integral."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    out = [0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for idx in order[i:j + 1]:
            out[idx] = i + j + 2  # (i+1) + (j+1)
        i = j + 1
    return out


def ranks(values: Sequence[float]) -> list[float]:
    return [r / 2 for r in _doubled_ranks(values)]


@lru_cache(maxsize=2)
def _permutations(n: int) -> np.ndarray:
    """All n! permutations of range(n) as an int8 array, one per row."""
    perms = np.zeros((1, 0), dtype=np.int8)
    for m in range(n):
        # insert element m at every position of each permutation of range(m)
        rows = []
        for pos in range(m + 1):
            col = np.full((perms.shape[0], 1), m, dtype=np.int8)
            rows.append(np.hstack([perms[:, :pos], col, perms[:, pos:]]))
        perms = np.vstack(rows)
    return perms


def spearman(x: Sequence[float], y: Sequence[float]) -> RankTest:
    """Spearman rho with a two-sided p-value.

    For n <= 10 the p-value is exact: the share of all n! pairings whose
    rank cross-product lies at least as far from its null mean as the observed
    one. Larger n uses the t approximation with n - 2 degrees of freedom.
    """
    n = len(x)
    if n != len(y):
        raise AlignmentError("spearman needs paired samples of equal length")
    if n < 3:
        raise InsufficientData(f"spearman needs at least 3 points, got {n}")
    if len(set(x)) == 1 or len(set(y)) == 1:
        raise TieDegenerate("spearman undefined: one variable is constant")
    x2, y2 = _doubled_ranks(x), _doubled_ranks(y)
    mx, my = sum(x2) / n, sum(y2) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x2, y2))
    sxx = math.fsum((a - mx) ** 2 for a in x2)
    syy = math.fsum((b - my) ** 2 for b in y2)
    rho = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    if n <= SPEARMAN_EXACT_MAX_N:
        return RankTest(rho, _spearman_exact_p(x2, y2), n, "exact-permutation")
    if abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1 - rho * rho))
        p = float(2 * _stats.t.sf(abs(t), n - 2))
    return RankTest(rho, min(1.0, p), n, "t-approximation")


def _spearman_exact_p(x2: Sequence[int], y2: Sequence[int]) -> float:
    # Doubled ranks each sum to n(n+1), so the null mean of sum(x2*y2[perm])
    # is n(n+1)^2; comparing 'distance from the mean' in integers keeps the
    # count exact.
    n = len(x2)
    center = n * (n + 1) ** 2
    obs = abs(sum(a * b for a, b in zip(x2, y2)) - center)
    perms = _permutations(n)
    xs = np.asarray(x2, dtype=np.int64)
    ys = np.asarray(y2, dtype=np.int64)
    count = 0
    for start in range(0, perms.shape[0], 1 << 18):
        s = ys[perms[start:start + (1 << 18)]] @ xs
        count += int(np.count_nonzero(np.abs(s - center) >= obs))
    return count / math.factorial(n)


def prevalence_agreement(prevalence: Sequence[Optional[float]], per_label_psa: Sequence[Optional[float]]) -> RankTest:
    """Spearman correlation between label positive rate and per-label PSA.

    Labels whose PSA or prevalence is undefined are dropped first.
    """
    if len(prevalence) != len(per_label_psa):
        raise AlignmentError("prevalence and PSA lists differ in length")
    pairs = [(p, s) for p, s in zip(prevalence, per_label_psa) if p is not None and s is not None]
    if len(pairs) < 3:
        raise InsufficientData(f"need at least 3 labels with defined PSA, got {len(pairs)}")
    return spearman([p for p, _ in pairs], [s for _, s in pairs])


# -- Wilcoxon -----------------------------------------------------------------


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> RankTest:
    """Two-sided Wilcoxon signed-rank test on paired scores.

    Zero differences are dropped; ties among |d| get mid-ranks. The statistic
    is min(W+, W-). With n <= 20 non-zero differences the p-value is exact
    (distribution of W+ over all 2^n sign assignments); above that a normal
    approximation with tie-corrected variance is used.
    """
    if len(x) != len(y):
        raise AlignmentError("wilcoxon needs paired samples of equal length")
    d = [a - b for a, b in zip(x, y)]
    nz = [v for v in d if v != 0]
    n = len(nz)
    if n == 0:
        return RankTest(0.0, 1.0, 0, "degenerate-all-zero", degenerate=True)
    if n < WILCOXON_MIN_N:
        raise InsufficientData(f"wilcoxon needs at least {WILCOXON_MIN_N} non-zero differences, got {n}")
    r2 = _doubled_ranks([abs(v) for v in nz])
    t2 = sum(r2)  # = n(n+1)
    w2_plus = sum(r for r, v in zip(r2, nz) if v > 0)
    stat = min(w2_plus, t2 - w2_plus) / 2
    if n <= WILCOXON_EXACT_MAX_N:
        return RankTest(stat, _wilcoxon_exact_p(r2, w2_plus), n, "exact")
    mean = n * (n + 1) / 4
    ties: dict[int, int] = {}
    for r in r2:
        ties[r] = ties.get(r, 0) + 1
    var = n * (n + 1) * (2 * n + 1) / 24 - sum(t ** 3 - t for t in ties.values()) / 48
    if var <= 0:
        return RankTest(stat, 1.0, n, "normal-approximation", degenerate=True)
    z = (w2_plus / 2 - mean) / math.sqrt(var)
    return RankTest(stat, min(1.0, math.erfc(abs(z) / math.sqrt(2))), n, "normal-approximation")


def _wilcoxon_exact_p(r2: Sequence[int], w2_plus: int) -> float:
    total = sum(r2)
    dist = [0] * (total + 1)  # dist[w] = sign patterns with doubled W+ == w
    dist[0] = 1
    for r in r2:
        for w in range(total, r - 1, -1):
            dist[w] += dist[w - r]
    obs = abs(2 * w2_plus - total)
    count = sum(c for w, c in enumerate(dist) if c and abs(2 * w - total) >= obs)
    return min(1.0, count / 2 ** len(r2))


# -- reports ------------------------------------------------------------------


def _round(x: Optional[float]) -> Optional[float]:
    return None if x is None else round(x, 6)


def metrics_report(
    pred: Rows,
    gold: Rows,
    taxonomy: Taxonomy,
    missing: MissingPolicy = MissingPolicy.NEGATIVE,
    extra: Optional[dict] = None,
) -> dict:
    """Per-label table plus macro/micro F1 and PSA(pred, gold).

    Abstained predictions are scored under ``missing``; a second
    ``parsed_only`` block scores only the cells that were predicted.
    """
    missing = MissingPolicy(missing)
    counts = confusion(pred, gold, taxonomy.names, missing)
    per, macro, micro = f1_scores(counts)
    psa_per, psa_all = psa(pred, gold)
    rows = []
    for name, c, f, s in zip(taxonomy.names, counts.labels, per, psa_per):
        rows.append({
            "name": name, "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
            "missing": c.missing, "f1": _round(f), "psa": _round(s),
        })
    parsed = confusion(pred, gold, taxonomy.names, MissingPolicy.EXCLUDE)
    p_per, p_macro, p_micro = f1_scores(parsed)
    report = {
        "n_docs": len(gold),
        "missing_policy": missing.value,
        "labels": rows,
        "macro_f1": _round(macro),
        "micro_f1": _round(micro),
        "psa_overall": _round(psa_all),
        "parsed_only": {
            "macro_f1": _round(p_macro),
            "micro_f1": _round(p_micro),
            "per_label_f1": [_round(v) for v in p_per],
        },
        "methods": {
            "f1": "2tp/(2tp+fp+fn), 0 when the denominator is 0",
            "psa": "2a/(2a+b+c), null when undefined",
        },
    }
    if extra:
        report.update(extra)
    return report
