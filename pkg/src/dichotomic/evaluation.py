"""In-distribution and leave-one-label-out evaluation over any backend."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .backend import BackendError
from .domain import Document, Taxonomy, ValidationError
from .metrics import (
    MissingPolicy,
    Rows,
    confusion,
    f1_from,
    metrics_report,
)
from .prompt import (
    AnswerLexicon,
    LayoutCase,
    ParseError,
    Strategy,
    build_dichotomic_prompt,
    build_json_prompt,
    default_json_template,
    default_paraphrases,
    json_decode_tokens,
    parse_dichotomic_answer,
    parse_json_answer,
)

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3:
            raise ValidationError("ratios must be (train, validation, test)")
        if any(not 0 < r < 1 for r in self.ratios):
            raise ValidationError("every split fraction must lie in (0, 1)")
        if not math.isclose(sum(self.ratios), 1.0, abs_tol=1e-9):
            raise ValidationError(f"split fractions sum to {sum(self.ratios)}, expected 1")


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of ``n * ratios``; every split gets at least one item."""
    raw = [n * r for r in ratios]
    sizes = [math.floor(x) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    for i in range(len(sizes)):
        if sizes[i] == 0:
            donor = max(range(len(sizes)), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[i] = 1
    return sizes


@dataclass
class Split:
    train: list[Document]
    validation: list[Document]
    test: list[Document]

    def manifest(self) -> dict[str, str]:
        out = {}
        for name in SPLITS:
            for doc in getattr(self, name):
                out[doc.id] = name
        return dict(sorted(out.items()))


def split_dataset(
    corpus: Sequence[Document], consensus_rows: Rows, spec: SplitSpec = SplitSpec()
) -> Split:
    """Stratified train/validation/test split with exact split sizes.

    Iterative stratification: labels are handled rarest first; each document
    carrying the current label goes to the split that still wants the most
    positives of that label (ties: most free slots, then split order).
    Documents without positives fill the remaining slots.
    """
    n = len(corpus)
    if n < 3:
        raise ValidationError(f"need at least 3 documents to split, got {n}")
    missing = [d.id for d in corpus if d.id not in consensus_rows]
    if missing:
        raise ValidationError(f"consensus lacks {len(missing)} corpus ids, e.g. {missing[:3]}")
    docs = list(corpus)
    random.Random(spec.seed).shuffle(docs)
    sizes = split_sizes(n, spec.ratios)
    free = list(sizes)
    k = len(consensus_rows[docs[0].id])
    positives = {d.id: {j for j, v in enumerate(consensus_rows[d.id]) if v} for d in docs}
    label_total = [sum(1 for d in docs if j in positives[d.id]) for j in range(k)]
    want = [[spec.ratios[s] * label_total[j] for j in range(k)] for s in range(3)]
    assigned: dict[str, int] = {}
    remaining = [d for d in docs]

    while True:
        counts = [0] * k
        for d in remaining:
            for j in positives[d.id]:
                counts[j] += 1
        live = [j for j in range(k) if counts[j] > 0]
        if not live:
            break
        label = min(live, key=lambda j: (counts[j], j))
        keep = []
        for d in remaining:
            if label not in positives[d.id]:
                keep.append(d)
                continue
            open_splits = [s for s in range(3) if free[s] > 0]
            s = max(open_splits, key=lambda s: (want[s][label], free[s], -s))
            assigned[d.id] = s
            free[s] -= 1
            for j in positives[d.id]:
                want[s][j] -= 1
        remaining = keep
    for d in remaining:
        s = max((s for s in range(3) if free[s] > 0), key=lambda s: (free[s] / sizes[s], -s))
        assigned[d.id] = s
        free[s] -= 1

    parts: list[list[Document]] = [[], [], []]
    for d in corpus:
        parts[assigned[d.id]].append(d)
    return Split(*parts)


def write_manifest(split: Split, path) -> None:
    Path(path).write_text(json.dumps(split.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- ID -----------------------------------------------------------------------


def eval_id(
    pred: Rows,
    gold: Rows,
    taxonomy: Taxonomy,
    ids: Optional[Sequence[str]] = None,
    json_parse_failures: int = 0,
    missing: MissingPolicy = MissingPolicy.NEGATIVE,
) -> dict:
    """Metrics report for all labels, restricted to ``ids`` when given."""
    if ids is not None:
        absent = [i for i in ids if i not in pred or i not in gold]
        if absent:
            raise ValidationError(f"{len(absent)} evaluation ids lack predictions or gold, e.g. {absent[:3]}")
        pred = {i: pred[i] for i in ids}
        gold = {i: gold[i] for i in ids}
    return metrics_report(
        pred, gold, taxonomy, missing, extra={"regime": "id", "json_parse_failures": json_parse_failures}
    )


# -- OOD leave-one-label-out ----------------------------------------------------


class OodRegime(str, Enum):
    ZERO_SHOT = "zero_shot"
    FINETUNED_EXTERNAL = "finetuned_external"


@dataclass(frozen=True)
class OodSpec:
    held_out_label: str
    regime: OodRegime = OodRegime.ZERO_SHOT

    def check(self, taxonomy: Taxonomy) -> None:
        if self.held_out_label not in taxonomy:
            raise ValidationError(f"held-out label {self.held_out_label!r} not in taxonomy")


@dataclass
class OodCell:
    prediction: Optional[bool]
    error: Optional[str] = None


def _ood_table(
    taxonomy: Taxonomy, gold: Rows, cells: Mapping[str, Mapping[str, OodCell]],
    missing: MissingPolicy, regime: OodRegime, strategy: Optional[str],
) -> dict:
    rows, scores = [], []
    pooled = [0, 0, 0]
    for j, name in enumerate(taxonomy.names):
        OodSpec(name, regime).check(taxonomy)
        by_doc = cells.get(name, {})
        pred = {d: (by_doc[d].prediction if d in by_doc else None,) for d in gold}
        g = {d: (gold[d][j],) for d in gold}
        c = confusion(pred, g, [name], missing).labels[0]
        errors: dict[str, int] = {}
        for cell in by_doc.values():
            if cell.error:
                errors[cell.error] = errors.get(cell.error, 0) + 1
        f1 = f1_from(c.tp, c.fp, c.fn)
        scores.append(f1)
        pooled[0] += c.tp
        pooled[1] += c.fp
        pooled[2] += c.fn
        rows.append({
            "held_out_label": name, "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
            "missing": c.missing, "f1": round(f1, 6), "errors": dict(sorted(errors.items())),
        })
    macro = math.fsum(scores) / len(scores)
    return {
        "regime": regime.value,
        "strategy": strategy,
        "missing_policy": missing.value,
        "rows": rows,
        "macro_f1": round(macro, 6),
        "micro_f1": round(f1_from(*pooled), 6),
    }


def eval_ood_loo(
    corpus: Sequence[Document],
    gold: Rows,
    taxonomy: Taxonomy,
    backend,
    strategy: Strategy,
    *,
    paraphrases: Optional[Sequence[str]] = None,
    json_template: Optional[str] = None,
    lexicon: AnswerLexicon = AnswerLexicon(),
    layout: LayoutCase = LayoutCase.CASE3,
    run: int = 0,
    missing: MissingPolicy = MissingPolicy.NEGATIVE,
) -> dict:
    """Zero-shot leave-one-label-out table: one row per held-out label.

    Dichotomic queries for label i use paraphrase ``i mod len(paraphrases)``
    as instruction. A JSON answer covers every label, so each document is
    queried once and the answer is scored per held-out label. Backend and
    parse errors leave the cell missing and are counted on the row.
    """
    strategy = Strategy(strategy)
    paraphrases = list(paraphrases or default_paraphrases())
    if not paraphrases:
        raise ValidationError("need at least one paraphrased instruction")
    json_template = json_template or default_json_template()
    cells: dict[str, dict[str, OodCell]] = {name: {} for name in taxonomy.names}

    if strategy is Strategy.JSON:
        decode = json_decode_tokens(taxonomy)
        for doc in corpus:
            try:
                raw = backend.complete(build_json_prompt(doc, taxonomy, json_template), decode, run)
                vec, err = parse_json_answer(raw, taxonomy), None
            except ParseError as exc:
                vec, err = (None,) * taxonomy.K, exc.error_class
            except BackendError as exc:
                vec, err = (None,) * taxonomy.K, type(exc).__name__
            for name, v in zip(taxonomy.names, vec):
                cells[name][doc.id] = OodCell(v, err)
    else:
        for j, spec in enumerate(taxonomy.labels):
            instruction = paraphrases[j % len(paraphrases)]
            for doc in corpus:
                try:
                    raw = backend.complete(build_dichotomic_prompt(doc, spec, layout, instruction), 1, run)
                    cells[spec.name][doc.id] = OodCell(parse_dichotomic_answer(raw, lexicon))
                except ParseError as exc:
                    cells[spec.name][doc.id] = OodCell(None, exc.error_class)
                except BackendError as exc:
                    cells[spec.name][doc.id] = OodCell(None, type(exc).__name__)
    gold = {d.id: gold[d.id] for d in corpus}
    return _ood_table(taxonomy, gold, cells, MissingPolicy(missing), OodRegime.ZERO_SHOT, strategy.value)


def load_external_predictions(path, taxonomy: Taxonomy) -> dict[str, dict[str, OodCell]]:
    """JSONL rows ``{held_out_label, id, prediction}`` from an externally trained model."""
    cells: dict[str, dict[str, OodCell]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                label, doc_id, value = row["held_out_label"], row["id"], row["prediction"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise ValidationError(f"{path}:{lineno}: malformed prediction row") from None
            if label not in taxonomy:
                raise ValidationError(f"{path}:{lineno}: unknown label {label!r}")
            if value is not None and not isinstance(value, bool):
                raise ValidationError(f"{path}:{lineno}: prediction must be true, false or null")
            cells.setdefault(label, {})[doc_id] = OodCell(value)
    return cells


def eval_ood_external(
    predictions_path, gold: Rows, taxonomy: Taxonomy, missing: MissingPolicy = MissingPolicy.NEGATIVE
) -> dict:
    cells = load_external_predictions(predictions_path, taxonomy)
    return _ood_table(taxonomy, gold, cells, MissingPolicy(missing), OodRegime.FINETUNED_EXTERNAL, None)


def f1_vector(report: dict) -> list[float]:
    """Per-label F1 column of an ID or OOD report."""
    key = "labels" if "labels" in report else "rows"
    return [r["f1"] for r in report[key]]

