"""Annotation and distillation flow: plan, annotate, vote, export, correct."""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .backend import BackendError
from .cost import Order, schedule
from .domain import AnnotationRun, Document, LabelVector, Taxonomy, ValidationError
from .prompt import (
    AnswerLexicon,
    LayoutCase,
    ParseError,
    Prompt,
    Strategy,
    build_dichotomic_prompt,
    build_json_prompt,
    default_instruction,
    default_json_template,
    json_decode_tokens,
    parse_dichotomic_answer,
    parse_json_answer_detailed,
)

JSON_ALL = "*"


@dataclass(frozen=True)
class PlanEntry:
    doc_id: str
    target: str  # label name, or JSON_ALL for a structured query
    run: int
    prompt: Prompt


@dataclass
class QueryPlan:
    entries: list[PlanEntry]
    ordering_policy: Order
    strategy: Strategy
    layout: LayoutCase
    n_runs: int

    def __len__(self) -> int:
        return len(self.entries)

    def plan_hash(self) -> str:
        h = hashlib.sha256()
        for e in self.entries:
            h.update(f"{e.run}\x1f{e.doc_id}\x1f{e.target}\x1f{e.prompt.sha256}\n".encode("utf-8"))
        return h.hexdigest()


def plan_queries(
    corpus: Sequence[Document],
    taxonomy: Taxonomy,
    strategy: Strategy,
    layout: LayoutCase = LayoutCase.CASE3,
    ordering_policy: Order = Order.DOC_GROUPED,
    n_runs: int = 3,
    *,
    instruction: Optional[str] = None,
    json_template: Optional[str] = None,
    seed: int = 0,
) -> QueryPlan:
    if n_runs < 1:
        raise ValidationError("n_runs must be >= 1")
    strategy, layout, order = Strategy(strategy), LayoutCase(layout), Order.parse(ordering_policy)
    instruction = instruction or default_instruction()
    json_template = json_template or default_json_template()
    json_prompts: dict[str, Prompt] = {}
    dich_prompts: dict[tuple[str, int], Prompt] = {}
    entries = []
    for run in range(n_runs):
        for d, j in schedule(len(corpus), taxonomy.K, strategy, order, 1, seed + run):
            doc = corpus[d]
            if j is None:
                prompt = json_prompts.get(doc.id)
                if prompt is None:
                    prompt = json_prompts[doc.id] = build_json_prompt(doc, taxonomy, json_template)
                entries.append(PlanEntry(doc.id, JSON_ALL, run, prompt))
            else:
                prompt = dich_prompts.get((doc.id, j))
                if prompt is None:
                    prompt = dich_prompts[(doc.id, j)] = build_dichotomic_prompt(
                        doc, taxonomy.labels[j], layout, instruction
                    )
                entries.append(PlanEntry(doc.id, taxonomy.labels[j].name, run, prompt))
    return QueryPlan(entries, order, strategy, layout, n_runs)


@dataclass(frozen=True)
class ParseFailure:
    doc_id: str
    target: str
    run: int
    error_class: str
    message: str

    def to_dict(self) -> dict:
        return {
            "id": self.doc_id, "target": self.target, "run": self.run,
            "error_class": self.error_class, "message": self.message,
        }


def annotate(
    plan: QueryPlan,
    backend,
    taxonomy: Taxonomy,
    lexicon: AnswerLexicon = AnswerLexicon(),
    max_in_flight: int = 1,
) -> list[AnnotationRun]:
    """Send every plan entry to ``backend`` and assemble one run per run id.

    Backend calls may overlap (up to ``max_in_flight``) but results are
    assembled in plan order. Parse failures become missing cells and are
    listed on the run; backend errors abort.
    """
    decode = 1 if plan.strategy is Strategy.DICHOTOMIC else json_decode_tokens(taxonomy)

    def call(entry: PlanEntry) -> str:
        return backend.complete(entry.prompt, decode, entry.run)

    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            answers = list(pool.map(call, plan.entries))
    else:
        answers = [call(e) for e in plan.entries]

    doc_order = list(dict.fromkeys(e.doc_id for e in plan.entries))
    runs = {
        r: AnnotationRun(r, {d: [None] * taxonomy.K for d in doc_order}) for r in range(plan.n_runs)
    }
    for entry, raw in zip(plan.entries, answers):
        run = runs[entry.run]
        row = run.rows[entry.doc_id]
        try:
            if entry.target == JSON_ALL:
                parsed = parse_json_answer_detailed(raw, taxonomy)
                row[:] = parsed.vector
                if parsed.fenced:
                    _bump(run.counters, "fenced_json")
                if parsed.extra_keys:
                    _bump(run.counters, "extra_keys", len(parsed.extra_keys))
            else:
                row[taxonomy.index(entry.target)] = parse_dichotomic_answer(raw, lexicon)
        except ParseError as exc:
            run.failures.append(ParseFailure(entry.doc_id, entry.target, entry.run, exc.error_class, str(exc)))
            _bump(run.counters, exc.error_class)
    out = []
    for r in range(plan.n_runs):
        run = runs[r]
        run.rows = {d: tuple(v) for d, v in run.rows.items()}
        out.append(run)
    return out


def _bump(counter: dict, key: str, n: int = 1) -> None:
    counter[key] = counter.get(key, 0) + n


class TiePolicy(str, Enum):
    FALSE_ON_TIE = "false_on_tie"
    ABSTAIN_ON_TIE = "abstain_on_tie"


@dataclass
class ConsensusLabels:
    """Majority-vote labels. ``vote_margin`` holds per-cell true-vote counts,
    ``valid_votes`` the number of non-missing votes, ``provenance`` the
    annotator of every human-corrected cell."""

    rows: dict[str, LabelVector]
    n_runs: int
    vote_margin: dict[str, tuple] = field(default_factory=dict)
    valid_votes: dict[str, tuple] = field(default_factory=dict)
    provenance: dict[str, dict] = field(default_factory=dict)


def majority_cell(true_votes: int, valid: int, tie_policy: TiePolicy) -> Optional[bool]:
    if valid == 0:
        return None
    if 2 * true_votes > valid:
        return True
    if 2 * true_votes < valid:
        return False
    return False if tie_policy is TiePolicy.FALSE_ON_TIE else None


def aggregate_majority(
    runs: Sequence[AnnotationRun], tie_policy: TiePolicy = TiePolicy.FALSE_ON_TIE
) -> ConsensusLabels:
    """Per-cell majority over the valid (non-missing) votes."""
    if not runs:
        raise ValidationError("need at least one annotation run")
    tie_policy = TiePolicy(tie_policy)
    ids = list(runs[0].rows)
    for run in runs[1:]:
        if set(run.rows) != set(ids):
            raise ValidationError(f"run {run.run_id} covers a different document set")
    k = len(runs[0].rows[ids[0]]) if ids else 0
    rows, margin, valid = {}, {}, {}
    for doc_id in ids:
        trues, counts, cells = [], [], []
        for j in range(k):
            votes = [run.rows[doc_id][j] for run in runs]
            t = sum(1 for v in votes if v is True)
            n = sum(1 for v in votes if v is not None)
            trues.append(t)
            counts.append(n)
            cells.append(majority_cell(t, n, tie_policy))
        rows[doc_id] = tuple(cells)
        margin[doc_id] = tuple(trues)
        valid[doc_id] = tuple(counts)
    return ConsensusLabels(rows, len(runs), margin, valid)


# -- files --------------------------------------------------------------------


def save_runs(runs: Sequence[AnnotationRun], taxonomy: Taxonomy, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for run in runs:
            for doc_id, vec in run.rows.items():
                row = {"run": run.run_id, "id": doc_id, "labels": taxonomy.as_mapping(vec)}
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_runs(path, taxonomy: Taxonomy) -> list[AnnotationRun]:
    runs: dict[int, AnnotationRun] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                run_id, doc_id, labels = int(obj["run"]), obj["id"], obj["labels"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise ValidationError(f"{path}:{lineno}: malformed run row") from None
            run = runs.setdefault(run_id, AnnotationRun(run_id, {}))
            run.rows[doc_id] = _vector_from(labels, taxonomy, f"{path}:{lineno}")
    return [runs[r] for r in sorted(runs)]


def save_failures(runs: Sequence[AnnotationRun], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for run in runs:
            for f in run.failures:
                fh.write(json.dumps(f.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def _vector_from(labels: Mapping, taxonomy: Taxonomy, where: str) -> LabelVector:
    if not isinstance(labels, dict):
        raise ValidationError(f"{where}: 'labels' must be an object")
    missing = [n for n in taxonomy.names if n not in labels]
    if missing:
        raise ValidationError(f"{where}: labels missing {missing}")
    vec = tuple(labels[n] for n in taxonomy.names)
    if not all(v is None or isinstance(v, bool) for v in vec):
        raise ValidationError(f"{where}: label values must be true, false or null")
    return vec


def export_dataset(consensus: ConsensusLabels, corpus: Sequence[Document], taxonomy: Taxonomy, path) -> None:
    """JSONL rows ``{id, text, labels}`` plus vote bookkeeping for exact reloads."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for doc in corpus:
            if doc.id not in consensus.rows:
                continue
            row = {
                "id": doc.id,
                "text": doc.text,
                "labels": taxonomy.as_mapping(consensus.rows[doc.id]),
                "n_runs": consensus.n_runs,
            }
            if doc.id in consensus.vote_margin:
                row["votes"] = {
                    n: [t, v] for n, t, v in zip(
                        taxonomy.names, consensus.vote_margin[doc.id], consensus.valid_votes[doc.id]
                    )
                }
            if consensus.provenance.get(doc.id):
                row["provenance"] = dict(consensus.provenance[doc.id])
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_dataset(path, taxonomy: Taxonomy) -> tuple[list[Document], ConsensusLabels]:
    docs, rows, margin, valid, prov = [], {}, {}, {}, {}
    n_runs = 0
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise ValidationError(f"{where}: malformed JSON") from None
            doc = Document(obj.get("id", ""), obj.get("text", ""), obj.get("meta") or {})
            if doc.id in rows:
                raise ValidationError(f"{where}: duplicate id {doc.id!r}")
            docs.append(doc)
            rows[doc.id] = _vector_from(obj.get("labels"), taxonomy, where)
            n_runs = obj.get("n_runs", n_runs)
            if "votes" in obj:
                margin[doc.id] = tuple(obj["votes"][n][0] for n in taxonomy.names)
                valid[doc.id] = tuple(obj["votes"][n][1] for n in taxonomy.names)
            if obj.get("provenance"):
                prov[doc.id] = dict(obj["provenance"])
    return docs, ConsensusLabels(rows, n_runs, margin, valid, prov)


class CorrectionError(ValidationError):
    pass


_TRUE = {"true", "1", "yes", "tak", "t", "y"}
_FALSE = {"false", "0", "no", "nie", "f", "n"}
_NULL = {"", "null", "none", "na"}


def _parse_value(raw: str) -> Optional[bool]:
    v = raw.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    if v in _NULL:
        return None
    raise CorrectionError(f"cannot read {raw!r} as a label value")


def read_corrections(path) -> list[dict]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        need = {"id", "label", "value"}
        if not need <= set(reader.fieldnames):
            raise CorrectionError(f"{path}: header must contain id,label,value[,annotator]")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                value = _parse_value(row["value"])
            except CorrectionError as exc:
                raise CorrectionError(f"{path}:{lineno}: {exc}") from None
            out.append({
                "id": row["id"].strip(), "label": row["label"].strip(), "value": value,
                "annotator": (row.get("annotator") or "").strip() or "human", "line": lineno,
            })
        return out


def import_corrections(consensus: ConsensusLabels, corrections_file, taxonomy: Taxonomy) -> ConsensusLabels:
    """Overwrite consensus cells with human corrections from a CSV
    (``id,label,value,annotator``); corrected cells keep their annotator as provenance."""
    corrections = read_corrections(corrections_file)
    offenders = [
        f"line {c['line']}: id {c['id']!r}" for c in corrections if c["id"] not in consensus.rows
    ] + [
        f"line {c['line']}: label {c['label']!r}" for c in corrections if c["label"] not in taxonomy
    ]
    if offenders:
        raise CorrectionError("unknown references in corrections: " + "; ".join(offenders))
    rows = {d: list(v) for d, v in consensus.rows.items()}
    prov = {d: dict(p) for d, p in consensus.provenance.items()}
    for c in corrections:
        rows[c["id"]][taxonomy.index(c["label"])] = c["value"]
        prov.setdefault(c["id"], {})[c["label"]] = c["annotator"]
    return ConsensusLabels(
        {d: tuple(v) for d, v in rows.items()},
        consensus.n_runs,
        dict(consensus.vote_margin),
        dict(consensus.valid_votes),
        prov,
    )


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def run_manifest(plan: QueryPlan, backend, lexicon: AnswerLexicon, config: Mapping, seeds: Mapping) -> dict:
    return {
        "plan_hash": plan.plan_hash(),
        "plan_entries": len(plan),
        "strategy": plan.strategy.value,
        "layout": int(plan.layout),
        "ordering_policy": plan.ordering_policy.value,
        "n_runs": plan.n_runs,
        "backend": getattr(backend, "kind", type(backend).__name__),
        "lexicon": lexicon.to_dict(),
        "seeds": dict(seeds),
        "config": dict(config),
    }
