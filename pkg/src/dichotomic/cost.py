"""Prefill/decode cost model and the simulated workload benchmarks.

Request time is linear in tokens::

    est_time = alpha * uncached_prefill + beta * decode + gamma

A quadratic attention term is deliberately left out; only orderings and
trend directions are meaningful, never absolute values.
"""

from __future__ import annotations

import csv
import random
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .cache import CacheConfig, CacheStats, ChainHasher, PrefixCache
from .domain import Document, Taxonomy, ValidationError, load_taxonomy
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
    parse_json_answer,
)
from .tokenizer import synth_text, tokenize

MODEL_NOTE = (
    "linear token cost model (no quadratic attention term); eviction is LRU over "
    "leaf blocks, one concrete hypothesis for cache-capacity effects"
)


class Order(str, Enum):
    DOC_GROUPED = "doc_grouped"
    LABEL_GROUPED = "label_grouped"
    INTERLEAVED = "interleaved"

    @classmethod
    def parse(cls, value) -> "Order":
        aliases = {"doc": cls.DOC_GROUPED, "label": cls.LABEL_GROUPED}
        if isinstance(value, str) and value in aliases:
            return aliases[value]
        return cls(value)


@dataclass(frozen=True)
class CostParams:
    alpha: float = 1.0  # per uncached prefill token
    beta: float = 10.0  # per decoded token
    gamma: float = 0.0  # per request

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValidationError("cost parameters must be >= 0")


@dataclass(frozen=True)
class CostBreakdown:
    prefill_uncached_tokens: int
    prefill_cached_tokens: int
    decode_tokens: int
    est_time: float
    requests: int = 1

    @staticmethod
    def time_of(uncached: int, decode: int, requests: int, params: CostParams) -> float:
        return params.alpha * uncached + params.beta * decode + params.gamma * requests

    def recompute(self, params: CostParams) -> float:
        return self.time_of(self.prefill_uncached_tokens, self.decode_tokens, self.requests, params)

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(
            self.prefill_uncached_tokens + other.prefill_uncached_tokens,
            self.prefill_cached_tokens + other.prefill_cached_tokens,
            self.decode_tokens + other.decode_tokens,
            self.est_time + other.est_time,
            self.requests + other.requests,
        )


ZERO = CostBreakdown(0, 0, 0, 0.0, 0)


class ContractViolation(ValueError):
    pass


def estimate_request(
    prompt: Prompt, cache_hit_tokens: int, decode_tokens: int, params: CostParams
) -> CostBreakdown:
    total = len(prompt.tokens)
    if not 0 <= cache_hit_tokens <= total:
        raise ContractViolation(f"cache hit of {cache_hit_tokens} tokens on a {total}-token prompt")
    uncached = total - cache_hit_tokens
    return CostBreakdown(
        uncached,
        cache_hit_tokens,
        decode_tokens,
        CostBreakdown.time_of(uncached, decode_tokens, 1, params),
    )


@dataclass
class RequestRecord:
    doc_id: str
    target: Optional[str]
    cost: CostBreakdown
    wall_time: Optional[float] = None
    error: Optional[str] = None


@dataclass
class WorkloadReport:
    strategy: Strategy
    layout: LayoutCase
    order: Order
    text_len: int
    batch_size: int
    capacity_blocks: Optional[int]
    block_size: int
    totals: CostBreakdown
    cache_stats: CacheStats
    json_parse_failures: int = 0
    failure_counts: dict = field(default_factory=dict)
    requests: list = field(default_factory=list)
    wall_time: Optional[float] = None

    @property
    def hit_rate(self) -> float:
        t = self.totals
        total = t.prefill_cached_tokens + t.prefill_uncached_tokens
        return t.prefill_cached_tokens / total if total else 0.0

    def csv_row(self) -> dict:
        t = self.totals
        row = {
            "strategy": self.strategy.value,
            "layout": int(self.layout),
            "text_len": self.text_len,
            "batch": self.batch_size,
            "capacity": "inf" if self.capacity_blocks is None else self.capacity_blocks,
            "prefill_uncached": t.prefill_uncached_tokens,
            "prefill_cached": t.prefill_cached_tokens,
            "decode": t.decode_tokens,
            "est_time": _fmt(t.est_time),
            "hit_rate": f"{self.hit_rate:.6f}",
            "json_failures": self.json_parse_failures,
        }
        if self.wall_time is not None:
            row["wall_time_measured"] = f"{self.wall_time:.6f}"
        return row


CSV_COLUMNS = [
    "strategy", "layout", "text_len", "batch", "capacity", "prefill_uncached",
    "prefill_cached", "decode", "est_time", "hit_rate", "json_failures",
]


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:.6f}"


def schedule(
    n_docs: int, k: int, strategy: Strategy, order: Order = Order.DOC_GROUPED,
    batch_size: int = 1, seed: int = 0,
) -> list[tuple[int, Optional[int]]]:
    """Request order as ``(doc index, label index or None for JSON)``.

    doc_grouped: documents are taken ``batch_size`` at a time and the batch's
    queries are issued label by label across its documents (batch 1 keeps
    every document's K queries contiguous). label_grouped: label-major over the
    whole corpus. interleaved: a seeded shuffle of all requests.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    if strategy is Strategy.JSON:
        out = [(d, None) for d in range(n_docs)]
        if order is Order.INTERLEAVED:
            random.Random(seed).shuffle(out)
        return out
    if order is Order.DOC_GROUPED:
        out = []
        for start in range(0, n_docs, batch_size):
            batch = range(start, min(start + batch_size, n_docs))
            out.extend((d, j) for j in range(k) for d in batch)
        return out
    if order is Order.LABEL_GROUPED:
        return [(d, j) for j in range(k) for d in range(n_docs)]
    out = [(d, j) for d in range(n_docs) for j in range(k)]
    random.Random(seed).shuffle(out)
    return out


def simulate_workload(
    corpus: Sequence[Document],
    taxonomy: Taxonomy,
    strategy: Strategy,
    layout: LayoutCase,
    cache_cfg: CacheConfig,
    params: CostParams = CostParams(),
    order: Order = Order.DOC_GROUPED,
    *,
    batch_size: int = 1,
    instruction: Optional[str] = None,
    json_template: Optional[str] = None,
    seed: int = 0,
    backend=None,
    lexicon: Optional[AnswerLexicon] = None,
    hasher: Optional[ChainHasher] = None,
    keep_requests: bool = True,
    record_events: bool = False,
    cache: Optional[PrefixCache] = None,
) -> WorkloadReport:
    """Replay every query of ``corpus`` through a fresh prefix cache.

    With ``backend`` set, each request is also sent to it: measured wall-clock
    time is recorded next to the simulated estimate and answers are parsed so
    failures are counted.
    """
    if not corpus:
        raise ValidationError("corpus must be non-empty")
    strategy, layout, order = Strategy(strategy), LayoutCase(layout), Order.parse(order)
    instruction = instruction or default_instruction()
    json_template = json_template or default_json_template()
    lexicon = lexicon or AnswerLexicon()
    if cache is None:
        cache = PrefixCache(cache_cfg, record_events=record_events)
    if hasher is None or hasher.block_size != cache_cfg.block_size:
        hasher = ChainHasher(cache_cfg.block_size)
    decode = 1 if strategy is Strategy.DICHOTOMIC else json_decode_tokens(taxonomy)

    totals = ZERO
    records: list[RequestRecord] = []
    failures: dict[str, int] = {}
    wall_total = 0.0 if backend is not None else None
    for d, j in schedule(len(corpus), taxonomy.K, strategy, order, batch_size, seed):
        doc = corpus[d]
        if j is None:
            prompt = build_json_prompt(doc, taxonomy, json_template)
        else:
            prompt = build_dichotomic_prompt(doc, taxonomy.labels[j], layout, instruction)
        tokens = prompt.tokens
        hashes = hasher.hashes(tokens, prompt.shared_prefix_token_len, prompt.shared_prefix_key)
        pid = f"{doc.id}:{prompt.target or 'json'}"
        hit, _, _ = cache.access(hashes, len(tokens), pid)
        cost = estimate_request(prompt, hit, decode, params)
        totals = totals + cost

        wall = err = None
        if backend is not None:
            t0 = time.perf_counter()
            raw = backend.complete(prompt, decode, 0)
            wall = time.perf_counter() - t0
            wall_total += wall
            try:
                if strategy is Strategy.JSON:
                    parse_json_answer(raw, taxonomy)
                else:
                    parse_dichotomic_answer(raw, lexicon)
            except ParseError as exc:
                err = exc.error_class
                failures[err] = failures.get(err, 0) + 1
        if keep_requests:
            records.append(RequestRecord(doc.id, prompt.target, cost, wall, err))

    text_len = round(sum(len(tokenize(doc.text)) for doc in corpus) / len(corpus))
    return WorkloadReport(
        strategy=strategy,
        layout=layout,
        order=order,
        text_len=text_len,
        batch_size=batch_size,
        capacity_blocks=cache_cfg.capacity_blocks,
        block_size=cache_cfg.block_size,
        totals=totals,
        cache_stats=cache.stats(),
        json_parse_failures=sum(failures.values()) if strategy is Strategy.JSON else 0,
        failure_counts=failures,
        requests=records,
        wall_time=wall_total,
    )


def synth_corpus(n_docs: int, text_len: int, seed: int = 0) -> list[Document]:
    return [
        Document(f"synth-{text_len}-{i:05d}", synth_text(text_len, seed * 1_000_003 + i))
        for i in range(n_docs)
    ]


def write_csv(rows: Iterable[dict], path, columns: Optional[Sequence[str]] = None) -> None:
    rows = list(rows)
    if columns is None:
        columns = list(CSV_COLUMNS)
        for row in rows:
            columns += [c for c in row if c not in columns]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def bench_layout(
    n_texts: int = 1000,
    text_len: int = 300,
    cases: Sequence[int] = (1, 2, 3),
    taxonomy: Optional[Taxonomy] = None,
    cache_cfg: Optional[CacheConfig] = None,
    params: CostParams = CostParams(),
    order: Order = Order.DOC_GROUPED,
    batch_size: int = 1,
    seed: int = 0,
) -> list[WorkloadReport]:
    """Dichotomic cost of the same synthetic corpus under each layout case."""
    taxonomy = taxonomy or load_taxonomy()
    cache_cfg = cache_cfg or CacheConfig()
    corpus = synth_corpus(n_texts, text_len, seed)
    return [
        simulate_workload(
            corpus, taxonomy, Strategy.DICHOTOMIC, LayoutCase(c), cache_cfg, params, order,
            batch_size=batch_size, seed=seed, keep_requests=False,
        )
        for c in cases
    ]


@dataclass
class ComparisonTable:
    reports: list[WorkloadReport]

    def rows(self) -> list[dict]:
        return [r.csv_row() for r in self.reports]

    def ratios(self) -> list[dict]:
        """Dichotomic / JSON est_time per (batch, text_len), in sweep order."""
        cells: dict[tuple[int, int], dict] = {}
        for r in self.reports:
            cell = cells.setdefault((r.batch_size, r.text_len), {})
            cell[r.strategy] = r
        out = []
        for (batch, text_len), cell in cells.items():
            dic, js = cell[Strategy.DICHOTOMIC], cell[Strategy.JSON]
            out.append({
                "batch": batch,
                "text_len": text_len,
                "capacity": dic.csv_row()["capacity"],
                "dichotomic_est_time": _fmt(dic.totals.est_time),
                "json_est_time": _fmt(js.totals.est_time),
                "ratio": f"{dic.totals.est_time / js.totals.est_time:.6f}",
                "dichotomic_hit_rate": f"{dic.hit_rate:.6f}",
                "json_hit_rate": f"{js.hit_rate:.6f}",
            })
        return out

    def ratio_series(self, batch: int) -> list[float]:
        return [float(r["ratio"]) for r in self.ratios() if r["batch"] == batch]

    def to_csv(self, path) -> None:
        write_csv(self.rows(), path)

    def ratios_to_csv(self, path) -> None:
        rows = self.ratios()
        write_csv(rows, path, columns=list(rows[0]) if rows else ["batch"])


def compare_strategies(
    text_lens: Sequence[int],
    n_docs: int,
    taxonomy: Taxonomy,
    cache_cfg: CacheConfig,
    params: CostParams = CostParams(),
    batch_sizes: Sequence[int] = (1, 8, 32),
    layout: LayoutCase = LayoutCase.CASE3,
    seed: int = 0,
    order: Order = Order.DOC_GROUPED,
) -> ComparisonTable:
    """Dichotomic vs JSON cost over a text-length x batch-size grid."""
    if not text_lens:
        raise ValidationError("text_lens must be non-empty")
    reports = []
    hasher = ChainHasher(cache_cfg.block_size)
    for batch in batch_sizes:
        for text_len in text_lens:
            corpus = synth_corpus(n_docs, text_len, seed)
            for strategy in (Strategy.DICHOTOMIC, Strategy.JSON):
                reports.append(simulate_workload(
                    corpus, taxonomy, strategy, layout, cache_cfg, params, order,
                    batch_size=batch, seed=seed, hasher=hasher, keep_requests=False,
                ))
    return ComparisonTable(reports)
