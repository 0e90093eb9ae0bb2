"""Command-line entry point: ``dichotomic <subcommand> [options]``.

Settings come from built-in defaults, then ``--config`` (YAML or JSON), then
flags. Every subcommand writes ``manifest.json`` with the effective settings
into ``--out``. Exit codes: 0 success, 1 validation or usage error, 2 backend
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import __version__
from .backend import (
    BackendError,
    HttpBackend,
    HttpConfig,
    OracleBackend,
    RecordingBackend,
    ReplayBackend,
    gold_labels,
    load_rules,
)
from .cache import CacheConfig, PrefixCache, replay_stats
from .cost import (
    CostParams,
    Order,
    bench_layout,
    compare_strategies,
    simulate_workload,
    synth_corpus,
    write_csv,
)
from .domain import ValidationError, load_corpus, load_taxonomy
from .evaluation import (
    SplitSpec,
    eval_id,
    eval_ood_external,
    eval_ood_loo,
    split_dataset,
    write_manifest,
)
from .metrics import (
    MetricsError,
    interrun_agreement,
    label_prevalence,
    prevalence_agreement,
    psa,
    wilcoxon_signed_rank,
)
from .pipeline import (
    ConsensusLabels,
    TiePolicy,
    aggregate_majority,
    annotate,
    export_dataset,
    import_corrections,
    load_dataset,
    load_runs,
    plan_queries,
    run_manifest,
    save_failures,
    save_runs,
    write_json,
)
from .prompt import AnswerLexicon, LayoutCase, Strategy, default_prompts
from .reference import context as reference_context

log = logging.getLogger("dichotomic")

EXIT_OK, EXIT_INVALID, EXIT_BACKEND = 0, 1, 2


@dataclass
class RunConfig:
    taxonomy: Optional[str] = None
    corpus: Optional[str] = None
    prompts: Optional[str] = None
    strategy: str = "dichotomic"
    layout: int = 3
    order: str = "doc_grouped"
    batch_size: int = 1
    runs: int = 3
    seed: int = 0
    out: str = "out"
    backend: str = "oracle"
    rules: Optional[str] = None
    fixture: Optional[str] = None
    fault_json: float = 0.0
    base_url: Optional[str] = None
    model: Optional[str] = None
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.7
    timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    block_size: int = 16
    capacity_blocks: Optional[int] = None
    alpha: float = 1.0
    beta: float = 10.0
    gamma: float = 0.0
    tie_policy: str = "false_on_tie"

    @classmethod
    def merge(cls, file_values: dict, flag_values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(file_values) - known)
        if unknown:
            raise ValidationError(f"unknown config key(s): {unknown}")
        values = dict(file_values)
        values.update({k: v for k, v in flag_values.items() if k in known and v is not None})
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        Strategy(self.strategy)
        LayoutCase(int(self.layout))
        Order.parse(self.order)
        TiePolicy(self.tie_policy)
        if self.backend not in ("oracle", "replay", "http"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        if self.runs < 1:
            raise ValidationError("--runs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a mapping")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]  # a run manifest
    return {k.replace("-", "_"): v for k, v in data.items()}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    # defaults are None so that absent flags do not override the config file
    g = p.add_argument_group("run settings")
    g.add_argument("--config", help="YAML/JSON settings file (a run manifest also works)")
    g.add_argument("--taxonomy", help="label taxonomy YAML (default: shipped 24 labels)")
    g.add_argument("--corpus", help="JSONL corpus {id, text, meta?}")
    g.add_argument("--prompts", help="YAML with dichotomic_instruction/json_template/paraphrases")
    g.add_argument("--strategy", choices=[s.value for s in Strategy])
    g.add_argument("--layout", type=int, choices=[1, 2, 3])
    g.add_argument("--order", choices=["doc", "label", "interleaved", "doc_grouped", "label_grouped"])
    g.add_argument("--batch-size", type=int)
    g.add_argument("--runs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--backend", choices=["oracle", "replay", "http"])
    g.add_argument("--rules", help="oracle keyword rule table (YAML)")
    g.add_argument("--fixture", help="replay fixture JSONL")
    g.add_argument("--fault-json", type=float, help="oracle JSON truncation probability")
    g.add_argument("--base-url")
    g.add_argument("--model")
    g.add_argument("--api-key-env", help="environment variable holding the API key")
    g.add_argument("--temperature", type=float)
    g.add_argument("--timeout", type=float)
    g.add_argument("--max-retries", type=int)
    g.add_argument("--max-in-flight", type=int)
    g.add_argument("--block-size", type=int)
    g.add_argument("--capacity-blocks", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--tie-policy", choices=[t.value for t in TiePolicy])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dichotomic", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", help="write the query plan")
    _common(p)

    p = sub.add_parser("annotate", help="run annotation passes through a backend")
    _common(p)

    p = sub.add_parser("aggregate", help="majority vote over annotation runs")
    _common(p)
    p.add_argument("--runs-file", required=True, help="runs.jsonl from annotate")

    p = sub.add_parser("export", help="export a labeled dataset, optionally split")
    _common(p)
    p.add_argument("--dataset", required=True, help="consensus JSONL from aggregate/correct")
    p.add_argument("--split", type=_csv_floats, help="train,validation,test fractions, e.g. 0.8,0.1,0.1")

    p = sub.add_parser("correct", help="apply human corrections (CSV id,label,value,annotator)")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--corrections", required=True)

    p = sub.add_parser("eval-id", help="in-distribution evaluation over all labels")
    _common(p)
    p.add_argument("--gold", help="gold dataset JSONL")
    p.add_argument("--gold-rules", help="derive gold labels from a keyword rule table")
    p.add_argument("--pred", help="predictions: runs.jsonl or dataset JSONL; default: annotate live")
    p.add_argument("--run", type=int, help="use this run of --pred runs.jsonl instead of the majority")
    p.add_argument("--split-manifest", help="restrict to one split of this manifest")
    p.add_argument("--split-name", default="test")
    p.add_argument("--compare-layouts", type=_csv_ints,
                   help="A,B: also annotate under two layouts and test per-label F1 with Wilcoxon")

    p = sub.add_parser("eval-ood", help="leave-one-label-out evaluation")
    _common(p)
    p.add_argument("--gold")
    p.add_argument("--gold-rules")
    p.add_argument("--predictions", help="external predictions JSONL {held_out_label, id, prediction}")

    p = sub.add_parser("bench-layout", help="simulated cost of the three layout cases")
    _common(p)
    p.add_argument("--texts", type=int, default=1000)
    p.add_argument("--text-len", type=int, default=300)
    p.add_argument("--cases", type=_csv_ints, default=[1, 2, 3])

    p = sub.add_parser("bench-crossover", help="simulated dichotomic vs JSON cost over text length")
    _common(p)
    p.add_argument("--text-lens", type=_csv_ints, default=[300, 1000, 2000, 4000, 8000])
    p.add_argument("--docs", type=int, default=64)
    p.add_argument("--batch-sizes", type=_csv_ints, default=[1, 8, 32])

    p = sub.add_parser("cache-sim", help="replay one workload through the cache and log events")
    _common(p)
    p.add_argument("--texts", type=int, default=100, help="synthetic corpus size when --corpus is absent")
    p.add_argument("--text-len", type=int, default=300)

    p = sub.add_parser("agree", help="PSA between two label sets")
    _common(p)
    p.add_argument("--a", required=True, help="runs.jsonl or dataset JSONL")
    p.add_argument("--b", required=True, help="runs.jsonl, dataset JSONL, or corrections CSV applied to --a")
    return parser


# -- helpers --------------------------------------------------------------------


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Context:
    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.taxonomy = load_taxonomy(cfg.taxonomy)
        prompts = dict(default_prompts())
        if cfg.prompts:
            extra = yaml.safe_load(Path(cfg.prompts).read_text(encoding="utf-8")) or {}
            prompts.update(extra)
        self.prompts = prompts
        self.lexicon = AnswerLexicon()
        self.inputs: dict[str, str] = {}

    def corpus(self):
        if not self.cfg.corpus:
            raise ValidationError("--corpus is required")
        return load_corpus(self.note_input("corpus", self.cfg.corpus))

    def note_input(self, key: str, path) -> str:
        self.inputs[key] = _sha256_file(path)
        return path

    def cache_cfg(self) -> CacheConfig:
        return CacheConfig(self.cfg.block_size, self.cfg.capacity_blocks)

    def params(self) -> CostParams:
        return CostParams(self.cfg.alpha, self.cfg.beta, self.cfg.gamma)

    def backend(self):
        cfg = self.cfg
        if cfg.backend == "oracle":
            if not cfg.rules:
                raise ValidationError("--rules is required for the oracle backend")
            rules = load_rules(self.note_input("rules", cfg.rules))
            return OracleBackend(self.taxonomy, rules, self.lexicon, cfg.fault_json, cfg.seed)
        if cfg.backend == "replay":
            if not cfg.fixture:
                raise ValidationError("--fixture is required for the replay backend")
            return ReplayBackend(self.note_input("fixture", cfg.fixture))
        if not cfg.base_url or not cfg.model:
            raise ValidationError("--base-url and --model are required for the http backend")
        return HttpBackend(HttpConfig(
            cfg.base_url, cfg.model, cfg.api_key_env, cfg.timeout, cfg.max_retries,
            cfg.temperature, cfg.seed, cfg.max_in_flight,
        ))

    def plan(self, corpus, strategy=None, layout=None, n_runs=None):
        return plan_queries(
            corpus, self.taxonomy,
            Strategy(strategy or self.cfg.strategy),
            LayoutCase(layout or self.cfg.layout),
            Order.parse(self.cfg.order),
            n_runs or self.cfg.runs,
            instruction=self.prompts["dichotomic_instruction"],
            json_template=self.prompts["json_template"],
            seed=self.cfg.seed,
        )

    def gold(self, args, corpus) -> dict:
        if args.gold:
            _, consensus = load_dataset(self.note_input("gold", args.gold), self.taxonomy)
            return consensus.rows
        if args.gold_rules:
            return gold_labels(corpus, self.taxonomy, load_rules(self.note_input("gold_rules", args.gold_rules)))
        raise ValidationError("--gold or --gold-rules is required")

    def write_manifest(self, extra: Optional[dict] = None) -> None:
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg.to_dict(),
            "inputs": dict(sorted(self.inputs.items())),
        }
        if extra:
            manifest.update(extra)
        write_json(manifest, self.out / "manifest.json")


def _load_rows(path, ctx: Context, run: Optional[int] = None):
    """Label rows from runs.jsonl (majority or one run) or a dataset JSONL."""
    first = ""
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                first = line
                break
    obj = json.loads(first) if first else {}
    if "run" in obj:
        runs = load_runs(path, ctx.taxonomy)
        if run is not None:
            match = [r for r in runs if r.run_id == run]
            if not match:
                raise ValidationError(f"{path}: no run {run}")
            return match[0].rows, runs
        return aggregate_majority(runs, TiePolicy(ctx.cfg.tie_policy)).rows, runs
    _, consensus = load_dataset(path, ctx.taxonomy)
    return consensus.rows, None


# -- subcommands ----------------------------------------------------------------


def cmd_plan(ctx: Context, args) -> None:
    plan = ctx.plan(ctx.corpus())
    with (ctx.out / "plan.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for e in plan.entries:
            row = {"run": e.run, "id": e.doc_id, "target": e.target,
                   "prompt_sha256": e.prompt.sha256, "prompt_tokens": len(e.prompt.tokens)}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    ctx.write_manifest({"plan_hash": plan.plan_hash(), "plan_entries": len(plan)})
    print(f"plan: {len(plan)} entries -> {ctx.out / 'plan.jsonl'}")


def cmd_annotate(ctx: Context, args) -> None:
    corpus = ctx.corpus()
    plan = ctx.plan(corpus)
    backend = RecordingBackend(ctx.backend())
    try:
        runs = annotate(plan, backend, ctx.taxonomy, ctx.lexicon, ctx.cfg.max_in_flight)
    finally:
        if backend.records:
            backend.write_fixture(ctx.out / "completions.jsonl")
        close = getattr(backend.inner, "close", None)
        if close:
            close()
    save_runs(runs, ctx.taxonomy, ctx.out / "runs.jsonl")
    save_failures(runs, ctx.out / "failures.jsonl")
    report = {
        "strategy": plan.strategy.value,
        "layout": int(plan.layout),
        "n_docs": len(corpus),
        "n_runs": plan.n_runs,
        "plan_hash": plan.plan_hash(),
        "runs": [
            {"run": r.run_id, "parse_failures": len(r.failures), "counters": dict(sorted(r.counters.items()))}
            for r in runs
        ],
        "parse_failures_total": sum(len(r.failures) for r in runs),
    }
    write_json(report, ctx.out / "annotate_report.json")
    manifest = run_manifest(plan, backend, ctx.lexicon, ctx.cfg.to_dict(), {"seed": ctx.cfg.seed})
    manifest.update({"command": "annotate", "version": __version__, "inputs": dict(sorted(ctx.inputs.items())),
                     "fixture": "completions.jsonl"})
    write_json(manifest, ctx.out / "manifest.json")
    print(f"annotate: {len(plan)} queries, {report['parse_failures_total']} parse failures -> {ctx.out}")


def cmd_aggregate(ctx: Context, args) -> None:
    corpus = ctx.corpus()
    runs = load_runs(ctx.note_input("runs", args.runs_file), ctx.taxonomy)
    consensus = aggregate_majority(runs, TiePolicy(ctx.cfg.tie_policy))
    export_dataset(consensus, corpus, ctx.taxonomy, ctx.out / "consensus.jsonl")
    ctx.write_manifest()
    print(f"aggregate: {len(consensus.rows)} documents from {len(runs)} runs -> {ctx.out / 'consensus.jsonl'}")


def cmd_export(ctx: Context, args) -> None:
    docs, consensus = load_dataset(ctx.note_input("dataset", args.dataset), ctx.taxonomy)
    if not args.split:
        export_dataset(consensus, docs, ctx.taxonomy, ctx.out / "dataset.jsonl")
        ctx.write_manifest()
        print(f"export: {len(docs)} documents -> {ctx.out / 'dataset.jsonl'}")
        return
    spec = SplitSpec(tuple(args.split), ctx.cfg.seed)
    split = split_dataset(docs, consensus.rows, spec)
    for name in ("train", "validation", "test"):
        export_dataset(consensus, getattr(split, name), ctx.taxonomy, ctx.out / f"{name}.jsonl")
    write_manifest(split, ctx.out / "split_manifest.json")
    ctx.write_manifest({"split": list(spec.ratios)})
    sizes = "/".join(str(len(getattr(split, n))) for n in ("train", "validation", "test"))
    print(f"export: split {sizes} -> {ctx.out}")


def cmd_correct(ctx: Context, args) -> None:
    docs, consensus = load_dataset(ctx.note_input("dataset", args.dataset), ctx.taxonomy)
    corrected = import_corrections(consensus, ctx.note_input("corrections", args.corrections), ctx.taxonomy)
    export_dataset(corrected, docs, ctx.taxonomy, ctx.out / "corrected.jsonl")
    ctx.write_manifest()
    changed = sum(len(p) for p in corrected.provenance.values()) - sum(len(p) for p in consensus.provenance.values())
    print(f"correct: {changed} cells annotated -> {ctx.out / 'corrected.jsonl'}")


def _live_predictions(ctx: Context, corpus, layout=None):
    plan = ctx.plan(corpus, layout=layout, n_runs=1)
    runs = annotate(plan, ctx.backend(), ctx.taxonomy, ctx.lexicon, ctx.cfg.max_in_flight)
    return runs[0]


def cmd_eval_id(ctx: Context, args) -> None:
    corpus = ctx.corpus() if ctx.cfg.corpus else None
    failures = 0
    if args.pred:
        pred, _ = _load_rows(ctx.note_input("pred", args.pred), ctx, args.run)
    else:
        if corpus is None:
            raise ValidationError("--corpus is required to annotate live")
        run = _live_predictions(ctx, corpus)
        pred, failures = run.rows, len(run.failures)
    gold = ctx.gold(args, corpus or [])
    ids = sorted(pred)
    if args.split_manifest:
        manifest = json.loads(Path(ctx.note_input("split_manifest", args.split_manifest)).read_text(encoding="utf-8"))
        ids = sorted(i for i, s in manifest.items() if s == args.split_name)
    report = eval_id(pred, gold, ctx.taxonomy, ids, json_parse_failures=failures if ctx.cfg.strategy == "json" else 0)
    report["strategy"] = ctx.cfg.strategy
    report["parse_failures"] = failures
    if args.compare_layouts:
        if corpus is None or len(args.compare_layouts) != 2:
            raise ValidationError("--compare-layouts needs two layouts and --corpus")
        scores = []
        for layout in args.compare_layouts:
            run = _live_predictions(ctx, corpus, layout=layout)
            rep = eval_id(run.rows, gold, ctx.taxonomy, ids)
            scores.append([r["f1"] for r in rep["labels"]])
        test = wilcoxon_signed_rank(scores[0], scores[1])
        report["layout_comparison"] = {"layouts": args.compare_layouts, "per_label_f1": scores,
                                       "wilcoxon": test.to_dict()}
    write_json(report, ctx.out / "eval_id.json")
    ctx.write_manifest()
    print(f"eval-id: macro F1 {report['macro_f1']:.4f}, micro F1 {report['micro_f1']:.4f} -> {ctx.out / 'eval_id.json'}")


def cmd_eval_ood(ctx: Context, args) -> None:
    corpus = ctx.corpus()
    gold = ctx.gold(args, corpus)
    if args.predictions:
        report = eval_ood_external(ctx.note_input("predictions", args.predictions), gold, ctx.taxonomy)
    else:
        report = eval_ood_loo(
            corpus, gold, ctx.taxonomy, ctx.backend(), Strategy(ctx.cfg.strategy),
            paraphrases=ctx.prompts.get("paraphrases"), json_template=ctx.prompts["json_template"],
            lexicon=ctx.lexicon, layout=LayoutCase(ctx.cfg.layout),
        )
    report["reference"] = reference_context("ood")
    write_json(report, ctx.out / "eval_ood.json")
    ctx.write_manifest()
    print(f"eval-ood: macro F1 {report['macro_f1']:.4f}, micro F1 {report['micro_f1']:.4f} -> {ctx.out / 'eval_ood.json'}")


def cmd_bench_layout(ctx: Context, args) -> None:
    reports = bench_layout(
        args.texts, args.text_len, args.cases, ctx.taxonomy, ctx.cache_cfg(), ctx.params(),
        Order.parse(ctx.cfg.order), ctx.cfg.batch_size, ctx.cfg.seed,
    )
    write_csv([r.csv_row() for r in reports], ctx.out / "bench_layout.csv")
    ctx.write_manifest()
    for r in reports:
        print(f"case {int(r.layout)}: est_time {r.totals.est_time:.0f}, uncached {r.totals.prefill_uncached_tokens}")


def cmd_bench_crossover(ctx: Context, args) -> None:
    capacity = ctx.cfg.capacity_blocks if ctx.cfg.capacity_blocks is not None else 400
    table = compare_strategies(
        args.text_lens, args.docs, ctx.taxonomy, CacheConfig(ctx.cfg.block_size, capacity), ctx.params(),
        args.batch_sizes, LayoutCase(ctx.cfg.layout), ctx.cfg.seed, Order.parse(ctx.cfg.order),
    )
    table.to_csv(ctx.out / "bench_crossover.csv")
    table.ratios_to_csv(ctx.out / "bench_crossover_ratios.csv")
    ctx.write_manifest({"capacity_blocks_used": capacity})
    for batch in args.batch_sizes:
        series = ", ".join(f"{x:.3f}" for x in table.ratio_series(batch))
        print(f"batch {batch}: dichotomic/json = {series}")


def cmd_cache_sim(ctx: Context, args) -> None:
    corpus = ctx.corpus() if ctx.cfg.corpus else synth_corpus(args.texts, args.text_len, ctx.cfg.seed)
    cache = PrefixCache(ctx.cache_cfg(), record_events=True)
    report = simulate_workload(
        corpus, ctx.taxonomy, Strategy(ctx.cfg.strategy), LayoutCase(ctx.cfg.layout), ctx.cache_cfg(),
        ctx.params(), Order.parse(ctx.cfg.order), batch_size=ctx.cfg.batch_size, seed=ctx.cfg.seed,
        keep_requests=False, cache=cache,
    )
    cache.export_events(ctx.out / "cache_events.jsonl")
    replayed = replay_stats(cache.events)
    stats = {"stats": report.cache_stats.to_dict(), "hit_rate": round(report.cache_stats.hit_rate, 6),
             "replay_matches": replayed == report.cache_stats, "row": report.csv_row()}
    write_json(stats, ctx.out / "cache_stats.json")
    ctx.write_manifest()
    print(f"cache-sim: hit rate {report.cache_stats.hit_rate:.4f}, {report.cache_stats.evictions} evictions")


def cmd_agree(ctx: Context, args) -> None:
    a_rows, a_runs = _load_rows(ctx.note_input("a", args.a), ctx)
    if args.b.lower().endswith(".csv"):
        base = ConsensusLabels(dict(a_rows), len(a_runs or []) or 1)
        b_rows = import_corrections(base, ctx.note_input("b", args.b), ctx.taxonomy).rows
    else:
        b_rows, _ = _load_rows(ctx.note_input("b", args.b), ctx)
    per, overall = psa(a_rows, b_rows)
    report: dict = {
        "labels": [{"name": n, "psa": None if s is None else round(s, 6)} for n, s in zip(ctx.taxonomy.names, per)],
        "psa_overall": None if overall is None else round(overall, 6),
    }
    prevalence = label_prevalence(a_rows, b_rows)
    try:
        report["prevalence_agreement"] = prevalence_agreement(prevalence, per).to_dict()
    except MetricsError as exc:
        report["prevalence_agreement"] = {"error": type(exc).__name__, "message": str(exc)}
    if a_runs and len(a_runs) >= 2:
        inter = interrun_agreement([r.rows for r in a_runs])
        report["interrun"] = inter
        try:
            run_prev = label_prevalence(*[r.rows for r in a_runs])
            report["interrun_prevalence_agreement"] = prevalence_agreement(
                run_prev, inter["per_label_pairwise_mean"]).to_dict()
        except MetricsError as exc:
            report["interrun_prevalence_agreement"] = {"error": type(exc).__name__, "message": str(exc)}
    report["reference"] = reference_context("agreement")
    write_json(report, ctx.out / "agreement.json")
    ctx.write_manifest()
    print(f"agree: overall PSA {report['psa_overall']} -> {ctx.out / 'agreement.json'}")


COMMANDS = {
    "plan": cmd_plan,
    "annotate": cmd_annotate,
    "aggregate": cmd_aggregate,
    "export": cmd_export,
    "correct": cmd_correct,
    "eval-id": cmd_eval_id,
    "eval-ood": cmd_eval_ood,
    "bench-layout": cmd_bench_layout,
    "bench-crossover": cmd_bench_crossover,
    "cache-sim": cmd_cache_sim,
    "agree": cmd_agree,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
        cfg = RunConfig.merge(load_config_file(args.config), flags)
        COMMANDS[args.command](Context(cfg, args.command), args)
    except BackendError as exc:
        print(f"dichotomic: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ValidationError, ValueError, OSError, KeyError, yaml.YAMLError) as exc:
        print(f"dichotomic: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
