import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ledger_oracle import ledger
from dichotomic.cache import CacheConfig
from dichotomic.cost import (
    CSV_COLUMNS,
    ContractViolation,
    CostParams,
    Order,
    compare_strategies,
    estimate_request,
    schedule,
    simulate_workload,
    synth_corpus,
    write_csv,
)
from dichotomic.domain import Document
from dichotomic.prompt import LayoutCase, Prompt, Strategy, default_instruction, json_decode_tokens
from dichotomic.tokenizer import synth_text, tokenize

INSTR = default_instruction()


def _prompt(n):
    return Prompt(parts=(("text", synth_text(n, 1)),), strategy=Strategy.DICHOTOMIC)


def test_estimate_examples():
    cost = estimate_request(_prompt(360), 352, 1, CostParams(1, 1, 0))
    assert cost.est_time == 9
    cost = estimate_request(_prompt(100), 0, 0, CostParams(1, 2, 5))
    assert cost.est_time == 105
    assert cost.recompute(CostParams(1, 2, 5)) == cost.est_time
    with pytest.raises(ContractViolation):
        estimate_request(_prompt(10), 11, 1, CostParams())


def test_params_nonnegative():
    with pytest.raises(ValueError):
        CostParams(alpha=-1)


@pytest.mark.parametrize("layout", [1, 2, 3])
def test_simulator_matches_ledger(taxonomy, layout):
    corpus = synth_corpus(30, 300, seed=4)
    report = simulate_workload(corpus, taxonomy, Strategy.DICHOTOMIC, LayoutCase(layout), CacheConfig())
    rows, uncached, total = ledger([d.text for d in corpus], taxonomy, INSTR, layout)
    assert report.totals.prefill_uncached_tokens == uncached
    assert report.totals.prefill_uncached_tokens + report.totals.prefill_cached_tokens == total
    assert [r.cost.prefill_cached_tokens for r in report.requests] == [r["hit"] for r in rows]


def test_single_doc_case3_hits(taxonomy):
    doc = Document("d", synth_text(300, 2))
    report = simulate_workload([doc], taxonomy, Strategy.DICHOTOMIC, LayoutCase.CASE3, CacheConfig())
    shared = (300 + len(tokenize(INSTR))) // 16 * 16
    hits = [r.cost.prefill_cached_tokens for r in report.requests]
    assert hits[0] == 0
    assert all(h >= shared for h in hits[1:])
    rows, _, _ = ledger([doc.text], taxonomy, INSTR, 3)
    assert hits == [r["hit"] for r in rows]


def test_single_doc_case1_hits_bounded(taxonomy):
    doc = Document("d", synth_text(300, 2))
    report = simulate_workload([doc], taxonomy, Strategy.DICHOTOMIC, LayoutCase.CASE1, CacheConfig())
    dims = [tokenize(f"Question: {lab.question_template} Answer Yes or No.").tokens for lab in taxonomy.labels]
    bound = len(tokenize(INSTR)) + max(len(d) for d in dims)
    assert all(r.cost.prefill_cached_tokens <= bound for r in report.requests)


def test_conservation_and_query_counts(taxonomy):
    corpus = synth_corpus(4, 120, seed=1)
    for strategy, per_doc in ((Strategy.DICHOTOMIC, taxonomy.K), (Strategy.JSON, 1)):
        r = simulate_workload(corpus, taxonomy, strategy, LayoutCase.CASE3, CacheConfig(16, 40))
        assert len(r.requests) == per_doc * len(corpus) == r.totals.requests
        assert r.totals.prefill_uncached_tokens + r.totals.prefill_cached_tokens == r.cache_stats.hit_tokens + r.cache_stats.miss_tokens
        for req in r.requests:
            c = req.cost
            assert c.est_time == c.recompute(CostParams())
        if strategy is Strategy.JSON:
            assert all(req.cost.decode_tokens == json_decode_tokens(taxonomy) for req in r.requests)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4), st.integers(60, 200))
def test_layout_monotonicity(taxonomy, seed, n_docs, text_len):
    corpus = synth_corpus(n_docs, text_len, seed)
    unc = {
        c: simulate_workload(corpus, taxonomy, Strategy.DICHOTOMIC, c, CacheConfig(),
                             keep_requests=False).totals.prefill_uncached_tokens
        for c in LayoutCase
    }
    assert unc[LayoutCase.CASE3] <= unc[LayoutCase.CASE2] <= unc[LayoutCase.CASE1]


def test_zero_capacity_no_benefit(taxonomy):
    corpus = synth_corpus(3, 100, seed=2)
    times = set()
    for order in Order:
        r = simulate_workload(corpus, taxonomy, Strategy.DICHOTOMIC, LayoutCase.CASE3, CacheConfig(16, 0), order=order)
        assert r.totals.prefill_cached_tokens == 0
        times.add(r.totals.est_time)
    assert len(times) == 1


def test_schedule_orders():
    assert schedule(2, 3, Strategy.DICHOTOMIC) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
    assert schedule(2, 2, Strategy.DICHOTOMIC, Order.LABEL_GROUPED) == [(0, 0), (1, 0), (0, 1), (1, 1)]
    assert schedule(3, 2, Strategy.DICHOTOMIC, batch_size=2) == [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (2, 1)]
    inter = schedule(5, 4, Strategy.DICHOTOMIC, Order.INTERLEAVED, seed=3)
    assert sorted(inter) == sorted(schedule(5, 4, Strategy.DICHOTOMIC))
    assert inter == schedule(5, 4, Strategy.DICHOTOMIC, Order.INTERLEAVED, seed=3)
    assert Order.parse("doc") is Order.DOC_GROUPED


def test_compare_strategies_table(taxonomy, tmp_path):
    table = compare_strategies([300, 1000, 2000, 4000, 8000], 2, taxonomy, CacheConfig(16, 600), batch_sizes=(1,))
    ratios = table.ratios()
    assert len(ratios) == 5 and [r["text_len"] for r in ratios] == [300, 1000, 2000, 4000, 8000]
    table.to_csv(tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)


def test_unbounded_hits_maximal(taxonomy):
    corpus = synth_corpus(3, 500, seed=8)
    r = simulate_workload(corpus, taxonomy, Strategy.DICHOTOMIC, LayoutCase.CASE3, CacheConfig())
    rows, _, _ = ledger([d.text for d in corpus], taxonomy, INSTR, 3)
    assert [q.cost.prefill_cached_tokens for q in r.requests] == [x["hit"] for x in rows]


def test_write_csv_extra_column(tmp_path):
    write_csv([{"strategy": "json", "wall_time_measured": "0.1"}], tmp_path / "x.csv")
    assert (tmp_path / "x.csv").read_text().splitlines()[0].endswith("wall_time_measured")
