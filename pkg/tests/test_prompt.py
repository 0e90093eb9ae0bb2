import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dichotomic.domain import Document, LabelSpec, Taxonomy
from dichotomic.prompt import (
    AnswerLexicon,
    JsonSyntaxError,
    LabelTypeError,
    LayoutCase,
    MissingLabelError,
    TemplateError,
    UnparseableAnswer,
    build_dichotomic_prompt,
    build_json_prompt,
    default_instruction,
    default_json_template,
    json_decode_tokens,
    parse_dichotomic_answer,
    parse_json_answer,
    parse_json_answer_detailed,
    render_json_answer,
)
from dichotomic.tokenizer import synth_text, tokenize

DOC = Document("d", synth_text(300, 1))
INSTR = default_instruction()


def test_case3_part_order(taxonomy):
    p = build_dichotomic_prompt(DOC, taxonomy.label("Sad"), LayoutCase.CASE3, INSTR)
    assert [r for r, _ in p.parts] == ["text", "instruction", "dimension"]
    assert p.rendered == "\n".join(c for _, c in p.parts)


def test_case1_shared_prefix_is_instruction(taxonomy):
    p = build_dichotomic_prompt(DOC, taxonomy.label("Sad"), LayoutCase.CASE1, INSTR)
    assert p.shared_prefix_token_len == len(tokenize(INSTR))


def test_case3_two_labels_share_prefix(taxonomy):
    a = build_dichotomic_prompt(DOC, taxonomy.label("Sad"), LayoutCase.CASE3, INSTR)
    b = build_dichotomic_prompt(DOC, taxonomy.label("Calm"), LayoutCase.CASE3, INSTR)
    shared = DOC.text + "\n" + INSTR + "\n"
    assert a.rendered.startswith(shared) and b.rendered.startswith(shared)
    assert a.rendered != b.rendered
    n = a.shared_prefix_token_len
    assert a.tokens[:n] == b.tokens[:n]


def test_prompt_tokens_match_rendered(taxonomy):
    for case in LayoutCase:
        p = build_dichotomic_prompt(DOC, taxonomy.label("Sad"), case, INSTR)
        assert p.tokens == tokenize(p.rendered).tokens
    j = build_json_prompt(DOC, taxonomy, default_json_template())
    assert j.tokens == tokenize(j.rendered).tokens


@given(st.sampled_from(range(24)), st.integers(0, 1000))
def test_layout_content_invariance_and_prefix_order(j, seed):
    from dichotomic.domain import load_taxonomy
    tax = load_taxonomy()
    doc = Document("x", synth_text(80, seed))
    prompts = {c: build_dichotomic_prompt(doc, tax.labels[j], c, INSTR) for c in LayoutCase}
    contents = {c: sorted(content for _, content in p.parts) for c, p in prompts.items()}
    assert contents[LayoutCase.CASE1] == contents[LayoutCase.CASE2] == contents[LayoutCase.CASE3]
    s = {c: p.shared_prefix_token_len for c, p in prompts.items()}
    assert s[LayoutCase.CASE3] >= s[LayoutCase.CASE2] >= 0
    assert s[LayoutCase.CASE3] >= s[LayoutCase.CASE1]
    for p in prompts.values():
        assert p.shared_prefix_token_len <= len(p.tokens)


def test_json_prompt_lists_labels(taxonomy):
    p = build_json_prompt(DOC, taxonomy, default_json_template())
    assert ", ".join(taxonomy.names) in p.rendered
    assert DOC.text in p.rendered
    one = Taxonomy((LabelSpec("Sad", "Is it sad?"),))
    assert "list: Sad," in build_json_prompt(DOC, one, default_json_template()).rendered


def test_json_template_needs_text_placeholder(taxonomy):
    with pytest.raises(TemplateError):
        build_json_prompt(DOC, taxonomy, "Labels {LABELS}, no text here")


@pytest.mark.parametrize("raw, value", [
    ("Yes", True), (" no, the text is calm", False), ("TAK", True), ("Nie.", False), ("**Yes**", True),
])
def test_parse_dichotomic(raw, value):
    assert parse_dichotomic_answer(raw) is value


@pytest.mark.parametrize("raw", ["Maybe", "", "42"])
def test_parse_dichotomic_unparseable(raw):
    with pytest.raises(UnparseableAnswer):
        parse_dichotomic_answer(raw)


@given(st.sampled_from(["yes", "tak", "no", "nie"]), st.sampled_from(["", ".", "!", " because"]))
def test_lexicon_total(form, tail):
    lex = AnswerLexicon()
    raw = form.capitalize() + tail
    assert parse_dichotomic_answer(raw, lex) is (form in lex.yes_forms)


def test_lexicon_must_be_disjoint():
    with pytest.raises(ValueError):
        AnswerLexicon(yes_forms=frozenset({"yes"}), no_forms=frozenset({"YES"}))


def test_parse_json(taxonomy):
    values = {n: False for n in taxonomy.names}
    values["Sad"] = True
    vec = parse_json_answer(json.dumps(values), taxonomy)
    assert vec[taxonomy.index("Sad")] is True and sum(vec) == 1
    bad = dict(values, Sad="yes")
    with pytest.raises(LabelTypeError) as err:
        parse_json_answer(json.dumps(bad), taxonomy)
    assert isinstance(err.value, TypeError)
    with pytest.raises(JsonSyntaxError):
        parse_json_answer(json.dumps(values)[:40], taxonomy)
    del values["Calm"]
    with pytest.raises(MissingLabelError):
        parse_json_answer(json.dumps(values), taxonomy)


def test_parse_json_fenced_and_case(taxonomy):
    obj = {n.lower(): True for n in taxonomy.names}
    obj["extra"] = False
    res = parse_json_answer_detailed("```json\n" + json.dumps(obj) + "\n```", taxonomy)
    assert res.fenced and res.extra_keys == ["extra"] and all(res.vector)


def test_json_decode_tokens_recomputed(taxonomy):
    rendered = render_json_answer(taxonomy, [False] * taxonomy.K)
    assert json_decode_tokens(taxonomy) == len(tokenize(rendered))
