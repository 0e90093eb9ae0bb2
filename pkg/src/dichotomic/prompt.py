"""Dichotomic and structured-JSON prompt construction and answer parsing."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property, lru_cache
from importlib import resources
from typing import Optional, Sequence

import yaml

from .domain import Document, LabelSpec, LabelVector, Taxonomy, ValidationError
from .tokenizer import is_boundary, tokenize

SEPARATOR = "\n"
LABELS_PLACEHOLDER = "{LABELS}"
TEXT_PLACEHOLDER = "{{text}}"


class Strategy(str, Enum):
    DICHOTOMIC = "dichotomic"
    JSON = "json"


class LayoutCase(int, Enum):
    """Order of the prompt parts. The queried dimension is the only part that
    differs between the K queries of one document."""

    CASE1 = 1  # instruction, dimension, text
    CASE2 = 2  # text, dimension, instruction
    CASE3 = 3  # text, instruction, dimension

    @property
    def order(self) -> tuple[str, str, str]:
        return _ORDERS[self]


_ORDERS = {
    LayoutCase.CASE1: ("instruction", "dimension", "text"),
    LayoutCase.CASE2: ("text", "dimension", "instruction"),
    LayoutCase.CASE3: ("text", "instruction", "dimension"),
}


@dataclass(frozen=True)
class Prompt:
    parts: tuple[tuple[str, str], ...]
    strategy: Strategy
    target: Optional[str] = None  # queried label name, dichotomic only
    separator: str = SEPARATOR
    shared_prefix_parts: int = 0  # leading parts identical across a document's queries

    @cached_property
    def rendered(self) -> str:
        return self.separator.join(content for _, content in self.parts)

    @cached_property
    def tokens(self) -> tuple[int, ...]:
        contents = [content for _, content in self.parts]
        # Per-part token runs concatenate exactly when every joint is a token boundary.
        joints_ok = self.separator.isspace() or (
            self.separator == "" and all(is_boundary(a, b) for a, b in zip(contents, contents[1:]))
        )
        if joints_ok:
            out: tuple[int, ...] = ()
            for content in contents:
                out += tokenize(content).tokens
            return out
        return tokenize(self.rendered).tokens

    @property
    def shared_prefix_token_len(self) -> int:
        return sum(len(tokenize(c)) for _, c in self.parts[: self.shared_prefix_parts])

    @property
    def shared_prefix_key(self) -> tuple[str, ...]:
        return tuple(c for _, c in self.parts[: self.shared_prefix_parts])

    def part(self, role: str) -> Optional[str]:
        for r, content in self.parts:
            if r == role:
                return content
        return None

    @cached_property
    def sha256(self) -> str:
        return hashlib.sha256(self.rendered.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AnswerLexicon:
    yes_forms: frozenset = frozenset({"yes", "tak"})
    no_forms: frozenset = frozenset({"no", "nie"})
    canonical_yes: str = "Yes"
    canonical_no: str = "No"

    def __post_init__(self):
        yes = frozenset(f.lower() for f in self.yes_forms)
        no = frozenset(f.lower() for f in self.no_forms)
        if not yes or not no:
            raise ValidationError("lexicon needs at least one yes-form and one no-form")
        if yes & no:
            raise ValidationError(f"yes/no forms overlap: {sorted(yes & no)}")
        object.__setattr__(self, "yes_forms", yes)
        object.__setattr__(self, "no_forms", no)

    @classmethod
    def polish(cls) -> "AnswerLexicon":
        return cls(canonical_yes="Tak", canonical_no="Nie")

    def to_dict(self) -> dict:
        return {
            "yes_forms": sorted(self.yes_forms),
            "no_forms": sorted(self.no_forms),
            "canonical_yes": self.canonical_yes,
            "canonical_no": self.canonical_no,
        }


class ParseError(ValueError):
    error_class = "ParseError"


class UnparseableAnswer(ParseError):
    error_class = "UnparseableAnswer"


class JsonSyntaxError(ParseError):
    error_class = "JsonSyntaxError"


class MissingLabelError(ParseError):
    error_class = "MissingLabelError"


class LabelTypeError(ParseError, TypeError):
    error_class = "TypeError"


class TemplateError(ValidationError):
    pass


@lru_cache(maxsize=1)
def default_prompts() -> dict:
    raw = (resources.files("dichotomic") / "data" / "prompts.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(raw)


def default_instruction() -> str:
    return default_prompts()["dichotomic_instruction"]


def default_json_template() -> str:
    return default_prompts()["json_template"]


def default_paraphrases() -> list[str]:
    return list(default_prompts()["paraphrases"])


def dimension_text(label: LabelSpec) -> str:
    return f"Question: {label.question_template} Answer Yes or No."


def build_dichotomic_prompt(
    doc: Document, label: LabelSpec, layout: LayoutCase, instruction: str
) -> Prompt:
    if not instruction:
        raise ValidationError("instruction must be non-empty")
    layout = LayoutCase(layout)
    content = {"instruction": instruction, "text": doc.text, "dimension": dimension_text(label)}
    order = layout.order
    return Prompt(
        parts=tuple((role, content[role]) for role in order),
        strategy=Strategy.DICHOTOMIC,
        target=label.name,
        shared_prefix_parts=order.index("dimension"),
    )


def build_json_prompt(doc: Document, taxonomy: Taxonomy, instruction_template: str) -> Prompt:
    missing = [p for p in (LABELS_PLACEHOLDER, TEXT_PLACEHOLDER) if p not in instruction_template]
    if missing:
        raise TemplateError(f"JSON template lacks placeholder(s): {', '.join(missing)}")
    filled = instruction_template.replace(LABELS_PLACEHOLDER, ", ".join(taxonomy.names))
    head, _, tail = filled.partition(TEXT_PLACEHOLDER)
    parts = [("schema", head), ("text", doc.text)]
    if tail:
        parts.append(("schema", tail.replace(TEXT_PLACEHOLDER, doc.text)))
    return Prompt(parts=tuple(parts), strategy=Strategy.JSON, separator="", shared_prefix_parts=1)


_ALPHA_TOKEN = re.compile(r"[^\W\d_]+")


def parse_dichotomic_answer(raw: str, lexicon: AnswerLexicon = AnswerLexicon()) -> bool:
    match = _ALPHA_TOKEN.search(raw)
    word = match.group(0).lower() if match else ""
    if word in lexicon.yes_forms:
        return True
    if word in lexicon.no_forms:
        return False
    raise UnparseableAnswer(f"answer {raw[:40]!r} starts with neither a yes- nor a no-form")


_FENCE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*\n?(.*?)\n?\s*```\s*$", re.DOTALL)


@dataclass
class JsonParseResult:
    vector: LabelVector
    fenced: bool = False
    extra_keys: list[str] = field(default_factory=list)


def parse_json_answer_detailed(raw: str, taxonomy: Taxonomy) -> JsonParseResult:
    """Strict parse; see :func:`parse_json_answer`."""
    fenced = False
    m = _FENCE.match(raw)
    if m:
        raw, fenced = m.group(1), True
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise JsonSyntaxError(f"malformed JSON: {exc.msg} at position {exc.pos}") from None
    if not isinstance(obj, dict):
        raise JsonSyntaxError(f"expected a JSON object, got {type(obj).__name__}")
    folded = {str(k).lower(): k for k in obj}
    values = []
    used = set()
    for name in taxonomy.names:
        key = name if name in obj else folded.get(name.lower())
        if key is None:
            raise MissingLabelError(f"label {name!r} absent from JSON answer")
        value = obj[key]
        if not isinstance(value, bool):
            raise LabelTypeError(f"label {name!r} has non-boolean value {value!r}")
        used.add(key)
        values.append(value)
    extra = sorted(str(k) for k in obj if k not in used)
    return JsonParseResult(tuple(values), fenced, extra)


def parse_json_answer(raw: str, taxonomy: Taxonomy) -> LabelVector:
    """Parse a structured answer into a label vector.

    Optional markdown code fences are stripped first. Every taxonomy label must
    be present with a JSON boolean; label keys match exactly or, failing that,
    case-insensitively. Extra keys are ignored.
    """
    return parse_json_answer_detailed(raw, taxonomy).vector


def render_json_answer(taxonomy: Taxonomy, values: Sequence[bool]) -> str:
    return json.dumps(dict(zip(taxonomy.names, (bool(v) for v in values))), ensure_ascii=False)


def json_decode_tokens(taxonomy: Taxonomy) -> int:
    """Token length of a complete answer object under the toy tokenizer."""
    return len(tokenize(render_json_answer(taxonomy, [False] * taxonomy.K)))
