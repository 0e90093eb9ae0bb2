"""Documents, taxonomies and label matrices shared by every other module."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import yaml

PathLike = Union[str, Path]

# One row of predictions or gold labels, aligned with Taxonomy order.
# ``None`` marks a missing or abstained cell.
LabelVector = tuple  # tuple[Optional[bool], ...]


class ValidationError(ValueError):
    """Input file or object violates a documented invariant."""


class TaxonomyError(ValidationError):
    pass


class CorpusError(ValidationError):
    pass


class PolarityGroup(str, Enum):
    EMOTION = "emotion"
    TONE = "tone"


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise CorpusError("document id must be non-empty")
        if not self.text:
            raise CorpusError(f"document {self.id!r} has empty text")

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "meta": dict(self.meta)}


@dataclass(frozen=True)
class LabelSpec:
    name: str
    question_template: str
    polarity_group: Optional[PolarityGroup] = None

    def __post_init__(self):
        if not self.name:
            raise TaxonomyError("label name must be non-empty")
        if not self.question_template:
            raise TaxonomyError(f"label {self.name!r} has empty question_template")


@dataclass(frozen=True)
class Taxonomy:
    labels: tuple[LabelSpec, ...]

    def __post_init__(self):
        if not self.labels:
            raise TaxonomyError("taxonomy needs at least one label")
        seen = set()
        for spec in self.labels:
            if spec.name in seen:
                raise TaxonomyError(f"duplicate label {spec.name!r}")
            seen.add(spec.name)

    @property
    def K(self) -> int:
        return len(self.labels)

    @property
    def names(self) -> list[str]:
        return [spec.name for spec in self.labels]

    def index(self, name: str) -> int:
        for i, spec in enumerate(self.labels):
            if spec.name == name:
                return i
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(spec.name == name for spec in self.labels)

    def label(self, name: str) -> LabelSpec:
        return self.labels[self.index(name)]

    def vector(self, mapping: Mapping[str, Optional[bool]]) -> LabelVector:
        return tuple(mapping.get(name) for name in self.names)

    def as_mapping(self, vector: Sequence[Optional[bool]]) -> dict[str, Optional[bool]]:
        if len(vector) != self.K:
            raise ValidationError(f"label vector has length {len(vector)}, expected {self.K}")
        return dict(zip(self.names, vector))


@dataclass
class AnnotationRun:
    """One teacher pass over a corpus.

    ``failures`` lists unparseable entries; ``counters`` tallies failure
    classes plus soft events such as fenced JSON or extra keys.
    """

    run_id: int
    rows: dict[str, LabelVector]
    failures: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)

    def check(self, k: int) -> None:
        for doc_id, vec in self.rows.items():
            if len(vec) != k:
                raise ValidationError(f"run {self.run_id}: row {doc_id!r} has length {len(vec)}, expected {k}")


def default_taxonomy_path() -> Path:
    return Path(str(resources.files("dichotomic") / "data" / "taxonomy.yaml"))


def load_taxonomy(path: Optional[PathLike] = None) -> Taxonomy:
    """Load a YAML taxonomy config; ``None`` loads the shipped 24-label default.

    Expected shape::

        labels:
          - name: Sad
            question_template: Does the text evoke sadness?
            polarity_group: emotion   # optional
    """
    path = Path(path) if path is not None else default_taxonomy_path()
    raw = path.read_text(encoding="utf-8")
    try:
        root = yaml.compose(raw)
    except yaml.YAMLError as exc:
        raise TaxonomyError(f"{path}: YAML parse error: {exc}") from None
    if not isinstance(root, yaml.MappingNode):
        raise TaxonomyError(f"{path}: top level must be a mapping with a 'labels' list")
    entries = None
    for key, value in root.value:
        if key.value == "labels":
            entries = value
    if not isinstance(entries, yaml.SequenceNode) or not entries.value:
        raise TaxonomyError(f"{path}: 'labels' must be a non-empty list")

    labels = []
    first_line: dict[str, int] = {}
    for node in entries.value:
        line = node.start_mark.line + 1
        if not isinstance(node, yaml.MappingNode):
            raise TaxonomyError(f"{path}:{line}: label entry must be a mapping")
        entry = yaml.safe_load(yaml.serialize(node))
        unknown = set(entry) - {"name", "question_template", "polarity_group"}
        if unknown:
            raise TaxonomyError(f"{path}:{line}: unknown field(s) {sorted(unknown)}")
        name = entry.get("name")
        if not isinstance(name, str) or not name.strip():
            raise TaxonomyError(f"{path}:{line}: field 'name' missing or empty")
        question = entry.get("question_template")
        if not isinstance(question, str) or not question.strip():
            raise TaxonomyError(f"{path}:{line}: field 'question_template' missing or empty for {name!r}")
        group = entry.get("polarity_group")
        if group is not None:
            try:
                group = PolarityGroup(group)
            except ValueError:
                raise TaxonomyError(
                    f"{path}:{line}: polarity_group must be 'emotion' or 'tone', got {group!r}"
                ) from None
        if name in first_line:
            raise TaxonomyError(
                f"{path}:{line}: duplicate label {name!r} (first defined on line {first_line[name]})"
            )
        first_line[name] = line
        labels.append(LabelSpec(name, question, group))
    return Taxonomy(tuple(labels))


def load_corpus(path: PathLike) -> list[Document]:
    path = Path(path)
    docs: list[Document] = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            doc_id = obj.get("id")
            if not isinstance(doc_id, str) or not doc_id:
                raise CorpusError(f"{path}:{lineno}: missing or empty 'id'")
            text = obj.get("text")
            if not isinstance(text, str) or not text:
                raise CorpusError(f"{path}:{lineno}: document {doc_id!r} has empty or missing 'text'")
            meta = obj.get("meta") or {}
            if not isinstance(meta, dict) or not all(isinstance(v, str) for v in meta.values()):
                raise CorpusError(f"{path}:{lineno}: 'meta' must map keys to strings")
            if doc_id in seen:
                raise CorpusError(
                    f"{path}: duplicate id {doc_id!r} on lines {seen[doc_id]} and {lineno}"
                )
            seen[doc_id] = lineno
            docs.append(Document(doc_id, text, dict(meta)))
    return docs


def export_corpus(docs: Iterable[Document], path: PathLike) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_dict(), ensure_ascii=False) + "\n")
