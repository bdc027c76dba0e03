"""Corpus loading and canonical label-sentence handling.

A corpus is a UTF-8 JSONL file, one record per line with fields ``id``,
``question``, ``answer`` and ``label`` (a list of hierarchy components,
most general first).  Label text is lowercased at ingestion so casing can
never split a label; the canonical rendering joins components with
``" - "`` (space, hyphen, space).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import InputError

LABEL_SEPARATOR = " - "
MAX_LABEL_DEPTH = 6
CORPUS_ROLES = ("train", "validation", "test")


@dataclass(frozen=True)
class LabelPath:
    """Ordered hierarchy components (e.g. subject, chapter, topic)."""

    components: tuple[str, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.components, tuple):
            object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) == 0:
            raise InputError("empty label path")
        if len(self.components) > MAX_LABEL_DEPTH:
            raise InputError(
                f"label path deeper than {MAX_LABEL_DEPTH}: {self.components!r}"
            )
        for part in self.components:
            if not isinstance(part, str) or not part:
                raise InputError(f"empty label component in {self.components!r}")
            if part != part.strip().lower():
                raise InputError(f"label component {part!r} is not trimmed lowercase")
            if LABEL_SEPARATOR in part:
                raise InputError(
                    f"label component {part!r} contains the reserved"
                    f" separator {LABEL_SEPARATOR!r}"
                )

    @classmethod
    def from_raw(cls, parts) -> "LabelPath":
        """Trim and lowercase raw components, then validate."""
        return cls(tuple(str(p).strip().lower() for p in parts))


def canonical_label_text(label: LabelPath) -> str:
    """Render a label path as its canonical one-line label sentence."""
    return LABEL_SEPARATOR.join(label.components)


def parse_label_text(text: str) -> LabelPath:
    """Inverse of :func:`canonical_label_text` for well-formed sentences."""
    return LabelPath.from_raw(text.split(LABEL_SEPARATOR))


@dataclass(frozen=True)
class Document:
    """One question-answer pair plus its ground-truth label path."""

    id: str
    question: str
    answer: str
    label: LabelPath

    def __post_init__(self) -> None:
        if not self.id:
            raise InputError("empty document id")
        if not self.question.strip():
            raise InputError("empty question")


@dataclass
class Corpus:
    documents: list[Document]
    role: str

    def __post_init__(self) -> None:
        if self.role not in CORPUS_ROLES:
            raise InputError(f"unknown corpus role {self.role!r}; expected one of {CORPUS_ROLES}")
        if not self.documents:
            raise InputError("empty corpus")
        seen: set[str] = set()
        for doc in self.documents:
            if doc.id in seen:
                raise InputError(f"duplicate id {doc.id!r} in corpus")
            seen.add(doc.id)

    def __len__(self) -> int:
        return len(self.documents)


_REQUIRED_FIELDS = ("id", "question", "answer", "label")


def load_corpus(path, role: str) -> Corpus:
    """Load a JSONL corpus, preserving file order.

    Every validation failure names the offending line.  Duplicate ids and
    empty label paths are rejected; question/answer text is kept verbatim
    while label components are trimmed and lowercased.
    """
    docs: list[Document] = []
    first_line: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"malformed record at line {lineno}: {exc}") from exc
            if not isinstance(rec, dict):
                raise InputError(f"record is not an object at line {lineno}")
            missing = [k for k in _REQUIRED_FIELDS if k not in rec]
            if missing:
                raise InputError(f"missing fields {missing} at line {lineno}")
            if not isinstance(rec["label"], list):
                raise InputError(f"label must be a list of strings at line {lineno}")
            try:
                doc = Document(
                    id=str(rec["id"]),
                    question=str(rec["question"]),
                    answer=str(rec["answer"]),
                    label=LabelPath.from_raw(rec["label"]),
                )
            except InputError as exc:
                raise InputError(f"{exc} at line {lineno}") from exc
            if doc.id in first_line:
                raise InputError(
                    f"duplicate id {doc.id!r} at line {lineno}"
                    f" (first seen at line {first_line[doc.id]})"
                )
            first_line[doc.id] = lineno
            docs.append(doc)
    if not docs:
        raise InputError(f"no records in {path}")
    return Corpus(documents=docs, role=role)


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus back to JSONL; inverse of :func:`load_corpus`."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            rec = {
                "id": doc.id,
                "question": doc.question,
                "answer": doc.answer,
                "label": list(doc.label.components),
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def unique_labels(corpus: Corpus) -> list[LabelPath]:
    """Distinct label paths in first-occurrence order."""
    out: list[LabelPath] = []
    seen: set[str] = set()
    for doc in corpus.documents:
        text = canonical_label_text(doc.label)
        if text not in seen:
            seen.add(text)
            out.append(doc.label)
    return out


def load_label_list(path) -> list[LabelPath]:
    """Read a label list file: one canonical label sentence per line."""
    labels: list[LabelPath] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                labels.append(parse_label_text(text))
            except InputError as exc:
                raise InputError(f"{exc} at line {lineno}") from exc
    if not labels:
        raise InputError(f"no labels in {path}")
    return labels


def save_label_list(labels: list[LabelPath], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(canonical_label_text(label) + "\n")
