"""Loading, validation, and splitting of line-delimited QA datasets.

A dataset file holds one JSON object per line:

    {"id": str, "question": str,
     "choices": [{"letter": str, "text": str}, ...]?,   # absent/empty => open answer
     "gold": str, "subject": str?}

Items are immutable after load; splits are seeded and deterministic.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

CHOICE_LETTERS = "ABCDEFGHIJ"  # MMLU-Pro goes up to 10 options


class DatasetError(Exception):
    """Malformed or inconsistent dataset content."""


@dataclass(frozen=True)
class QaItem:
    """One question: multiple-choice when ``choices`` is nonempty, open otherwise."""

    id: str
    question: str
    choices: tuple[tuple[str, str], ...] = ()  # (letter, text) pairs, ordered
    gold: str = ""
    subject: str | None = None

    @property
    def is_multiple_choice(self) -> bool:
        return len(self.choices) > 0

    def choice_text(self, letter: str) -> str:
        for let, text in self.choices:
            if let == letter:
                return text
        raise KeyError(letter)

    def validate(self) -> None:
        if not self.id:
            raise DatasetError("item has empty id")
        if not self.question:
            raise DatasetError(f"item {self.id!r} has empty question")
        if self.choices:
            letters = [let for let, _ in self.choices]
            if len(set(letters)) != len(letters):
                raise DatasetError(f"item {self.id!r} has duplicate choice letters")
            for let in letters:
                if let not in CHOICE_LETTERS:
                    raise DatasetError(
                        f"item {self.id!r}: choice letter {let!r} outside A-J"
                    )
            if self.gold not in letters:
                raise DatasetError(
                    f"item {self.id!r}: gold {self.gold!r} not among choices {letters}"
                )
        elif not self.gold:
            raise DatasetError(f"open-answer item {self.id!r} has empty gold")


@dataclass
class Dataset:
    """An ordered, id-unique collection of QaItems."""

    items: list[QaItem] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[QaItem]:
        return iter(self.items)

    def __getitem__(self, idx: int) -> QaItem:
        return self.items[idx]

    def by_id(self) -> dict[str, QaItem]:
        return {item.id: item for item in self.items}

    def ids(self) -> list[str]:
        return [item.id for item in self.items]


@dataclass(frozen=True)
class SplitSpec:
    """Calibration/validation/test split as explicit per-split item caps.

    ``None`` for the last unspecified cap means "everything left over".
    """

    calibration: int
    validation: int
    test: int
    seed: int = 0

    @classmethod
    def from_fractions(
        cls, n: int, cal: float, val: float, test: float, seed: int = 0
    ) -> "SplitSpec":
        if abs(cal + val + test - 1.0) > 1e-9:
            raise DatasetError(f"fractions must sum to 1, got {cal + val + test}")
        n_cal = int(round(n * cal))
        n_val = int(round(n * val))
        return cls(n_cal, n_val, n - n_cal - n_val, seed)


def parse_record(obj: dict) -> QaItem:
    """Build a QaItem from one decoded JSON record."""
    choices = tuple(
        (c["letter"], c["text"]) for c in obj.get("choices") or ()
    )
    item = QaItem(
        id=str(obj["id"]),
        question=str(obj["question"]),
        choices=choices,
        gold=str(obj["gold"]),
        subject=obj.get("subject"),
    )
    item.validate()
    return item


def record_of(item: QaItem) -> dict:
    """Inverse of parse_record; load -> serialize -> load is the identity."""
    rec: dict = {"id": item.id, "question": item.question}
    if item.choices:
        rec["choices"] = [{"letter": let, "text": text} for let, text in item.choices]
    rec["gold"] = item.gold
    if item.subject is not None:
        rec["subject"] = item.subject
    return rec


def load_dataset(path: str | Path, format: str = "mcq") -> Dataset:
    """Load and validate a JSONL dataset, preserving file order.

    ``format`` is 'mcq' or 'open'; it is checked against each record's shape.
    """
    if format not in ("mcq", "open"):
        raise DatasetError(f"unknown format {format!r}")
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    items: list[QaItem] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                item = parse_record(obj)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if item.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {item.id!r}")
            if format == "mcq" and not item.is_multiple_choice:
                raise DatasetError(
                    f"{path}:{lineno}: item {item.id!r} has no choices in mcq file"
                )
            if format == "open" and item.is_multiple_choice:
                raise DatasetError(
                    f"{path}:{lineno}: item {item.id!r} has choices in open-answer file"
                )
            seen.add(item.id)
            items.append(item)
    logger.info("loaded %d items from %s", len(items), path)
    return Dataset(items)


def save_dataset(dataset: Dataset | Iterable[QaItem], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for item in dataset:
            fh.write(json.dumps(record_of(item), ensure_ascii=False) + "\n")


def split(dataset: Dataset, spec: SplitSpec) -> dict[str, Dataset]:
    """Partition into calibration/validation/test via a seeded shuffle.

    Deterministic given (dataset order, seed); splits are disjoint by id.
    """
    n_needed = spec.calibration + spec.validation + spec.test
    if n_needed > len(dataset):
        raise DatasetError(
            f"split asks for {n_needed} items but dataset has {len(dataset)}"
        )
    order = list(range(len(dataset)))
    random.Random(spec.seed).shuffle(order)
    picks = [dataset[i] for i in order]
    cal = picks[: spec.calibration]
    val = picks[spec.calibration : spec.calibration + spec.validation]
    test = picks[spec.calibration + spec.validation : n_needed]
    return {
        "calibration": Dataset(cal),
        "validation": Dataset(val),
        "test": Dataset(test),
    }
