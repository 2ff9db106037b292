"""Self-annotation: calibrated probabilities become verbalized confidence bins,
and sampled answers become supervised fine-tuning targets.

Per item, the correct cluster (when sampled) yields one training example and
the top-K incorrect clusters by frequency yield K more; each target carries
the representative's reasoning and answer plus a confidence label chosen by
binning the calibrated probability.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from . import calibrator, prompts
from .calibrator import CalibrationMap, ScoredPrediction
from .qa_dataset import QaItem
from .semantic_norm import extract_answer

logger = logging.getLogger(__name__)

DEFAULT_LABELS = ("very low", "low", "medium", "high", "very high")


class AnnotationError(Exception):
    pass


@dataclass(frozen=True)
class BinningScheme:
    """Fixed-width probability bins over [0, 1] with one verbal label each."""

    n_bins: int = 5
    labels: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self) -> None:
        if self.n_bins < 2:
            raise ValueError("need at least 2 bins")
        if len(self.labels) != self.n_bins:
            raise ValueError(f"{len(self.labels)} labels for {self.n_bins} bins")
        if len(set(lbl.lower() for lbl in self.labels)) != self.n_bins:
            raise ValueError("labels must be distinct")

    @property
    def edges(self) -> tuple[float, ...]:
        return tuple(i / self.n_bins for i in range(self.n_bins + 1))

    def label_of(self, bin_index: int) -> str:
        return self.labels[bin_index - 1]

    @classmethod
    def percentages(cls, n_bins: int = 5) -> "BinningScheme":
        """Numeric-percentage labels at bin centers, e.g. '90%' for the top of 5."""
        labels = tuple(f"{round(100 * (2 * b + 1) / (2 * n_bins))}%" for b in range(n_bins))
        return cls(n_bins=n_bins, labels=labels)

    def to_record(self) -> dict:
        return {"n_bins": self.n_bins, "labels": list(self.labels)}

    @classmethod
    def from_record(cls, rec: dict) -> "BinningScheme":
        return cls(n_bins=rec["n_bins"], labels=tuple(rec["labels"]))


@dataclass(frozen=True)
class AugmentPolicy:
    """How the incorrect answers enter the tuning data.

    ``max_incorrect_per_question`` is the K of the augmentation hyperparameter:
    the K most frequent wrong clusters contribute low-confidence examples.
    """

    max_incorrect_per_question: int = 1
    include_correct: bool = True
    keep_items_without_correct: bool = True

    def __post_init__(self) -> None:
        if self.max_incorrect_per_question < 0:
            raise ValueError("max_incorrect_per_question must be >= 0")

    def to_record(self) -> dict:
        return {
            "max_incorrect_per_question": self.max_incorrect_per_question,
            "include_correct": self.include_correct,
            "keep_items_without_correct": self.keep_items_without_correct,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AugmentPolicy":
        return cls(**rec)


@dataclass(frozen=True)
class AnnotatedExample:
    item_id: str
    prompt: str
    target: str
    is_correct: bool
    source_bin: int
    calibrated_p: float

    def to_record(self) -> dict:
        return {
            "item_id": self.item_id,
            "prompt": self.prompt,
            "target": self.target,
            "is_correct": self.is_correct,
            "source_bin": self.source_bin,
            "calibrated_p": self.calibrated_p,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AnnotatedExample":
        return cls(**rec)


def bin_of(p: float, scheme: BinningScheme) -> int:
    """1-based bin index; bins are left-closed, the last one right-closed."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    edges = scheme.edges
    for i in range(scheme.n_bins - 1):
        if edges[i] <= p < edges[i + 1]:
            return i + 1
    return scheme.n_bins


def augment_instruction(prompt: str) -> str:
    """Append the confidence request to a prompt, exactly once."""
    marker = prompts.CONFIDENCE_INSTRUCTION.rstrip(".")
    if marker in prompt:
        return prompt
    if not prompt:
        return prompts.CONFIDENCE_INSTRUCTION
    return f"{prompt} {prompts.CONFIDENCE_INSTRUCTION}"


def render_target(representative: str, label: str, style: str = "tags") -> str:
    """Build the training target from a cluster representative and a label.

    Keeps the representative's reasoning and answer spans verbatim. The
    default appends the confidence inside tags; style='prose' appends the
    parenthetical "(with LABEL confidence)" form instead.
    """
    if style not in ("tags", "prose"):
        raise ValueError(f"unknown target style {style!r}")
    ext = extract_answer(representative)
    if ext.answer_span is None:
        raise AnnotationError("representative has no extractable answer span")
    parts = []
    if ext.reasoning_span is not None:
        parts.append(f"<reasoning> {ext.reasoning_span} </reasoning>")
    parts.append(f"<answer> {ext.answer_span} </answer>")
    if style == "prose":
        parts.append(f"(with {label} confidence)")
    else:
        parts.append(f"<confidence> {label} </confidence>")
    return " ".join(parts)


def build_sft_dataset(
    scored: Iterable[ScoredPrediction],
    items: Mapping[str, QaItem],
    map: CalibrationMap,
    scheme: BinningScheme | None = None,
    policy: AugmentPolicy | None = None,
    seed: int = 0,
    target_style: str = "tags",
) -> list[AnnotatedExample]:
    """Select clusters per item, bin their calibrated probabilities, and emit
    annotated training examples in a deterministic shuffled order."""
    scheme = scheme or BinningScheme()
    policy = policy or AugmentPolicy()

    by_item: dict[str, list[ScoredPrediction]] = {}
    for s in scored:
        # Clusters without an extractable answer cannot become targets and
        # must not consume a top-K slot.
        if extract_answer(s.text).answer_span is None:
            logger.info("item %s cluster %r has no answer span; ignored", s.item_id, s.cluster_key)
            continue
        by_item.setdefault(s.item_id, []).append(s)

    examples: list[AnnotatedExample] = []
    for item_id in sorted(by_item):
        item = items.get(item_id)
        if item is None:
            raise AnnotationError(f"no QaItem for scored predictions of {item_id!r}")
        preds = sorted(by_item[item_id], key=lambda s: -s.f)
        correct = [s for s in preds if s.correct]
        incorrect = [s for s in preds if not s.correct]

        chosen: list[ScoredPrediction] = []
        if policy.include_correct and correct:
            chosen.append(correct[0])
        if not correct and not policy.keep_items_without_correct:
            logger.info("item %s: correct answer never sampled; skipped", item_id)
            continue
        chosen.extend(incorrect[: policy.max_incorrect_per_question])
        if not chosen:
            logger.info("item %s contributed no examples", item_id)
            continue

        prompt = augment_instruction(prompts.build_sampling_prompt(item))
        for s in chosen:
            p = calibrator.apply(map, s.f)
            b = bin_of(p, scheme)
            target = render_target(s.text, scheme.label_of(b), style=target_style)
            examples.append(
                AnnotatedExample(
                    item_id=item_id,
                    prompt=prompt,
                    target=target,
                    is_correct=bool(s.correct),
                    source_bin=b,
                    calibrated_p=p,
                )
            )

    random.Random(seed).shuffle(examples)
    return examples


def emit_sft_jsonl(examples: list[AnnotatedExample], path: str | Path) -> Path:
    """Write the tuning file: one {"messages": [...]} object per line."""
    if not examples:
        raise AnnotationError("refusing to emit an empty tuning file")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {
                "messages": [
                    {"role": "user", "content": ex.prompt},
                    {"role": "model", "content": ex.target},
                ]
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return path
