"""Synthetic datasets and mock-model specs with known ground truth.

The central construction pairs every item with a categorical answer
distribution and draws the gold label so that an answer carrying probability
mass m is correct with probability pi(m), for a chosen monotone distortion
pi. That makes pi the quantity a calibrator fitted on sampled frequencies
should recover, which is exactly how the recovery experiments check it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .annotator import AnnotatedExample, BinningScheme
from .model_client import Distortion, MockItem, MockModelSpec
from .qa_dataset import Dataset, QaItem

ID_PATTERN = r"\[(item-\d+)\]"

_REASONING_TEMPLATES = [
    "Comparing the options against the probe constraints.",
    "The tabulated reference rules the others out.",
    "Direct lookup settles this one.",
]


@dataclass(frozen=True)
class ItemTruth:
    """What the corpus builder knows about one item."""

    item_id: str
    masses: dict[str, float]  # letter -> true sampling probability
    gold: str
    modal_letter: str

    @property
    def modal_mass(self) -> float:
        return self.masses[self.modal_letter]

    @property
    def modal_is_gold(self) -> bool:
        return self.modal_letter == self.gold


def _question(item_id: str) -> str:
    return f"Which option is the designated answer for probe [{item_id}]?"


def _choices(letters: str) -> tuple[tuple[str, str], ...]:
    return tuple((letter, f"option {letter}") for letter in letters)


def _answer_text(letter: str) -> str:
    return f"<answer> {letter} </answer>"


def make_distortion_corpus(
    n_items: int,
    distortion: Distortion | str = "identity",
    seed: int = 0,
    modal_range: tuple[float, float] = (0.5, 0.95),
    with_reasoning: bool = True,
) -> tuple[Dataset, MockModelSpec, list[ItemTruth]]:
    """Two-answer items whose gold assignment realizes the distortion pi.

    Each item samples letters A and B with masses (q, 1-q). Gold is A with
    probability pi(q), B with probability pi(1-q), and otherwise the never-
    sampled letter C, so every sampled cluster with mass m is correct with
    probability exactly pi(m). Requires pi(q) + pi(1-q) <= 1.
    """
    if isinstance(distortion, str):
        distortion = Distortion(distortion)
    rng = random.Random(seed)
    items: list[QaItem] = []
    mock_items: dict[str, MockItem] = {}
    truths: list[ItemTruth] = []
    lo, hi = modal_range
    for i in range(n_items):
        item_id = f"item-{i:05d}"
        q = rng.uniform(lo, hi)
        pa, pb = distortion(q), distortion(1 - q)
        if pa + pb > 1 + 1e-9:
            raise ValueError(
                f"distortion {distortion.name} infeasible for two-answer items: "
                f"pi({q:.3f}) + pi({1 - q:.3f}) = {pa + pb:.3f} > 1"
            )
        u = rng.random()
        if u < pa:
            gold = "A"
        elif u < pa + pb:
            gold = "B"
        else:
            gold = "C"
        masses = {"A": q, "B": 1 - q}
        modal = "A" if q >= 0.5 else "B"
        items.append(
            QaItem(id=item_id, question=_question(item_id), choices=_choices("ABC"), gold=gold)
        )
        mock_items[item_id] = MockItem(
            id=item_id,
            question=_question(item_id),
            answers=[(_answer_text("A"), q), (_answer_text("B"), 1 - q)],
        )
        truths.append(ItemTruth(item_id=item_id, masses=masses, gold=gold, modal_letter=modal))
    spec = MockModelSpec(
        items=mock_items,
        distortion=distortion,
        reasoning_templates=list(_REASONING_TEMPLATES) if with_reasoning else [],
        id_pattern=ID_PATTERN,
    )
    return Dataset(items), spec, truths


def make_multi_cluster_corpus(
    n_items: int,
    masses: tuple[float, ...] = (0.3, 0.25, 0.2, 0.15, 0.1),
) -> tuple[Dataset, MockModelSpec, list[ItemTruth]]:
    """Items with one answer per choice letter; gold is always the modal one.

    With every mass comfortably above zero, a few hundred samples surface
    all clusters, which pins down the augmentation-size law exactly.
    """
    letters = "ABCDEFGHIJ"[: len(masses)]
    items: list[QaItem] = []
    mock_items: dict[str, MockItem] = {}
    truths: list[ItemTruth] = []
    for i in range(n_items):
        item_id = f"item-{i:05d}"
        items.append(
            QaItem(
                id=item_id,
                question=_question(item_id),
                choices=_choices(letters),
                gold=letters[0],
            )
        )
        mock_items[item_id] = MockItem(
            id=item_id,
            question=_question(item_id),
            answers=[(_answer_text(lt), m) for lt, m in zip(letters, masses)],
        )
        truths.append(
            ItemTruth(
                item_id=item_id,
                masses=dict(zip(letters, masses)),
                gold=letters[0],
                modal_letter=letters[0],
            )
        )
    spec = MockModelSpec(items=mock_items, id_pattern=ID_PATTERN)
    return Dataset(items), spec, truths


def make_entropy_corpus(
    n_items: int, seed: int = 0
) -> tuple[Dataset, MockModelSpec, list[ItemTruth]]:
    """Cluster dispersion predicts wrongness: half the items concentrate on
    the gold answer, half spread uniformly over four wrong answers."""
    rng = random.Random(seed)
    items: list[QaItem] = []
    mock_items: dict[str, MockItem] = {}
    truths: list[ItemTruth] = []
    for i in range(n_items):
        item_id = f"item-{i:05d}"
        confident = rng.random() < 0.5
        if confident:
            gold = "A"
            answers = [(_answer_text("A"), 0.9), (_answer_text("B"), 0.1)]
            masses = {"A": 0.9, "B": 0.1}
            modal = "A"
        else:
            gold = "E"
            answers = [(_answer_text(lt), 0.25) for lt in "ABCD"]
            masses = {lt: 0.25 for lt in "ABCD"}
            modal = "A"
        items.append(
            QaItem(id=item_id, question=_question(item_id), choices=_choices("ABCDE"), gold=gold)
        )
        mock_items[item_id] = MockItem(id=item_id, question=_question(item_id), answers=answers)
        truths.append(ItemTruth(item_id=item_id, masses=masses, gold=gold, modal_letter=modal))
    spec = MockModelSpec(items=mock_items, id_pattern=ID_PATTERN)
    return Dataset(items), spec, truths


def make_null_confidence_corpus(
    n_items: int,
    seed: int = 0,
    scheme: BinningScheme | None = None,
    untagged_fraction: float = 0.0,
) -> tuple[Dataset, MockModelSpec, list[ItemTruth]]:
    """Deterministic single responses whose confidence labels are independent
    of correctness; the prompting baseline should score AUROC about 0.5.

    The first round(untagged_fraction * n_items) items omit the confidence
    tag entirely, fixing the unparsed rate by construction.
    """
    scheme = scheme or BinningScheme()
    rng = random.Random(seed)
    n_untagged = round(untagged_fraction * n_items)
    items: list[QaItem] = []
    mock_items: dict[str, MockItem] = {}
    truths: list[ItemTruth] = []
    for i in range(n_items):
        item_id = f"item-{i:05d}"
        correct = rng.random() < 0.5
        answer_letter = "A" if correct else "B"
        label = rng.choice(scheme.labels)
        text = _answer_text(answer_letter)
        if i >= n_untagged:
            text = f"{text} <confidence> {label} </confidence>"
        items.append(
            QaItem(id=item_id, question=_question(item_id), choices=_choices("AB"), gold="A")
        )
        mock_items[item_id] = MockItem(
            id=item_id, question=_question(item_id), answers=[(text, 1.0)]
        )
        truths.append(
            ItemTruth(
                item_id=item_id,
                masses={answer_letter: 1.0},
                gold="A",
                modal_letter=answer_letter,
            )
        )
    spec = MockModelSpec(items=mock_items, id_pattern=ID_PATTERN)
    return Dataset(items), spec, truths


def make_lexical_corpus(
    n_items: int, seed: int = 0
) -> tuple[Dataset, MockModelSpec, list[ItemTruth]]:
    """Deterministic answers with scripted per-item token probabilities."""
    rng = random.Random(seed)
    items: list[QaItem] = []
    mock_items: dict[str, MockItem] = {}
    truths: list[ItemTruth] = []
    for i in range(n_items):
        item_id = f"item-{i:05d}"
        correct = rng.random() < 0.5
        answer_letter = "A" if correct else "B"
        # Correct answers tend toward higher token probability, with overlap.
        base = rng.uniform(0.45, 0.95) if correct else rng.uniform(0.1, 0.7)
        items.append(
            QaItem(id=item_id, question=_question(item_id), choices=_choices("AB"), gold="A")
        )
        mock_items[item_id] = MockItem(
            id=item_id,
            question=_question(item_id),
            answers=[(_answer_text(answer_letter), 1.0)],
            token_prob=base,
        )
        truths.append(
            ItemTruth(
                item_id=item_id,
                masses={answer_letter: 1.0},
                gold="A",
                modal_letter=answer_letter,
            )
        )
    spec = MockModelSpec(items=mock_items, id_pattern=ID_PATTERN)
    return Dataset(items), spec, truths


def echo_spec_from_examples(
    examples: list[AnnotatedExample],
    base_spec: MockModelSpec,
    pick: str = "modal",
) -> MockModelSpec:
    """Build the fine-tuned-model stand-in: replay one annotated target per item.

    ``modal`` picks the highest-probability cluster's example (what the tuned
    model would most plausibly produce); ``correct`` picks the correct one.
    """
    best: dict[str, AnnotatedExample] = {}
    for ex in examples:
        cur = best.get(ex.item_id)
        if pick == "correct":
            better = cur is None or (ex.is_correct and not cur.is_correct)
        else:
            better = cur is None or ex.calibrated_p > cur.calibrated_p
        if better:
            best[ex.item_id] = ex
    return MockModelSpec(
        items=dict(base_spec.items),
        distortion=base_spec.distortion,
        echo={item_id: ex.target for item_id, ex in best.items()},
        supports_logprobs=base_spec.supports_logprobs,
        id_pattern=base_spec.id_pattern,
    )
