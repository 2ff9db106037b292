"""Parsing of verbalized confidences, binned AUROC metrics, and baselines.

AUROC here is the Mann-Whitney statistic with half credit for ties: the
probability that a randomly chosen correct prediction scores above a randomly
chosen incorrect one. Bin indices serve as the scores for verbalized methods,
which makes the metric invariant to the label wording.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import string
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import calibrator as _cal
from . import prompts
from .annotator import BinningScheme, augment_instruction, bin_of
from .mc_sampler import sample_n
from .model_client import GenParams, generate_batch
from .qa_dataset import Dataset, QaItem
from .semantic_norm import EquivalenceJudge, cluster_samples, extract_answer, normalize_mcq

logger = logging.getLogger(__name__)

RELIABILITY_MIN_COUNT = 10  # rows below this are flagged as unplottable

_CONF_STRIP = string.punctuation.replace("%", "")


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class ParsedPrediction:
    item_id: str
    answer_key: str | None  # None == unmapped
    bin: int | None  # None == unparsed confidence
    correct: int
    raw_text: str

    def to_record(self) -> dict:
        return {
            "item_id": self.item_id,
            "answer_key": self.answer_key,
            "bin": self.bin,
            "correct": self.correct,
            "raw_text": self.raw_text,
        }


@dataclass
class EvalReport:
    method: str
    auroc: float | None
    accuracy: float
    high_accuracy: float | None
    high_pct: float
    reliability: list[dict]  # bin, label, count, accuracy, suppressed
    unparsed_rate: float
    predictions: list[ParsedPrediction] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "auroc": self.auroc,
            "accuracy": self.accuracy,
            "high_accuracy": self.high_accuracy,
            "high_pct": self.high_pct,
            "unparsed_rate": self.unparsed_rate,
            "reliability": self.reliability,
            "predictions": [p.to_record() for p in self.predictions],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    def summary_lines(self) -> list[str]:
        def fmt(v):
            return "n/a" if v is None else f"{v:.3f}"

        return [
            f"method          {self.method}",
            f"auroc           {fmt(self.auroc)}",
            f"accuracy        {fmt(self.accuracy)}",
            f"high accuracy   {fmt(self.high_accuracy)}",
            f"high %          {self.high_pct:.1f}",
            f"unparsed rate   {self.unparsed_rate:.3f}",
        ]


def write_reliability_csv(report: EvalReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "label", "count", "accuracy", "suppressed"])
        for row in report.reliability:
            acc = "" if row["accuracy"] is None else f"{row['accuracy']:.6f}"
            writer.writerow([row["bin"], row["label"], row["count"], acc, int(row["suppressed"])])


# ---------------------------------------------------------------------------
# Parsing and scoring


_PROSE_CONF_RE = re.compile(r"\(with\s+(.+?)\s+confidence\)", re.IGNORECASE)


def parse_confidence(text: str, scheme: BinningScheme) -> int | None:
    """Match the last confidence span against the scheme labels; None if unparseable.

    Accepts both the tagged form and the parenthetical prose form.
    """
    ext = extract_answer(text)
    span = ext.confidence_span
    if span is None:
        prose = _PROSE_CONF_RE.findall(text)
        span = prose[-1] if prose else None
    if span is None:
        return None
    word = span.strip().strip(_CONF_STRIP).strip().lower()
    for i, label in enumerate(scheme.labels, start=1):
        if word == label.lower():
            return i
    return None


def _is_correct(item: QaItem, answer_span: str | None, judge: EquivalenceJudge) -> tuple[str | None, int]:
    """Resolve an answer span to a key and score it against gold."""
    if answer_span is None:
        return None, 0
    if item.is_multiple_choice:
        letter = normalize_mcq(answer_span, item.choices)
        return letter, int(letter == item.gold)
    hit = judge.equivalent(item.question, answer_span, judge.gold_anchor(item.gold))
    return answer_span, int(hit)


def parse_prediction(
    item: QaItem, text: str, scheme: BinningScheme, judge: EquivalenceJudge | None = None
) -> ParsedPrediction:
    judge = judge or EquivalenceJudge.exact()
    ext = extract_answer(text)
    key, correct = _is_correct(item, ext.answer_span, judge)
    return ParsedPrediction(
        item_id=item.id,
        answer_key=key,
        bin=parse_confidence(text, scheme),
        correct=correct,
        raw_text=text,
    )


# ---------------------------------------------------------------------------
# Metrics


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC with 0.5 credit for ties.

    Raises EvaluationError when only one class is present (the statistic is
    undefined; no NaN is ever returned).
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must align")
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUROC undefined: only one class present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=float)
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1  # average rank, 1-based
        i = j + 1
    u = float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


def aggregate(preds: list[ParsedPrediction], scheme: BinningScheme, method: str = "ud") -> EvalReport:
    """Fold parsed predictions into the aggregate report.

    Accuracy covers every prediction (unparseable confidences are still
    scored on their answers); AUROC, high-accuracy, and high-% cover only
    the predictions whose confidence parsed.
    """
    if not preds:
        raise EvaluationError("aggregate needs at least one prediction")
    parsed = [p for p in preds if p.bin is not None]
    accuracy = sum(p.correct for p in preds) / len(preds)
    unparsed_rate = 1.0 - len(parsed) / len(preds)

    roc: float | None = None
    if parsed:
        try:
            roc = auroc([p.bin for p in parsed], [p.correct for p in parsed])
        except EvaluationError:
            roc = None

    top_bins = {scheme.n_bins - 1, scheme.n_bins}
    high = [p for p in parsed if p.bin in top_bins]
    high_pct = 100.0 * len(high) / len(parsed) if parsed else 0.0
    high_accuracy = sum(p.correct for p in high) / len(high) if high else None

    reliability = []
    for b in range(1, scheme.n_bins + 1):
        members = [p for p in parsed if p.bin == b]
        acc = sum(p.correct for p in members) / len(members) if members else None
        reliability.append(
            {
                "bin": b,
                "label": scheme.label_of(b),
                "count": len(members),
                "accuracy": acc,
                "suppressed": len(members) < RELIABILITY_MIN_COUNT,
            }
        )

    return EvalReport(
        method=method,
        auroc=roc,
        accuracy=accuracy,
        high_accuracy=high_accuracy,
        high_pct=high_pct,
        reliability=reliability,
        unparsed_rate=unparsed_rate,
        predictions=preds,
    )


# ---------------------------------------------------------------------------
# Range binner for unnormalized baseline scores


@dataclass(frozen=True)
class RangeBinner:
    """Equal-width bins over the [min, max] score range seen on validation."""

    low: float
    high: float
    n_bins: int

    def bin_of(self, score: float) -> int:
        clamped = min(max(score, self.low), self.high)
        frac = (clamped - self.low) / (self.high - self.low)
        return min(self.n_bins, int(frac * self.n_bins) + 1)

    @property
    def edges(self) -> list[float]:
        step = (self.high - self.low) / self.n_bins
        return [self.low + i * step for i in range(self.n_bins + 1)]


def fit_range_binner(validation_scores: Sequence[float], n_bins: int) -> RangeBinner:
    if len(validation_scores) < 2:
        raise EvaluationError("range binner needs at least 2 validation scores")
    low, high = min(validation_scores), max(validation_scores)
    if low == high:
        raise EvaluationError("range binner needs distinct validation scores")
    return RangeBinner(low=float(low), high=float(high), n_bins=n_bins)


# ---------------------------------------------------------------------------
# Evaluation of verbalized-confidence models (tuned model, prompting)


def verbalized_eval(
    items: Dataset | Sequence[QaItem],
    client,
    scheme: BinningScheme | None = None,
    prompt_builder: Callable[[QaItem], str] | None = None,
    method: str = "ud",
    params: GenParams | None = None,
    judge: EquivalenceJudge | None = None,
    parallelism: int = 8,
) -> EvalReport:
    """One generation per item; parse the answer and the confidence label."""
    scheme = scheme or BinningScheme()
    params = params or GenParams(temperature=0.0, max_tokens=256)
    judge = judge or EquivalenceJudge.exact()
    if prompt_builder is None:
        prompt_builder = lambda item: augment_instruction(prompts.build_sampling_prompt(item))
    items = list(items)
    gens = generate_batch(client, [prompt_builder(it) for it in items], params, parallelism)
    preds = [parse_prediction(it, g.text, scheme, judge) for it, g in zip(items, gens)]
    return aggregate(preds, scheme, method=method)


def prompting_baseline(
    items: Dataset | Sequence[QaItem],
    client,
    scheme: BinningScheme | None = None,
    params: GenParams | None = None,
    judge: EquivalenceJudge | None = None,
    parallelism: int = 8,
) -> EvalReport:
    """Ask the base model to verbalize its own confidence, no tuning involved."""
    return verbalized_eval(
        items,
        client,
        scheme=scheme,
        prompt_builder=prompts.build_confidence_prompt,
        method="prompting",
        params=params,
        judge=judge,
        parallelism=parallelism,
    )


# ---------------------------------------------------------------------------
# Lexical baseline


def _answer_token_probs(text: str, token_logprobs: Sequence[tuple[str, float]]) -> list[float]:
    """Probabilities of the tokens overlapping the final answer span."""
    matches = list(re.finditer(r"<answer>(.*?)</answer>", text, re.DOTALL | re.IGNORECASE))
    probs = [math.exp(lp) for _, lp in token_logprobs]
    if not matches:
        return probs
    span = matches[-1].span(1)
    picked: list[float] = []
    pos = 0
    for (tok, _), p in zip(token_logprobs, probs):
        start, end = pos, pos + len(tok)
        pos = end
        if start < span[1] and end > span[0]:
            picked.append(p)
    return picked or probs


def lexical_score(gen, mean_kind: str = "arithmetic") -> float:
    """Average token-level probability of the generated answer."""
    if gen.token_logprobs is None:
        raise EvaluationError("backend returned no token logprobs")
    probs = _answer_token_probs(gen.text, gen.token_logprobs)
    if not probs:
        raise EvaluationError("no tokens to score")
    if mean_kind == "geometric":
        return float(np.exp(np.mean([math.log(max(p, 1e-300)) for p in probs])))
    return float(np.mean(probs))


def lexical_baseline(
    test_items: Dataset | Sequence[QaItem],
    calibration_items: Dataset | Sequence[QaItem],
    client,
    scheme: BinningScheme | None = None,
    params: GenParams | None = None,
    judge: EquivalenceJudge | None = None,
    mean_kind: str = "arithmetic",
    parallelism: int = 8,
) -> EvalReport:
    """Calibrate mean answer-token probability with isotonic regression.

    Greedy-decodes one answer per item. The calibration split fits the map;
    calibrated test scores are binned with the fixed-width scheme.
    """
    if not getattr(client, "supports_logprobs", False):
        raise EvaluationError("lexical baseline needs a backend with token logprobs")
    scheme = scheme or BinningScheme()
    params = params or GenParams(temperature=0.0, max_tokens=256, want_logprobs=True)
    if not params.want_logprobs:
        params = replace(params, want_logprobs=True)
    judge = judge or EquivalenceJudge.exact()

    def decode(items: Sequence[QaItem]) -> list[tuple[QaItem, object]]:
        prompt_list = [prompts.build_sampling_prompt(it) for it in items]
        gens = generate_batch(client, prompt_list, params, parallelism)
        return list(zip(items, gens))

    cal_pairs: list[tuple[float, float]] = []
    for item, gen in decode(list(calibration_items)):
        if gen.failed:
            continue
        score = lexical_score(gen, mean_kind)
        ext = extract_answer(gen.text)
        _, correct = _is_correct(item, ext.answer_span, judge)
        cal_pairs.append((score, float(correct)))
    cal_map = _cal.fit_isotonic(cal_pairs)

    preds: list[ParsedPrediction] = []
    for item, gen in decode(list(test_items)):
        if gen.failed:
            preds.append(ParsedPrediction(item.id, None, None, 0, gen.text))
            continue
        score = lexical_score(gen, mean_kind)
        p = _cal.apply(cal_map, score)
        ext = extract_answer(gen.text)
        key, correct = _is_correct(item, ext.answer_span, judge)
        preds.append(ParsedPrediction(item.id, key, bin_of(p, scheme), correct, gen.text))
    return aggregate(preds, scheme, method="lexical")


# ---------------------------------------------------------------------------
# Semantic entropy baseline


def semantic_entropy(cluster_counts: Sequence[int]) -> float:
    """Shannon entropy (nats) of the cluster frequency distribution."""
    total = sum(cluster_counts)
    if total <= 0:
        raise EvaluationError("semantic entropy needs at least one sample")
    se = 0.0
    for c in cluster_counts:
        if c > 0:
            p = c / total
            se -= p * math.log(p)
    return se


def _entropy_score(
    item: QaItem, client, m: int, params: GenParams, judge: EquivalenceJudge, seed: int
) -> tuple[float, ParsedPrediction | None]:
    """Sample m times; negative entropy is the confidence score, the modal
    cluster representative is the prediction."""
    sset = sample_n(item, m, params, client)
    clusters = cluster_samples(sset, item, judge, seed=seed)
    if not clusters:
        return 0.0, None
    se = semantic_entropy([c.count for c in clusters])
    modal = max(clusters, key=lambda c: (c.count, -c.cluster_id))
    ext = extract_answer(modal.representative)
    key, correct = _is_correct(item, ext.answer_span, judge)
    pred = ParsedPrediction(item.id, key, None, correct, modal.representative)
    return -se, pred


def semantic_entropy_baseline(
    test_items: Dataset | Sequence[QaItem],
    validation_items: Dataset | Sequence[QaItem],
    client,
    m: int = 20,
    scheme: BinningScheme | None = None,
    params: GenParams | None = None,
    judge: EquivalenceJudge | None = None,
    seed: int = 0,
) -> EvalReport:
    """Cluster m samples per item and rank confidence by negative entropy.

    Negative-entropy scores are unnormalized, so bins come from a range
    binner fitted on the validation split.
    """
    if m < 2:
        raise EvaluationError("semantic entropy needs m >= 2 samples")
    scheme = scheme or BinningScheme()
    params = params or GenParams(temperature=1.0, max_tokens=256, seed=seed)
    judge = judge or EquivalenceJudge.exact()

    val_scores: list[float] = []
    for item in validation_items:
        try:
            score, _ = _entropy_score(item, client, m, params, judge, seed)
        except Exception as exc:  # noqa: BLE001 - item-level fault isolation
            logger.warning("semantic entropy skipped validation item %s: %s", item.id, exc)
            continue
        val_scores.append(score)
    binner = fit_range_binner(val_scores, scheme.n_bins)

    preds: list[ParsedPrediction] = []
    for item in test_items:
        try:
            score, pred = _entropy_score(item, client, m, params, judge, seed)
        except Exception as exc:  # noqa: BLE001 - item-level fault isolation
            logger.warning("semantic entropy skipped item %s: %s", item.id, exc)
            continue
        if pred is None:
            logger.warning("semantic entropy: no usable samples for item %s", item.id)
            continue
        preds.append(
            ParsedPrediction(pred.item_id, pred.answer_key, binner.bin_of(score), pred.correct, pred.raw_text)
        )
    return aggregate(preds, scheme, method="semantic_entropy")
