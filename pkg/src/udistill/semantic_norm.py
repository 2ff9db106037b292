"""Answer extraction and semantic clustering of sampled generations.

Multiple-choice answers normalize to a canonical letter by stripping markup,
punctuation, and case. Open answers cluster greedily through an equivalence
judge: each answer is compared first against the gold answer, then against
existing cluster representatives in creation order; the first match wins.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import string
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import prompts
from .model_client import GenParams, ModelClientError
from .qa_dataset import QaItem

logger = logging.getLogger(__name__)

_TAG_RES = {
    name: re.compile(rf"<{name}>(.*?)</{name}>", re.DOTALL | re.IGNORECASE)
    for name in ("answer", "reasoning", "confidence")
}

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

JUDGE_ATTEMPTS = 3


class ClusteringError(Exception):
    """Clustering had to abort for an item (e.g. judge transport failure)."""


@dataclass(frozen=True)
class ExtractedAnswer:
    raw_text: str
    answer_span: str | None = None  # None == absent/malformed
    reasoning_span: str | None = None
    confidence_span: str | None = None


@dataclass
class SemanticCluster:
    cluster_id: int
    canonical_key: str
    representative: str  # full generation text of one member
    member_indices: list[int]
    matches_gold: bool = False

    @property
    def count(self) -> int:
        return len(self.member_indices)


def extract_answer(text: str) -> ExtractedAnswer:
    """Pull the last well-formed answer/reasoning/confidence spans out of a generation."""
    lower = text.lower()
    spans: dict[str, str | None] = {}
    for name, pattern in _TAG_RES.items():
        # Substring guard: regex scans only when the closing tag can exist.
        if f"</{name}>" not in lower:
            spans[name] = None
            continue
        matches = pattern.findall(text)
        spans[name] = matches[-1].strip() if matches else None
    return ExtractedAnswer(
        raw_text=text,
        answer_span=spans["answer"],
        reasoning_span=spans["reasoning"],
        confidence_span=spans["confidence"],
    )


def normalize_mcq(answer_span: str, choices: tuple[tuple[str, str], ...]) -> str | None:
    """Map an answer span onto a choice letter; None when unmappable.

    A leading standalone choice letter wins ("C) 42" -> C); otherwise the
    cleaned span must match a choice body in full ("42" -> C when choice C
    reads "42").
    """
    if not choices:
        raise ValueError("normalize_mcq needs a nonempty choice list")
    cleaned = answer_span.strip().lower()
    letters = {letter.lower(): letter for letter, _ in choices}
    # Leading letter followed by punctuation/whitespace or end of span.
    m = re.match(r"^\s*([a-j])(?=$|[\s).:\-,\]])", cleaned)
    if m and m.group(1) in letters:
        return letters[m.group(1)]
    flat = cleaned.translate(_PUNCT_TABLE).strip()
    if flat in letters:
        return letters[flat]
    for letter, text in choices:
        if flat == text.strip().lower().translate(_PUNCT_TABLE).strip():
            return letter
    return None


# ---------------------------------------------------------------------------
# Equivalence judging


def _pair_key(question: str, a: str, b: str) -> tuple[str, str, str]:
    qh = hashlib.blake2b(question.encode("utf-8"), digest_size=8).hexdigest()
    lo, hi = (a, b) if a <= b else (b, a)
    return (qh, lo, hi)


class EquivalenceJudge:
    """Decides whether two answers to a question are semantically equivalent.

    Backends: ``exact`` (string equality after whitespace strip) and
    ``remote_judge`` (a model endpoint answering the equivalent/contradictory
    question). Verdicts are cached, symmetric in (a, b), and optionally
    persisted as JSONL.
    """

    def __init__(
        self,
        backend: str = "exact",
        client=None,
        params: GenParams | None = None,
        cache_path: str | Path | None = None,
        ask: Callable[[str], str] | None = None,
    ):
        if backend not in ("exact", "remote_judge"):
            raise ValueError(f"unknown judge backend {backend!r}")
        if backend == "remote_judge" and client is None and ask is None:
            raise ValueError("remote_judge needs a client or an ask function")
        self.backend = backend
        self.client = client
        self.params = params or GenParams(temperature=0.0, max_tokens=16)
        self.cache_path = Path(cache_path) if cache_path else None
        self._ask = ask
        self._cache: dict[tuple[str, str, str], bool] = {}
        self._lock = threading.Lock()
        if self.cache_path and self.cache_path.exists():
            self._load_cache()

    @classmethod
    def exact(cls) -> "EquivalenceJudge":
        return cls(backend="exact")

    @classmethod
    def remote(cls, client, cache_path: str | Path | None = None, **kw) -> "EquivalenceJudge":
        return cls(backend="remote_judge", client=client, cache_path=cache_path, **kw)

    def gold_anchor(self, gold: str) -> str:
        """Comparison text for the gold answer. The remote judge sees a
        rendered sentence; exact matching compares the bare answer."""
        if self.backend == "remote_judge":
            return prompts.GOLD_ANCHOR_TEMPLATE.format(gold=gold)
        return gold

    def equivalent(self, question: str, a: str, b: str) -> bool:
        if a == b:
            return True
        if self.backend == "exact":
            return a.strip() == b.strip()
        key = _pair_key(question, a, b)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        verdict = self._query(question, a, b)
        with self._lock:
            self._cache[key] = verdict
        if self.cache_path:
            self._append_cache(key, verdict)
        return verdict

    def _query(self, question: str, a: str, b: str) -> bool:
        prompt = prompts.build_judge_prompt(question, a, b)
        for _ in range(JUDGE_ATTEMPTS):
            reply = self._send(prompt)
            verdict = self._parse_reply(reply)
            if verdict is not None:
                return verdict
        logger.warning(
            "judge reply unparseable after %d attempts for %r vs %r; treating as not equivalent",
            JUDGE_ATTEMPTS, a[:40], b[:40],
        )
        return False

    def _send(self, prompt: str) -> str:
        if self._ask is not None:
            return self._ask(prompt)
        return self.client.generate(prompt, self.params).text

    @staticmethod
    def _parse_reply(reply: str) -> bool | None:
        word = reply.strip().strip(".!'\"").lower()
        if word == "equivalent":
            return True
        if word == "contradictory":
            return False
        return None

    def _load_cache(self) -> None:
        with self.cache_path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                key = (rec["question_hash"], rec["a"], rec["b"])
                self._cache[key] = bool(rec["verdict"])

    def _append_cache(self, key: tuple[str, str, str], verdict: bool) -> None:
        rec = {"question_hash": key[0], "a": key[1], "b": key[2], "verdict": verdict}
        with self._lock:
            self.cache_path.parent.mkdir(parents=True, exist_ok=True)
            with self.cache_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def judge_equivalence(question: str, a: str, b: str, judge: EquivalenceJudge) -> bool:
    return judge.equivalent(question, a, b)


# ---------------------------------------------------------------------------
# Clustering


@dataclass
class _Bucket:
    key: str
    anchor: str  # text new candidates are compared against (open answers)
    members: list[int] = field(default_factory=list)
    matches_gold: bool = False


def cluster_samples(
    samples,
    item: QaItem,
    judge: EquivalenceJudge | None = None,
    seed: int = 0,
    drop_absent: bool = False,
) -> list[SemanticCluster]:
    """Partition one item's generations into semantic clusters.

    ``samples`` is a SampleSet or a plain list of generation texts.
    Generations without an extractable answer span become singleton clusters
    (they dilute the frequencies of real answers) unless ``drop_absent``.
    At most one cluster carries matches_gold.
    """
    if hasattr(samples, "generations"):
        generations = [g.text for g in samples.generations if not g.failed]
    else:
        generations = [t if isinstance(t, str) else t.text for t in samples]
    judge = judge or EquivalenceJudge.exact()
    extracted = [extract_answer(text) for text in generations]

    if item.is_multiple_choice:
        buckets = _cluster_mcq(extracted, item)
    else:
        buckets = _cluster_open(extracted, item, judge)

    absent_buckets: list[_Bucket] = []
    if not drop_absent:
        for idx, ext in enumerate(extracted):
            if ext.answer_span is None:
                absent_buckets.append(_Bucket(key=f"<absent:{idx}>", anchor="", members=[idx]))

    rng = random.Random(seed)
    clusters: list[SemanticCluster] = []
    for cid, bucket in enumerate(buckets + absent_buckets):
        rep_idx = rng.choice(bucket.members)
        clusters.append(
            SemanticCluster(
                cluster_id=cid,
                canonical_key=bucket.key,
                representative=generations[rep_idx],
                member_indices=list(bucket.members),
                matches_gold=bucket.matches_gold,
            )
        )
    return clusters


def _cluster_mcq(extracted: list[ExtractedAnswer], item: QaItem) -> list[_Bucket]:
    buckets: dict[str, _Bucket] = {}
    order: list[str] = []
    for idx, ext in enumerate(extracted):
        if ext.answer_span is None:
            continue
        letter = normalize_mcq(ext.answer_span, item.choices)
        if letter is not None:
            key = letter
            gold = letter == item.gold
        else:
            # Unmapped spans cluster by their normalized text, away from real letters.
            key = "<unmapped:" + ext.answer_span.strip().lower() + ">"
            gold = False
        if key not in buckets:
            buckets[key] = _Bucket(key=key, anchor="", matches_gold=gold)
            order.append(key)
        buckets[key].members.append(idx)
    return [buckets[k] for k in order]


def _cluster_open(
    extracted: list[ExtractedAnswer], item: QaItem, judge: EquivalenceJudge
) -> list[_Bucket]:
    gold_anchor = judge.gold_anchor(item.gold)
    gold_bucket: _Bucket | None = None
    others: list[_Bucket] = []
    try:
        for idx, ext in enumerate(extracted):
            answer = ext.answer_span
            if answer is None:
                continue
            if judge.equivalent(item.question, answer, gold_anchor):
                if gold_bucket is None:
                    gold_bucket = _Bucket(key=answer, anchor=answer, matches_gold=True)
                gold_bucket.members.append(idx)
                continue
            placed = False
            for bucket in others:
                if judge.equivalent(item.question, answer, bucket.anchor):
                    bucket.members.append(idx)
                    placed = True
                    break
            if not placed:
                others.append(_Bucket(key=answer, anchor=answer, members=[idx]))
    except ModelClientError as exc:
        raise ClusteringError(f"judge failed while clustering item {item.id!r}: {exc}") from exc
    buckets = others if gold_bucket is None else [gold_bucket] + others
    return buckets
