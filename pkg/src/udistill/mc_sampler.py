"""Monte Carlo sample collection with durable caching, and frequency tables.

Sampling dominates the cost of the whole pipeline, so every successful draw
is appended to an on-disk cache keyed by backend fingerprint and item id;
reruns only top up the shortfall. Frequencies are computed over the draws
that actually succeeded, keeping each table a proper distribution.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from . import prompts
from .model_client import BatchError, GenParams, Generation, ModelClientError, generate_batch
from .qa_dataset import QaItem
from .semantic_norm import SemanticCluster

logger = logging.getLogger(__name__)


class CacheError(Exception):
    """Unreadable or inconsistent cache content."""


class ItemSamplingError(Exception):
    """More than half of an item's draws failed; the item is marked failed."""


@dataclass
class SampleSet:
    item_id: str
    n_requested: int
    generations: list[Generation]
    params: GenParams
    backend_fingerprint: str
    created_at: str = ""
    n_failures: int = 0

    @property
    def n_effective(self) -> int:
        return len(self.generations)


@dataclass
class FrequencyTable:
    """Per-item relative frequencies over semantic clusters (descending count)."""

    item_id: str
    entries: list[dict] = field(default_factory=list)
    n_effective: int = 0

    def frequencies(self) -> list[float]:
        return [e["f"] for e in self.entries]

    def to_record(self) -> dict:
        return {
            "item_id": self.item_id,
            "n_effective": self.n_effective,
            "entries": self.entries,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FrequencyTable":
        return cls(
            item_id=rec["item_id"],
            entries=list(rec["entries"]),
            n_effective=rec["n_effective"],
        )


def prompt_template_hash() -> str:
    """Version stamp for the prompt templates baked into this package."""
    text = prompts.SAMPLING_INSTRUCTION + prompts.OPEN_SAMPLING_INSTRUCTION
    return hashlib.blake2b(text.encode("utf-8"), digest_size=4).hexdigest()


def backend_fingerprint(client, params: GenParams) -> str:
    """Identifies (model, prompt-template version, temperature) for cache keys."""
    temp = f"{params.temperature:g}"
    return f"{client.fingerprint}-{prompt_template_hash()}-t{temp}"


class SampleCache:
    """Append-only JSONL store: <root>/<backend_fingerprint>/<item_id>.jsonl."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, fingerprint: str, item_id: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in item_id)
        return self.root / fingerprint / f"{safe}.jsonl"

    def load(self, fingerprint: str, item_id: str) -> list[tuple[int, Generation]]:
        path = self._path(fingerprint, item_id)
        if not path.exists():
            return []
        draws: list[tuple[int, Generation]] = []
        seen: set[int] = set()
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    idx = int(rec["draw"])
                    gen = Generation.from_record(rec["gen"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise CacheError(f"{path}:{lineno}: corrupt cache entry: {exc}") from exc
                if idx in seen:
                    raise CacheError(f"{path}:{lineno}: duplicate draw index {idx}")
                seen.add(idx)
                draws.append((idx, gen))
        draws.sort(key=lambda d: d[0])
        return draws

    def append(self, fingerprint: str, item_id: str, draws: list[tuple[int, Generation]]) -> None:
        path = self._path(fingerprint, item_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            for idx, gen in draws:
                fh.write(json.dumps({"draw": idx, "gen": gen.to_record()}) + "\n")


def sample_n(
    item: QaItem,
    n: int,
    params: GenParams,
    client,
    cache: SampleCache | None = None,
    prompt_builder: Callable[[QaItem], str] = prompts.build_sampling_prompt,
    parallelism: int = 1,
) -> SampleSet:
    """Collect n generations for one item, reusing cached draws first.

    Draw i runs with seed base_seed + i so batches are order-independent;
    with parallelism > 1 the shortfall fans out through generate_batch.
    Each draw index is attempted once: failures are excluded, not retried,
    so n_effective can fall below n. More than 50% failures raises
    ItemSamplingError.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    fingerprint = backend_fingerprint(client, params)
    prompt = prompt_builder(item)
    base_seed = params.seed or 0

    cached: list[tuple[int, Generation]] = []
    if cache is not None:
        cached = cache.load(fingerprint, item.id)
    kept = [gen for _, gen in cached[:n]]
    next_draw = (max((idx for idx, _ in cached), default=-1) + 1) if cached else 0
    draws = range(next_draw, next_draw + max(0, n - len(kept)))

    fresh: list[tuple[int, Generation]] = []
    failures = 0
    aborted = False
    if parallelism > 1 and len(draws) > 1:
        per_draw = [replace(params, seed=base_seed + d) for d in draws]
        try:
            gens = generate_batch(client, [prompt] * len(draws), per_draw, parallelism)
        except BatchError as exc:
            raise ItemSamplingError(f"item {item.id!r}: every draw failed: {exc}") from exc
        for draw, gen in zip(draws, gens):
            if gen.failed:
                failures += 1
            else:
                fresh.append((draw, gen))
        aborted = failures > n / 2
    else:
        base_params = replace(params, seed=base_seed)
        for draw in draws:
            try:
                gen = client.generate(prompt, base_params, draw=draw)
            except ModelClientError as exc:
                logger.warning("item %s draw %d failed: %s", item.id, draw, exc)
                failures += 1
            else:
                if gen.failed:
                    failures += 1
                else:
                    fresh.append((draw, gen))
            if failures > n / 2:
                aborted = True
                break

    if cache is not None and fresh:
        cache.append(fingerprint, item.id, fresh)
    if aborted:
        raise ItemSamplingError(f"item {item.id!r}: {failures} of {n} draws failed")

    generations = kept + [gen for _, gen in fresh]
    return SampleSet(
        item_id=item.id,
        n_requested=n,
        generations=generations,
        params=params,
        backend_fingerprint=fingerprint,
        created_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        n_failures=failures,
    )


def relative_frequencies(
    clusters: list[SemanticCluster], n_effective: int, item_id: str = ""
) -> FrequencyTable:
    """Turn cluster counts into the relative-frequency table f = count / N."""
    if n_effective <= 0:
        raise ValueError("n_effective must be positive")
    total = sum(c.count for c in clusters)
    if total != n_effective:
        raise ValueError(
            f"cluster counts sum to {total}, expected n_effective={n_effective}"
        )
    ordered = sorted(clusters, key=lambda c: (-c.count, c.cluster_id))
    entries = [
        {
            "cluster_id": c.cluster_id,
            "cluster_key": c.canonical_key,
            "representative": c.representative,
            "count": c.count,
            "f": c.count / n_effective,
            "matches_gold": c.matches_gold,
        }
        for c in ordered
    ]
    return FrequencyTable(item_id=item_id, entries=entries, n_effective=n_effective)
