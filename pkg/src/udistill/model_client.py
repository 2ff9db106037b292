"""Generation backends: a remote chat-completions endpoint and a synthetic mock.

Both expose ``generate(prompt, params) -> Generation``. The mock is a pure
function of (item id derived from the prompt, params.seed), which makes every
sampling experiment in the test suite reproducible draw by draw.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

logger = logging.getLogger(__name__)

API_KEY_ENV = "UD_API_KEY"

MAX_ATTEMPTS = 5
BACKOFF_BASE_S = 0.5
BACKOFF_CAP_S = 20.0


class ModelClientError(Exception):
    """Base class for backend failures."""


class TransportError(ModelClientError):
    """Network/HTTP failure that survived the retry policy."""


class UnknownItemError(ModelClientError):
    """The mock could not map a prompt onto a configured item."""


class BatchError(ModelClientError):
    """Every prompt in a batch failed."""


@dataclass(frozen=True)
class GenParams:
    temperature: float = 1.0
    max_tokens: int = 256
    seed: int | None = None  # honored by the mock only
    want_logprobs: bool = False

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass(frozen=True)
class Generation:
    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None = None
    finish_reason: str = "stop"  # stop | length | error

    @property
    def failed(self) -> bool:
        return self.finish_reason == "error"

    def to_record(self) -> dict:
        rec: dict = {"text": self.text, "finish_reason": self.finish_reason}
        if self.token_logprobs is not None:
            rec["token_logprobs"] = [[t, lp] for t, lp in self.token_logprobs]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Generation":
        lps = rec.get("token_logprobs")
        return cls(
            text=rec["text"],
            token_logprobs=tuple((t, lp) for t, lp in lps) if lps is not None else None,
            finish_reason=rec.get("finish_reason", "stop"),
        )


# ---------------------------------------------------------------------------
# Correctness distortion: a named monotone map on [0, 1]


@dataclass(frozen=True)
class Distortion:
    """Monotone map pi on [0,1] relating an answer's sampled mass to P(correct)."""

    name: str
    knots: tuple[tuple[float, float], ...] = ()  # piecewise-linear only

    def __post_init__(self) -> None:
        if self.name not in ("identity", "square", "sqrt", "piecewise"):
            raise ValueError(f"unknown distortion {self.name!r}")
        if self.name == "piecewise":
            if len(self.knots) < 2:
                raise ValueError("piecewise distortion needs >= 2 knots")
            xs = [x for x, _ in self.knots]
            ys = [y for _, y in self.knots]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("piecewise knot x-values must be strictly increasing")
            if any(b < a for a, b in zip(ys, ys[1:])):
                raise ValueError("piecewise distortion must be nondecreasing")
            if self(0.0) < 0 or self(1.0) > 1:
                raise ValueError("distortion must satisfy pi(0) >= 0 and pi(1) <= 1")

    def __call__(self, f: float) -> float:
        if self.name == "identity":
            return f
        if self.name == "square":
            return f * f
        if self.name == "sqrt":
            return f**0.5
        xs = [x for x, _ in self.knots]
        ys = [y for _, y in self.knots]
        if f <= xs[0]:
            return ys[0]
        if f >= xs[-1]:
            return ys[-1]
        for (x0, y0), (x1, y1) in zip(self.knots, self.knots[1:]):
            if x0 <= f <= x1:
                t = (f - x0) / (x1 - x0)
                return y0 + t * (y1 - y0)
        return ys[-1]

    def to_record(self) -> dict:
        rec: dict = {"name": self.name}
        if self.knots:
            rec["knots"] = [[x, y] for x, y in self.knots]
        return rec

    @classmethod
    def from_record(cls, rec: dict | str) -> "Distortion":
        if isinstance(rec, str):
            return cls(rec)
        return cls(rec["name"], tuple((x, y) for x, y in rec.get("knots", ())))


# ---------------------------------------------------------------------------
# Mock model


@dataclass
class MockItem:
    """Per-item categorical answer distribution plus lexical-score knob."""

    id: str
    question: str
    answers: list[tuple[str, float]]  # (full answer text, probability)
    token_prob: float | None = None  # prob assigned to every emitted token

    def validate(self) -> None:
        total = sum(p for _, p in self.answers)
        if self.answers and abs(total - 1.0) > 1e-9:
            raise ValueError(f"mock item {self.id!r}: probabilities sum to {total}")
        if any(p < 0 for _, p in self.answers):
            raise ValueError(f"mock item {self.id!r}: negative probability")


@dataclass
class MockModelSpec:
    """Everything the mock needs to behave like a stochastic QA model.

    ``echo`` maps item ids to a fixed response, simulating the fine-tuned
    model replaying its annotated targets. ``id_pattern`` is an optional
    regex (one capture group) that extracts the item id straight from the
    prompt; without it the mock falls back to matching each item's question
    text inside the prompt.
    """

    items: dict[str, MockItem] = field(default_factory=dict)
    distortion: Distortion = field(default_factory=lambda: Distortion("identity"))
    reasoning_templates: list[str] = field(default_factory=list)
    echo: dict[str, str] = field(default_factory=dict)
    supports_logprobs: bool = True
    default_token_prob: float = 0.9
    id_pattern: str | None = None

    def validate(self) -> None:
        for item in self.items.values():
            item.validate()

    def to_json(self) -> dict:
        return {
            "items": [
                {
                    "id": it.id,
                    "question": it.question,
                    "answers": [{"text": t, "p": p} for t, p in it.answers],
                    **({"token_prob": it.token_prob} if it.token_prob is not None else {}),
                }
                for it in self.items.values()
            ],
            "distortion": self.distortion.to_record(),
            "reasoning_templates": self.reasoning_templates,
            "echo": self.echo,
            "supports_logprobs": self.supports_logprobs,
            "default_token_prob": self.default_token_prob,
            **({"id_pattern": self.id_pattern} if self.id_pattern else {}),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MockModelSpec":
        items = {}
        for rec in obj.get("items", []):
            item = MockItem(
                id=rec["id"],
                question=rec["question"],
                answers=[(a["text"], a["p"]) for a in rec.get("answers", [])],
                token_prob=rec.get("token_prob"),
            )
            items[item.id] = item
        spec = cls(
            items=items,
            distortion=Distortion.from_record(obj.get("distortion", "identity")),
            reasoning_templates=list(obj.get("reasoning_templates", [])),
            echo=dict(obj.get("echo", {})),
            supports_logprobs=obj.get("supports_logprobs", True),
            default_token_prob=obj.get("default_token_prob", 0.9),
            id_pattern=obj.get("id_pattern"),
        )
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "MockModelSpec":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), ensure_ascii=False), encoding="utf-8")


def _stable_seed(*parts: object) -> int:
    key = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


def _draw_randomness(item_id: str, seed: int) -> tuple[float, int]:
    """Counter-mode randomness: a uniform in [0,1) plus an index source.

    Hash-derived so a draw is a pure, process-stable function of its key;
    much cheaper than seeding a Mersenne Twister per draw.
    """
    key = f"{item_id}|{seed}".encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=16).digest()
    u = int.from_bytes(digest[:8], "big") / 2**64
    return u, int.from_bytes(digest[8:], "big")


_TOKEN_RE = re.compile(r"\S+\s*")


def tokenize_with_whitespace(text: str) -> list[str]:
    """Split into tokens that concatenate back to the original text."""
    return _TOKEN_RE.findall(text)


class MockModel:
    """Deterministic synthetic backend.

    Identical (spec, item, params.seed) always yields the identical
    Generation. Thread-safe; the only mutable state is the call counter and
    the prompt-resolution memo.
    """

    def __init__(self, spec: MockModelSpec):
        spec.validate()
        self.spec = spec
        self.call_count = 0
        self._lock = threading.Lock()
        self._prompt_memo: dict[str, str] = {}
        self._id_re = re.compile(spec.id_pattern) if spec.id_pattern else None
        fp = hashlib.blake2b(
            json.dumps(spec.to_json(), sort_keys=True).encode(), digest_size=6
        ).hexdigest()
        self.fingerprint = f"mock-{fp}"
        self.supports_logprobs = spec.supports_logprobs

    def reset_call_count(self) -> None:
        with self._lock:
            self.call_count = 0

    def _resolve_item_id(self, prompt: str) -> str:
        with self._lock:
            cached = self._prompt_memo.get(prompt)
        if cached is not None:
            return cached
        item_id = None
        if self._id_re is not None:
            m = self._id_re.search(prompt)
            if m and m.group(1) in (self.spec.items.keys() | self.spec.echo.keys()):
                item_id = m.group(1)
        if item_id is None:
            # Longest matching question wins, so question prefixes cannot shadow.
            best_len = -1
            for item in self.spec.items.values():
                if len(item.question) > best_len and item.question in prompt:
                    item_id, best_len = item.id, len(item.question)
        if item_id is None:
            raise UnknownItemError(f"mock cannot resolve an item from prompt: {prompt[:120]!r}")
        with self._lock:
            self._prompt_memo[prompt] = item_id
        return item_id

    def generate(self, prompt: str, params: GenParams, draw: int = 0) -> Generation:
        """Pure in (item id, params.seed + draw); ``draw`` is the draw index."""
        with self._lock:
            self.call_count += 1
            item_id = self._prompt_memo.get(prompt)
        if item_id is None:
            item_id = self._resolve_item_id(prompt)
        echoed = self.spec.echo.get(item_id)
        if echoed is not None:
            return self._finish(echoed, item_id, params)
        item = self.spec.items.get(item_id)
        if item is None or not item.answers:
            raise UnknownItemError(f"mock has no distribution for item {item_id!r}")
        u, idx_bits = _draw_randomness(item_id, (params.seed or 0) + draw)
        if params.temperature == 0:
            answer = max(item.answers, key=lambda a: a[1])[0]
        else:
            acc = 0.0
            answer = item.answers[-1][0]
            for text, p in item.answers:
                acc += p
                if u < acc:
                    answer = text
                    break
        if self.spec.reasoning_templates:
            trace = self.spec.reasoning_templates[idx_bits % len(self.spec.reasoning_templates)]
            text = f"<reasoning> {trace} </reasoning> {answer}"
        else:
            text = answer
        return self._finish(text, item_id, params)

    def _finish(self, text: str, item_id: str, params: GenParams) -> Generation:
        logprobs = None
        if params.want_logprobs and self.spec.supports_logprobs:
            item = self.spec.items.get(item_id)
            p = item.token_prob if item and item.token_prob is not None else self.spec.default_token_prob
            lp = -700.0 if p <= 0 else min(0.0, math.log(p))
            logprobs = tuple((tok, lp) for tok in tokenize_with_whitespace(text))
        return Generation(text=text, token_logprobs=logprobs)


# ---------------------------------------------------------------------------
# Remote chat-completions client


class RemoteChatModel:
    """Minimal chat-completions client with retry/backoff.

    POSTs to ``{endpoint}/chat/completions`` with the common JSON schema and
    reads ``choices[0].message.content``. Credentials come from the
    UD_API_KEY environment variable.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        session: object | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        import requests

        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout_s = timeout_s
        self._session = session or requests.Session()
        self._sleep = sleep
        self.call_count = 0
        self._lock = threading.Lock()
        fp = hashlib.blake2b(f"{self.endpoint}|{model}".encode(), digest_size=6).hexdigest()
        self.fingerprint = f"{model}-{fp}"
        self.supports_logprobs = True  # discovered per response; absent => None

    def generate(self, prompt: str, params: GenParams, draw: int = 0) -> Generation:
        import requests

        with self._lock:
            self.call_count += 1
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.want_logprobs:
            body["logprobs"] = True
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_err: Exception | None = None
        for attempt in range(MAX_ATTEMPTS):
            if attempt:
                delay = min(BACKOFF_CAP_S, BACKOFF_BASE_S * 2 ** (attempt - 1))
                self._sleep(delay * (0.5 + random.random()))
            try:
                resp = self._session.post(
                    f"{self.endpoint}/chat/completions",
                    json=body,
                    headers=headers,
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                last_err = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_err = TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return self._parse_response(resp.json())
        raise TransportError(f"request failed after {MAX_ATTEMPTS} attempts: {last_err}")

    @staticmethod
    def _parse_response(obj: dict) -> Generation:
        try:
            choice = obj["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc
        logprobs = None
        lp_block = choice.get("logprobs")
        if lp_block and isinstance(lp_block.get("content"), list):
            try:
                logprobs = tuple(
                    (tok["token"], float(tok["logprob"])) for tok in lp_block["content"]
                )
            except (KeyError, TypeError, ValueError):
                logprobs = None
        return Generation(
            text=text,
            token_logprobs=logprobs,
            finish_reason=choice.get("finish_reason", "stop") or "stop",
        )


# ---------------------------------------------------------------------------


def generate_batch(
    client,
    prompts: Sequence[str],
    params: GenParams | Sequence[GenParams],
    parallelism: int = 8,
) -> list[Generation]:
    """Run prompts through the client with bounded in-flight parallelism.

    Results align positionally with the inputs. A prompt whose generation
    fails yields a Generation with finish_reason 'error' rather than killing
    the batch; if every prompt fails, a BatchError summarizes the causes.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if not prompts:
        return []
    param_list = list(params) if isinstance(params, (list, tuple)) else [params] * len(prompts)
    if len(param_list) != len(prompts):
        raise ValueError("params sequence must match prompts length")

    results: list[Generation | None] = [None] * len(prompts)
    errors: list[tuple[int, Exception]] = []

    def run_one(idx: int) -> None:
        try:
            results[idx] = client.generate(prompts[idx], param_list[idx])
        except ModelClientError as exc:
            errors.append((idx, exc))
            results[idx] = Generation(text="", finish_reason="error")

    if parallelism == 1:
        for i in range(len(prompts)):
            run_one(i)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(run_one, range(len(prompts))))

    if len(errors) == len(prompts):
        causes = "; ".join(f"[{i}] {e}" for i, e in errors[:5])
        raise BatchError(f"all {len(prompts)} prompts failed: {causes}")
    for idx, exc in errors:
        logger.warning("generation %d failed: %s", idx, exc)
    return [g for g in results if g is not None]
