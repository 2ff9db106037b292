"""Post-hoc calibration: isotonic regression (PAVA), temperature scaling, ECE.

The isotonic fit solves min sum_i (c_i - y_i)^2 subject to c nondecreasing
over the frequency-sorted pairs, via pool-adjacent-violators. The fitted map
interpolates linearly between knots and clamps outside them, so it is total
on [0, 1].
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mc_sampler import FrequencyTable

logger = logging.getLogger(__name__)

LOGIT_EPS = 1e-4
ECE_DEFAULT_BINS = 30
CALIBRATE_ECE_THRESHOLD = 0.05


class CalibrationError(Exception):
    """Unusable calibration inputs (single class, empty data, ...)."""


@dataclass(frozen=True)
class ScoredPrediction:
    """One cluster of one item, paired with whether it hit the gold answer."""

    item_id: str
    cluster_key: str
    f: float
    correct: int
    text: str


@dataclass(frozen=True)
class CalibrationMap:
    """Monotone map from raw frequency to probability."""

    kind: str  # isotonic | temperature | identity
    knots: tuple[tuple[float, float], ...] = ()
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("isotonic", "temperature", "identity"):
            raise ValueError(f"unknown calibration kind {self.kind!r}")
        if self.kind == "isotonic":
            if not self.knots:
                raise ValueError("isotonic map needs at least one knot")
            xs = [x for x, _ in self.knots]
            cs = [c for _, c in self.knots]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("knot x-values must be strictly increasing")
            if any(b < a - 1e-12 for a, b in zip(cs, cs[1:])):
                raise ValueError("knot values must be nondecreasing")
        if self.kind == "temperature" and self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def to_json(self) -> dict:
        if self.kind == "isotonic":
            return {"kind": self.kind, "knots": [[x, c] for x, c in self.knots]}
        if self.kind == "temperature":
            return {"kind": self.kind, "T": self.temperature}
        return {"kind": self.kind}

    @classmethod
    def from_json(cls, obj: dict) -> "CalibrationMap":
        kind = obj["kind"]
        if kind == "isotonic":
            return cls(kind=kind, knots=tuple((x, c) for x, c in obj["knots"]))
        if kind == "temperature":
            return cls(kind=kind, temperature=float(obj["T"]))
        return cls(kind=kind)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationMap":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def identity(cls) -> "CalibrationMap":
        return cls(kind="identity")


def _pool_ties(pairs: list[tuple[float, float]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sort by f and average y over tied f values; weights carry the tie counts."""
    arr = np.asarray(sorted(pairs, key=lambda p: p[0]), dtype=float)
    xs, ys = arr[:, 0], arr[:, 1]
    ux, inverse, counts = np.unique(xs, return_inverse=True, return_counts=True)
    sums = np.zeros_like(ux)
    np.add.at(sums, inverse, ys)
    return ux, sums / counts, counts.astype(float)


def _pava(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted pool-adjacent-violators: nondecreasing least-squares fit."""
    n = len(y)
    means = list(y.astype(float))
    weights = list(w.astype(float))
    sizes = [1] * n
    k = 0  # top of the block stack
    for i in range(1, n):
        k += 1
        means[k], weights[k], sizes[k] = y[i], w[i], 1
        while k > 0 and means[k - 1] > means[k]:
            tot = weights[k - 1] + weights[k]
            means[k - 1] = (means[k - 1] * weights[k - 1] + means[k] * weights[k]) / tot
            weights[k - 1] = tot
            sizes[k - 1] += sizes[k]
            k -= 1
    fitted = np.empty(n)
    pos = 0
    for blk in range(k + 1):
        fitted[pos : pos + sizes[blk]] = means[blk]
        pos += sizes[blk]
    return fitted


def fit_isotonic(pairs: list[tuple[float, float]]) -> CalibrationMap:
    """Fit the monotone least-squares calibration map over (f, correct) pairs."""
    if len(pairs) < 2:
        raise CalibrationError("isotonic fit needs at least 2 pairs")
    for f, _ in pairs:
        if not 0.0 <= f <= 1.0:
            raise CalibrationError(f"frequency {f} outside [0, 1]")
    xs, ys, ws = _pool_ties(pairs)
    if len(xs) == 1:
        logger.warning(
            "all %d calibration pairs share f=%g; fitting a constant map", len(pairs), xs[0]
        )
        return CalibrationMap(kind="isotonic", knots=((float(xs[0]), float(ys[0])),))
    fitted = _pava(ys, ws)
    knots: list[tuple[float, float]] = []
    for i, (x, c) in enumerate(zip(xs, fitted)):
        # Interior points of a constant run do not change the interpolant.
        if 0 < i < len(xs) - 1 and fitted[i - 1] == c == fitted[i + 1]:
            continue
        knots.append((float(x), float(c)))
    return CalibrationMap(kind="isotonic", knots=tuple(knots))


def fit_temperature(pairs: list[tuple[float, float]]) -> CalibrationMap:
    """Fit the scalar T of logit-domain temperature scaling by NLL.

    Minimizes Bernoulli NLL of sigmoid(logit(f)/T) via golden-section search
    on log T in [-3, 3].
    """
    if len(pairs) < 2:
        raise CalibrationError("temperature fit needs at least 2 pairs")
    ys = np.asarray([y for _, y in pairs], dtype=float)
    if ys.min() == ys.max():
        raise CalibrationError("temperature fit needs both labels present")
    fs = np.clip(np.asarray([f for f, _ in pairs], dtype=float), LOGIT_EPS, 1 - LOGIT_EPS)
    logits = np.log(fs / (1 - fs))

    def nll(log_t: float) -> float:
        z = logits / math.exp(log_t)
        # log(1 + exp(-z)) computed stably
        log_sig = -np.logaddexp(0.0, -z)
        log_one_minus = -np.logaddexp(0.0, z)
        return float(-(ys * log_sig + (1 - ys) * log_one_minus).sum())

    lo, hi = -3.0, 3.0
    inv_phi = (math.sqrt(5) - 1) / 2
    a = hi - inv_phi * (hi - lo)
    b = lo + inv_phi * (hi - lo)
    fa, fb = nll(a), nll(b)
    for _ in range(200):
        if hi - lo < 1e-10:
            break
        if fa <= fb:
            hi, b, fb = b, a, fa
            a = hi - inv_phi * (hi - lo)
            fa = nll(a)
        else:
            lo, a, fa = a, b, fb
            b = lo + inv_phi * (hi - lo)
            fb = nll(b)
    return CalibrationMap(kind="temperature", temperature=math.exp((lo + hi) / 2))


def apply(map: CalibrationMap, f: float) -> float:
    """Evaluate the calibration map; total and monotone on [0, 1]."""
    if map.kind == "identity":
        return float(f)
    if map.kind == "temperature":
        clamped = min(max(f, LOGIT_EPS), 1 - LOGIT_EPS)
        z = math.log(clamped / (1 - clamped)) / map.temperature
        return 1.0 / (1.0 + math.exp(-z))
    xs = [x for x, _ in map.knots]
    cs = [c for _, c in map.knots]
    if f <= xs[0]:
        return cs[0]
    if f >= xs[-1]:
        return cs[-1]
    j = bisect.bisect_right(xs, f) - 1
    x0, x1, c0, c1 = xs[j], xs[j + 1], cs[j], cs[j + 1]
    return c0 + (c1 - c0) * (f - x0) / (x1 - x0)


def ece(pairs: list[tuple[float, float]], n_bins: int = ECE_DEFAULT_BINS) -> float:
    """Expected calibration error over equal-width bins on [0, 1].

    Empty bins contribute nothing; the right edge lands in the last bin.
    """
    if not pairs:
        raise CalibrationError("ece needs at least one pair")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    ps = np.asarray([p for p, _ in pairs], dtype=float)
    ys = np.asarray([y for _, y in pairs], dtype=float)
    idx = np.minimum((ps * n_bins).astype(int), n_bins - 1)
    total = 0.0
    n = len(ps)
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            continue
        conf = float(ps[mask].mean())
        acc = float(ys[mask].mean())
        total += (count / n) * abs(acc - conf)
    return total


def should_calibrate(
    training_pairs: list[tuple[float, float]],
    threshold: float = CALIBRATE_ECE_THRESHOLD,
    n_bins: int = ECE_DEFAULT_BINS,
) -> str:
    """Decide 'calibrate' vs 'skip' from the training data's measured ECE.

    Inclusive at the threshold: ECE exactly at it still calibrates.
    """
    measured = ece(training_pairs, n_bins)
    verdict = "calibrate" if measured >= threshold else "skip"
    logger.info("training-data ECE %.4f (threshold %.3f) -> %s", measured, threshold, verdict)
    return verdict


def scored_from_table(table: FrequencyTable) -> list[ScoredPrediction]:
    """Expand a frequency table into per-cluster scored predictions.

    Every cluster contributes one (f, correct) observation, so both the hits
    and the misses inform the calibration fit.
    """
    return [
        ScoredPrediction(
            item_id=table.item_id,
            cluster_key=e["cluster_key"],
            f=e["f"],
            correct=int(bool(e["matches_gold"])),
            text=e["representative"],
        )
        for e in table.entries
    ]


def pairs_from_scored(scored: list[ScoredPrediction]) -> list[tuple[float, float]]:
    return [(s.f, float(s.correct)) for s in scored]
