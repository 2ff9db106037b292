"""End-to-end orchestration: sample -> cluster -> calibrate -> annotate -> emit,
plus evaluation runs, driven by a declarative config with durable manifests.

Every stage is idempotent: a completed stage is skipped on rerun, and the
sample cache means an interrupted run resumes without new model calls.
Artifacts live under <out_dir>/<config_hash>/.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import calibrator as cal
from . import evaluator, prompts
from .annotator import (
    AnnotatedExample,
    AugmentPolicy,
    BinningScheme,
    augment_instruction,
    build_sft_dataset,
    emit_sft_jsonl,
)
from .mc_sampler import ItemSamplingError, SampleCache, relative_frequencies, sample_n
from .model_client import GenParams, MockModel, MockModelSpec, RemoteChatModel
from .qa_dataset import Dataset, SplitSpec, load_dataset, split
from .semantic_norm import ClusteringError, EquivalenceJudge, cluster_samples

logger = logging.getLogger(__name__)

STAGES = ("sample", "cluster", "calibrate", "annotate", "emit")
EVAL_METHODS = ("ud", "lexical", "prompting", "semantic_entropy")


class ConfigError(Exception):
    pass


class PipelineError(Exception):
    pass


@dataclass
class RunConfig:
    dataset_path: str
    dataset_format: str = "mcq"
    split_calibration: int = 100
    split_validation: int = 0
    split_test: int = 0
    backend: dict = field(default_factory=dict)  # kind: mock|remote, ...
    tuned_backend: dict | None = None  # stand-in for the fine-tuned model
    n_samples: int = 100
    temperature: float = 1.0
    max_tokens: int = 256
    judge: dict = field(default_factory=lambda: {"backend": "exact"})
    calibration_kind: str = "isotonic"  # isotonic | temperature
    calibrate_threshold: float = cal.CALIBRATE_ECE_THRESHOLD
    scheme: BinningScheme = field(default_factory=BinningScheme)
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    target_style: str = "tags"  # tags | prose confidence rendering
    out_dir: str = "runs"
    cache_dir: str | None = None  # default: <out_dir>/cache, shared across runs
    seed: int = 0
    parallelism: int = 8
    se_samples: int = 20
    eval_dataset_path: str | None = None  # cross-dataset evaluation
    eval_dataset_format: str = "mcq"

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        ds = obj.get("dataset") or {}
        sp = obj.get("split") or {}
        sampling = obj.get("sampling") or {}
        calib = obj.get("calibration") or {}
        ev = obj.get("eval") or {}
        eval_ds = ev.get("dataset") or {}
        scheme_rec = obj.get("scheme")
        policy_rec = obj.get("policy")
        return cls(
            dataset_path=ds.get("path", obj.get("dataset_path", "")),
            dataset_format=ds.get("format", "mcq"),
            split_calibration=sp.get("calibration", 100),
            split_validation=sp.get("validation", 0),
            split_test=sp.get("test", 0),
            backend=obj.get("backend") or {},
            tuned_backend=obj.get("tuned_backend"),
            n_samples=sampling.get("n", 100),
            temperature=sampling.get("temperature", 1.0),
            max_tokens=sampling.get("max_tokens", 256),
            judge=obj.get("judge") or {"backend": "exact"},
            calibration_kind=calib.get("kind", "isotonic"),
            calibrate_threshold=calib.get("threshold", cal.CALIBRATE_ECE_THRESHOLD),
            scheme=BinningScheme.from_record(scheme_rec) if scheme_rec else BinningScheme(),
            policy=AugmentPolicy.from_record(policy_rec) if policy_rec else AugmentPolicy(),
            target_style=obj.get("target_style", "tags"),
            out_dir=obj.get("out_dir", "runs"),
            cache_dir=obj.get("cache_dir"),
            seed=obj.get("seed", 0),
            parallelism=obj.get("parallelism", 8),
            se_samples=ev.get("m", 20),
            eval_dataset_path=eval_ds.get("path"),
            eval_dataset_format=eval_ds.get("format", "mcq"),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        obj = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
        if not isinstance(obj, dict):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(obj)

    def validate(self) -> None:
        if not Path(self.dataset_path).exists():
            raise ConfigError(f"dataset path does not exist: {self.dataset_path}")
        if self.eval_dataset_path and not Path(self.eval_dataset_path).exists():
            raise ConfigError(f"eval dataset path does not exist: {self.eval_dataset_path}")
        kind = self.backend.get("kind")
        if kind not in ("mock", "remote"):
            raise ConfigError(f"backend.kind must be mock or remote, got {kind!r}")
        if kind == "mock" and not Path(self.backend.get("spec_path", "")).exists():
            raise ConfigError("mock backend needs an existing spec_path")
        if kind == "remote" and not self.backend.get("endpoint"):
            raise ConfigError("remote backend needs an endpoint")
        if self.n_samples < 1:
            raise ConfigError("sampling.n must be >= 1")
        if self.calibration_kind not in ("isotonic", "temperature"):
            raise ConfigError(f"unknown calibration kind {self.calibration_kind!r}")

    def hash(self) -> str:
        """Content hash of everything that affects artifacts (paths to outputs excluded)."""
        payload = dataclasses.asdict(self)
        payload.pop("out_dir")
        payload.pop("cache_dir")
        canon = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]

    def gen_params(self, **overrides) -> GenParams:
        base = dict(
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            seed=self.seed,
            want_logprobs=False,
        )
        base.update(overrides)
        return GenParams(**base)

    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.hash()

    def cache_root(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.out_dir) / "cache"


def build_client(spec: dict):
    kind = spec.get("kind")
    if kind == "mock":
        return MockModel(MockModelSpec.load(spec["spec_path"]))
    if kind == "remote":
        return RemoteChatModel(endpoint=spec["endpoint"], model=spec.get("model", ""))
    raise ConfigError(f"unknown backend kind {kind!r}")


def build_judge(config: RunConfig, run_dir: Path) -> EquivalenceJudge:
    backend = config.judge.get("backend", "exact")
    if backend == "exact":
        return EquivalenceJudge.exact()
    client = build_client(config.judge.get("client") or config.backend)
    return EquivalenceJudge.remote(client, cache_path=run_dir / "judge_cache.jsonl")


class RunManifest:
    """Per-run status ledger, written atomically after every stage change."""

    def __init__(self, path: Path, config_hash: str):
        self.path = path
        self.data: dict[str, Any] = {
            "config_hash": config_hash,
            "stages": {name: {"status": "pending"} for name in STAGES},
            "artifacts": {},
            "decisions": [],
            "failed_items": [],
        }
        if path.exists():
            stored = json.loads(path.read_text(encoding="utf-8"))
            if stored.get("config_hash") == config_hash:
                self.data = stored

    def stage_status(self, name: str) -> str:
        return self.data["stages"].get(name, {}).get("status", "pending")

    def start(self, name: str) -> None:
        self.data["stages"][name] = {"status": "running", "started_at": time.time()}
        self.save()

    def done(self, name: str) -> None:
        entry = self.data["stages"].setdefault(name, {})
        entry["status"] = "done"
        entry["finished_at"] = time.time()
        self.save()

    def failed(self, name: str, error: str) -> None:
        entry = self.data["stages"].setdefault(name, {})
        entry["status"] = "failed"
        entry["error"] = error
        entry["finished_at"] = time.time()
        self.save()

    def record_artifact(self, name: str, path: Path) -> None:
        self.data["artifacts"][name] = str(path)
        self.save()

    def record_decision(self, text: str) -> None:
        self.data["decisions"].append(text)
        self.save()

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.data, indent=2), encoding="utf-8")
        os.replace(tmp, self.path)


def _splits(config: RunConfig) -> dict[str, Dataset]:
    dataset = load_dataset(config.dataset_path, config.dataset_format)
    spec = SplitSpec(
        calibration=config.split_calibration,
        validation=config.split_validation,
        test=config.split_test,
        seed=config.seed,
    )
    return split(dataset, spec)


def run_distill(
    config: RunConfig,
    until: str = "emit",
    client=None,
    judge: EquivalenceJudge | None = None,
) -> RunManifest:
    """Run the distillation pipeline up to (and including) the given stage.

    ``client``/``judge`` default to what the config describes; passing them
    in lets callers keep hold of call counters.
    """
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}")
    config.validate()
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(run_dir / "manifest.json", config.hash())
    client = client or build_client(config.backend)
    judge = judge or build_judge(config, run_dir)
    cache = SampleCache(config.cache_root())
    cal_items = _splits(config)["calibration"]

    last = STAGES.index(until)
    for stage in STAGES[: last + 1]:
        if manifest.stage_status(stage) == "done":
            logger.info("stage %s already done; skipping", stage)
            continue
        manifest.start(stage)
        try:
            _STAGE_FNS[stage](config, manifest, client, judge, cache, cal_items, run_dir)
        except Exception as exc:
            manifest.failed(stage, str(exc))
            raise PipelineError(f"stage {stage!r} failed: {exc}") from exc
        manifest.done(stage)
    return manifest


def _draw_parallelism(config: RunConfig, client) -> int:
    # An in-process mock is CPU-bound; threads only add overhead there.
    return 1 if isinstance(client, MockModel) else config.parallelism


def _stage_sample(config, manifest, client, judge, cache, cal_items, run_dir) -> None:
    params = config.gen_params()
    par = _draw_parallelism(config, client)
    failed: list[str] = []
    for item in cal_items:
        try:
            sample_n(item, config.n_samples, params, client, cache, parallelism=par)
        except ItemSamplingError as exc:
            logger.warning("sampling failed for %s: %s", item.id, exc)
            failed.append(item.id)
    manifest.data["failed_items"] = sorted(set(manifest.data["failed_items"]) | set(failed))
    manifest.record_artifact("cache_dir", config.cache_root())


def _stage_cluster(config, manifest, client, judge, cache, cal_items, run_dir) -> None:
    params = config.gen_params()
    par = _draw_parallelism(config, client)
    freq_path = run_dir / "frequencies.jsonl"
    scored_path = run_dir / "scored.jsonl"
    failed = set(manifest.data["failed_items"])
    with freq_path.open("w", encoding="utf-8") as freq_fh, scored_path.open(
        "w", encoding="utf-8"
    ) as scored_fh:
        for item in cal_items:
            if item.id in failed:
                continue
            try:
                sset = sample_n(item, config.n_samples, params, client, cache, parallelism=par)
                clusters = cluster_samples(sset, item, judge, seed=config.seed)
                table = relative_frequencies(clusters, sset.n_effective, item.id)
            except (ItemSamplingError, ClusteringError) as exc:
                logger.warning("clustering failed for %s: %s", item.id, exc)
                failed.add(item.id)
                continue
            freq_fh.write(json.dumps(table.to_record(), ensure_ascii=False) + "\n")
            for s in cal.scored_from_table(table):
                scored_fh.write(json.dumps(dataclasses.asdict(s), ensure_ascii=False) + "\n")
    manifest.data["failed_items"] = sorted(failed)
    manifest.record_artifact("frequency_tables", freq_path)
    manifest.record_artifact("scored_predictions", scored_path)


def _load_scored(run_dir: Path) -> list[cal.ScoredPrediction]:
    path = run_dir / "scored.jsonl"
    scored = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                scored.append(cal.ScoredPrediction(**json.loads(line)))
    return scored


def _stage_calibrate(config, manifest, client, judge, cache, cal_items, run_dir) -> None:
    scored = _load_scored(run_dir)
    pairs = cal.pairs_from_scored(scored)
    measured = cal.ece(pairs)
    verdict = cal.should_calibrate(pairs, config.calibrate_threshold)
    manifest.record_decision(
        f"should_calibrate: ECE={measured:.4f} threshold={config.calibrate_threshold} -> {verdict}"
    )
    if verdict == "calibrate":
        fit = cal.fit_isotonic if config.calibration_kind == "isotonic" else cal.fit_temperature
        cmap = fit(pairs)
    else:
        cmap = cal.CalibrationMap.identity()
    map_path = run_dir / "calibration.json"
    cmap.save(map_path)
    manifest.record_artifact("calibration_map", map_path)


def _stage_annotate(config, manifest, client, judge, cache, cal_items, run_dir) -> None:
    scored = _load_scored(run_dir)
    cmap = cal.CalibrationMap.load(run_dir / "calibration.json")
    examples = build_sft_dataset(
        scored,
        cal_items.by_id(),
        cmap,
        scheme=config.scheme,
        policy=config.policy,
        seed=config.seed,
        target_style=config.target_style,
    )
    path = run_dir / "annotated.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), ensure_ascii=False) + "\n")
    manifest.record_artifact("annotated_examples", path)


def _stage_emit(config, manifest, client, judge, cache, cal_items, run_dir) -> None:
    examples = _load_annotated(run_dir)
    sft_path = run_dir / "sft.jsonl"
    emit_sft_jsonl(examples, sft_path)
    manifest.record_artifact("sft_dataset", sft_path)


def _load_annotated(run_dir: Path) -> list[AnnotatedExample]:
    path = run_dir / "annotated.jsonl"
    examples = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                examples.append(AnnotatedExample.from_record(json.loads(line)))
    return examples


_STAGE_FNS = {
    "sample": _stage_sample,
    "cluster": _stage_cluster,
    "calibrate": _stage_calibrate,
    "annotate": _stage_annotate,
    "emit": _stage_emit,
}


def run_eval(
    config: RunConfig,
    method: str,
    client=None,
    judge: EquivalenceJudge | None = None,
) -> evaluator.EvalReport:
    """Evaluate one method on the test split and persist report JSON + CSV.

    ``client`` overrides the backend the method would build (the tuned
    stand-in for 'ud', the base backend otherwise).
    """
    if method not in EVAL_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {EVAL_METHODS}")
    config.validate()
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    judge = judge or build_judge(config, run_dir)

    if config.eval_dataset_path:
        test_items = load_dataset(config.eval_dataset_path, config.eval_dataset_format)
        validation = _splits(config)["validation"]
    else:
        splits = _splits(config)
        test_items, validation = splits["test"], splits["validation"]
    if len(test_items) == 0:
        raise ConfigError("test split is empty")

    if method == "ud":
        backend_spec = config.tuned_backend or config.backend
        client = client or build_client(backend_spec)
        report = evaluator.verbalized_eval(
            test_items,
            client,
            scheme=config.scheme,
            prompt_builder=lambda it: augment_instruction(prompts.build_sampling_prompt(it)),
            method="ud",
            params=config.gen_params(temperature=0.0),
            judge=judge,
            parallelism=config.parallelism,
        )
    elif method == "prompting":
        client = client or build_client(config.backend)
        report = evaluator.prompting_baseline(
            test_items,
            client,
            scheme=config.scheme,
            params=config.gen_params(temperature=0.0),
            judge=judge,
            parallelism=config.parallelism,
        )
    elif method == "lexical":
        client = client or build_client(config.backend)
        if not getattr(client, "supports_logprobs", False):
            raise PipelineError("lexical baseline needs a backend with token logprobs")
        cal_items = _splits(config)["calibration"]
        report = evaluator.lexical_baseline(
            test_items,
            cal_items,
            client,
            scheme=config.scheme,
            params=config.gen_params(temperature=0.0, want_logprobs=True),
            judge=judge,
            parallelism=config.parallelism,
        )
    else:  # semantic_entropy
        client = client or build_client(config.backend)
        if len(validation) == 0:
            raise ConfigError("semantic entropy needs a nonempty validation split")
        report = evaluator.semantic_entropy_baseline(
            test_items,
            validation,
            client,
            m=config.se_samples,
            scheme=config.scheme,
            params=config.gen_params(),
            judge=judge,
            seed=config.seed,
        )

    eval_dir = run_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    report.save(eval_dir / f"{method}.report.json")
    evaluator.write_reliability_csv(report, eval_dir / f"{method}.reliability.csv")
    manifest = RunManifest(run_dir / "manifest.json", config.hash())
    manifest.record_artifact(f"eval_{method}_report", eval_dir / f"{method}.report.json")
    manifest.record_artifact(f"eval_{method}_reliability", eval_dir / f"{method}.reliability.csv")
    return report
