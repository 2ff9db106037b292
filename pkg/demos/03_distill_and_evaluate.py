"""The full uncertainty-distillation loop on a synthetic backend:

  1. sample the base model on a calibration split and cluster the answers,
  2. fit (or skip) a post-hoc calibration map from the measured ECE,
  3. emit the self-annotated tuning file with verbalized confidence labels,
  4. stand in an "echo" model for the fine-tuned result and evaluate it
     against the prompting and semantic-entropy baselines.

Run: python demos/03_distill_and_evaluate.py
"""

import json
import tempfile
from pathlib import Path

from udistill import MockModel, RunConfig, run_distill, run_eval, save_dataset
from udistill.annotator import AnnotatedExample
from udistill.synthetic import echo_spec_from_examples, make_distortion_corpus

workdir = Path(tempfile.mkdtemp(prefix="udistill-demo-"))
print("working under", workdir)

# A 300-item synthetic corpus: the mock model's answer distributions are
# known, and gold labels were drawn so that mass-m answers are correct with
# probability m^2 -- a deliberately overconfident model that the
# calibration stage has to straighten out.
dataset, spec, _ = make_distortion_corpus(300, "square", seed=9)
save_dataset(dataset, workdir / "dataset.jsonl")
spec.save(workdir / "mock.json")

config = RunConfig.from_dict(
    {
        "dataset": {"path": str(workdir / "dataset.jsonl"), "format": "mcq"},
        "split": {"calibration": 240, "validation": 30, "test": 30},
        "backend": {"kind": "mock", "spec_path": str(workdir / "mock.json")},
        "sampling": {"n": 100, "temperature": 1.0},
        "out_dir": str(workdir / "runs"),
        "seed": 20,
    }
)

manifest = run_distill(config)
print("\npipeline stages:")
for stage in ("sample", "cluster", "calibrate", "annotate", "emit"):
    print(f"  {stage:<10} {manifest.stage_status(stage)}")
for decision in manifest.data["decisions"]:
    print("  decision:", decision)
sft_path = manifest.data["artifacts"]["sft_dataset"]
print("  tuning file:", sft_path, f"({sum(1 for _ in open(sft_path))} examples)")

# The echo backend replays each item's most-likely annotated target, which
# is what the fine-tuned model would produce at temperature 0.
with open(manifest.data["artifacts"]["annotated_examples"], encoding="utf-8") as fh:
    examples = [AnnotatedExample.from_record(json.loads(line)) for line in fh]
echo = echo_spec_from_examples(examples, spec)
echo.save(workdir / "echo.json")
config.tuned_backend = {"kind": "mock", "spec_path": str(workdir / "echo.json")}
config.eval_dataset_path = str(workdir / "dataset.jsonl")

print("\nmethod comparison (higher AUROC = better ranking of correctness):")
print(f"{'method':<18} {'AUROC':>7} {'acc':>6} {'high acc':>9} {'high %':>7} {'unparsed':>9} {'calls/item':>11}")
for method in ("ud", "prompting", "semantic_entropy"):
    client = MockModel(echo if method == "ud" else spec)
    report = run_eval(config, method, client=client)
    auroc = "n/a" if report.auroc is None else f"{report.auroc:.3f}"
    high_acc = "n/a" if report.high_accuracy is None else f"{report.high_accuracy:.3f}"
    per_item = client.call_count / len(report.predictions)
    print(
        f"{method:<18} {auroc:>7} {report.accuracy:>6.3f} {high_acc:>9} "
        f"{report.high_pct:>6.1f}% {report.unparsed_rate:>9.2f} {per_item:>11.0f}"
    )
# The base mock never volunteers confidence tags, so the prompting baseline
# parses nothing here -- the distilled model is what makes labels appear.

print("\nreliability of the distilled model (accuracy per confidence bin):")
report = run_eval(config, "ud", client=MockModel(echo))
for row in report.reliability:
    if row["count"] == 0:
        continue
    flag = "  (below 10-sample plotting threshold)" if row["suppressed"] else ""
    print(f"  bin {row['bin']} {row['label']:<10} n={row['count']:<4} acc={row['accuracy']:.3f}{flag}")
print("\nreports written under", config.run_dir() / "eval")
