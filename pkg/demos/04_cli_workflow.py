"""Driving the pipeline through the command-line interface: write a config
file, run the distillation stages, then evaluate through the echo stand-in.

Run: python demos/04_cli_workflow.py
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

from udistill import run_distill, RunConfig, save_dataset
from udistill.annotator import AnnotatedExample
from udistill.synthetic import echo_spec_from_examples, make_distortion_corpus

workdir = Path(tempfile.mkdtemp(prefix="udistill-cli-"))
dataset, spec, _ = make_distortion_corpus(60, "identity", seed=14)
save_dataset(dataset, workdir / "dataset.jsonl")
spec.save(workdir / "mock.json")

config_payload = {
    "dataset": {"path": str(workdir / "dataset.jsonl"), "format": "mcq"},
    "split": {"calibration": 60, "validation": 0, "test": 0},
    "backend": {"kind": "mock", "spec_path": str(workdir / "mock.json")},
    "sampling": {"n": 80, "temperature": 1.0},
    "out_dir": str(workdir / "runs"),
    "seed": 3,
}
config_path = workdir / "run.json"
config_path.write_text(json.dumps(config_payload, indent=2))


def cli(*args):
    cmd = [sys.executable, "-m", "udistill.cli", *args]
    print("\n$", " ".join(["udistill", *args]))
    out = subprocess.run(cmd, capture_output=True, text=True, check=True)
    print(out.stdout.rstrip())


# Stage commands are cumulative and idempotent: `calibrate` first brings
# sample and cluster up to date, and rerunning is a no-op on cached work.
cli("calibrate", "--config", str(config_path))
cli("run", "--config", str(config_path))

# Build the echo stand-in for the fine-tuned model, then point the test
# split at the annotated items and evaluate.
manifest = run_distill(RunConfig.from_file(config_path))
with open(manifest.data["artifacts"]["annotated_examples"], encoding="utf-8") as fh:
    examples = [AnnotatedExample.from_record(json.loads(line)) for line in fh]
echo_spec_from_examples(examples, spec).save(workdir / "echo.json")
config_payload["tuned_backend"] = {"kind": "mock", "spec_path": str(workdir / "echo.json")}
config_payload["eval"] = {"dataset": {"path": str(workdir / "dataset.jsonl"), "format": "mcq"}}
config_path.write_text(json.dumps(config_payload, indent=2))

cli("eval", "--config", str(config_path), "--method", "ud")
