"""udistill: teach QA models to verbalize calibrated semantic confidences.

The pipeline samples a model repeatedly per question, consolidates the
answers into semantic clusters, calibrates the cluster frequencies into
probabilities, and emits a self-annotated fine-tuning dataset whose targets
carry verbalized confidence labels. The evaluator scores verbalized-
confidence models against lexical, prompting, and semantic-entropy baselines.
"""

from .annotator import (
    AnnotatedExample,
    AugmentPolicy,
    BinningScheme,
    augment_instruction,
    bin_of,
    build_sft_dataset,
    emit_sft_jsonl,
)
from .calibrator import (
    CalibrationMap,
    ScoredPrediction,
    apply,
    ece,
    fit_isotonic,
    fit_temperature,
    scored_from_table,
    should_calibrate,
)
from .evaluator import (
    EvalReport,
    ParsedPrediction,
    RangeBinner,
    aggregate,
    auroc,
    fit_range_binner,
    lexical_baseline,
    parse_confidence,
    prompting_baseline,
    semantic_entropy,
    semantic_entropy_baseline,
    verbalized_eval,
)
from .mc_sampler import FrequencyTable, SampleCache, SampleSet, relative_frequencies, sample_n
from .model_client import (
    Distortion,
    GenParams,
    Generation,
    MockItem,
    MockModel,
    MockModelSpec,
    RemoteChatModel,
    generate_batch,
)
from .pipeline import RunConfig, RunManifest, run_distill, run_eval
from .qa_dataset import Dataset, QaItem, SplitSpec, load_dataset, save_dataset, split
from .semantic_norm import (
    EquivalenceJudge,
    ExtractedAnswer,
    SemanticCluster,
    cluster_samples,
    extract_answer,
    judge_equivalence,
    normalize_mcq,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedExample",
    "AugmentPolicy",
    "BinningScheme",
    "CalibrationMap",
    "Dataset",
    "Distortion",
    "EquivalenceJudge",
    "EvalReport",
    "ExtractedAnswer",
    "FrequencyTable",
    "GenParams",
    "Generation",
    "MockItem",
    "MockModel",
    "MockModelSpec",
    "ParsedPrediction",
    "QaItem",
    "RangeBinner",
    "RemoteChatModel",
    "RunConfig",
    "RunManifest",
    "SampleCache",
    "SampleSet",
    "ScoredPrediction",
    "SemanticCluster",
    "SplitSpec",
    "aggregate",
    "apply",
    "augment_instruction",
    "auroc",
    "bin_of",
    "build_sft_dataset",
    "cluster_samples",
    "ece",
    "emit_sft_jsonl",
    "extract_answer",
    "fit_isotonic",
    "fit_range_binner",
    "fit_temperature",
    "generate_batch",
    "judge_equivalence",
    "lexical_baseline",
    "load_dataset",
    "normalize_mcq",
    "parse_confidence",
    "prompting_baseline",
    "relative_frequencies",
    "run_distill",
    "run_eval",
    "sample_n",
    "save_dataset",
    "scored_from_table",
    "semantic_entropy",
    "semantic_entropy_baseline",
    "should_calibrate",
    "split",
    "verbalized_eval",
]
