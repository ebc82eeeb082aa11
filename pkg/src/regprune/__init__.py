"""Register-anchored dynamic thresholding for visual-token pruning."""

from .attn import (
    CLS_ID,
    REGISTER_ID,
    AttentionMap,
    ProbVector,
    ScoreVector,
    ValidationError,
    cosine_similarity,
    entropy_nats,
    n_eff,
    softmax_rows,
    text_id,
)
from .bundle import BundleError, LinearEncoder, SampleBundle, read_bundle, read_corpus, write_bundle
from .calibrate import BudgetTarget, CalibrationResult, ScoreTable, average_budget, calibrate_lambda, lambda_sweep
from .costmodel import CostReport, ModelShape, cost_report, fit_text_length, kv_bytes, speedup_estimate
from .register import (
    RegisterAugmentedActivations,
    RegisterNeuronSet,
    construct_register,
    identify_register_neurons,
)
from .stage1 import PruneResult, Stage1Config, prune_stage1, score_cls, score_mutual, unify_video_tokens
from .stage2 import PipelineReport, Stage2Config, prune_stage2, run_pipeline, score_text_to_vision
from .synth import (
    CorpusConfig,
    SynthConfig,
    generate_corpus,
    generate_sample,
    masking_stability_experiment,
    sink_absorption_report,
)
from .tensorio import read_tensor, write_tensor

__version__ = "0.1.0"
