"""Desk-scale text- and audio-conditioned diffusion motion generation.

The package covers the full loop: instruction construction from emotion
labels and action units, a conformer-style denoiser with gated text
branches, diffusion training on clip manifests, DDIM sampling, and
oracle-based evaluation on synthetic corpora.
"""

from .core import (
    AURegistry,
    AUVector,
    EmotionLabel,
    IntensityLevel,
    ManifestEntry,
    MotionSequence,
    PoseSequence,
    TaskKind,
    default_registry,
    load_manifest,
    write_manifest,
)
from .diffusion import (
    NoiseSchedule,
    build_schedule,
    ddim_step,
    forward_sample,
    sample,
    sampling_timesteps,
)
from .conditioning import (
    ConditioningBundle,
    HashTextEmbedder,
    InstructionRep,
    NpyAudioProvider,
    align_audio,
    encode_instruction,
    tokenize,
)
from .denoiser import (
    Denoiser,
    DenoiserConfig,
    PredictionBundle,
    make_sampling_denoiser,
)
from .training import (
    LossBreakdown,
    LossWeights,
    OptimizerConfig,
    Trainer,
    TrainingTargets,
    compute_losses,
    lr_at,
    select_keyframe,
)
from .instructions import (
    FixtureParaphraseClient,
    LiveParaphraseClient,
    ParaphraseResult,
    TemplateBank,
    default_bank,
    expand_emotion_label,
    intersect_aus,
    paraphrase_aus,
    pseudo_neutral_instruction,
)
from .synthetic import (
    AUOracle,
    LinearCodec,
    SynthCorpus,
    corpus_au_for,
    load_corpus,
    smooth_noise,
    synth_corpus,
)
from .evalsuite import (
    EvalReport,
    HashFrameEmbedder,
    SampleRecord,
    TypicalAUTable,
    au_emo,
    au_f1,
    clip_s,
    evaluate_run,
)
from .config import RunConfig, load_config
from .errors import (
    AvamoError,
    ClientError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    InputError,
    ManifestError,
    NumericalError,
    RoutingError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "AURegistry", "AUVector", "EmotionLabel", "IntensityLevel",
    "ManifestEntry", "MotionSequence", "PoseSequence", "TaskKind",
    "default_registry", "load_manifest", "write_manifest",
    "NoiseSchedule", "build_schedule", "ddim_step", "forward_sample",
    "sample", "sampling_timesteps",
    "ConditioningBundle", "HashTextEmbedder", "InstructionRep",
    "NpyAudioProvider", "align_audio", "encode_instruction", "tokenize",
    "Denoiser", "DenoiserConfig", "PredictionBundle", "make_sampling_denoiser",
    "LossBreakdown", "LossWeights", "OptimizerConfig", "Trainer",
    "TrainingTargets", "compute_losses", "lr_at", "select_keyframe",
    "FixtureParaphraseClient", "LiveParaphraseClient", "ParaphraseResult",
    "TemplateBank", "default_bank", "expand_emotion_label", "intersect_aus",
    "paraphrase_aus", "pseudo_neutral_instruction",
    "AUOracle", "LinearCodec", "SynthCorpus", "corpus_au_for", "load_corpus",
    "smooth_noise", "synth_corpus",
    "EvalReport", "HashFrameEmbedder", "SampleRecord", "TypicalAUTable",
    "au_emo", "au_f1", "clip_s", "evaluate_run",
    "RunConfig", "load_config",
    "AvamoError", "ClientError", "ConfigError", "ContractError", "DataError",
    "DimensionError", "InputError", "ManifestError", "NumericalError",
    "RoutingError", "ValidationError",
    "__version__",
]
