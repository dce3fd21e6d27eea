"""Explainable object recognition on synthetic worlds.

Recognition is factored into rationale selection followed by category
naming, both scored by one dual encoder over rendered text prompts. The
package exposes world generation, prompt rendering, training, joint-table
inference and the right/wrong metric quad from the C++ core.
"""

from ecor._core import (
    Ablation,
    ConditionalNorm,
    ConfigError,
    DualEncoderParams,
    EncoderConfig,
    EpochRecord,
    Example,
    IOError,
    JointTable,
    MetricsQuad,
    NumericError,
    Prediction,
    PromptKind,
    PromptMode,
    RankedPair,
    RenderedPrompt,
    TrainConfig,
    TrainResult,
    TuneScope,
    Vocabulary,
    World,
    WorldSpec,
    default_k,
    encoder_config_for,
    evaluate,
    evaluate_world,
    generate_world,
    gradient_check,
    init_params,
    load_checkpoint,
    load_world,
    observed_rationale_sets,
    predict,
    preset_spec,
    render_prompt_R,
    render_prompt_c_given_R,
    save_checkpoint,
    save_world,
    score_image,
    split_zero_shot,
    train,
    world_hash,
    zero_shot_evaluate,
)

__all__ = [
    "Ablation",
    "ConditionalNorm",
    "ConfigError",
    "DualEncoderParams",
    "EncoderConfig",
    "EpochRecord",
    "Example",
    "IOError",
    "JointTable",
    "MetricsQuad",
    "NumericError",
    "Prediction",
    "PromptKind",
    "PromptMode",
    "RankedPair",
    "RenderedPrompt",
    "TrainConfig",
    "TrainResult",
    "TuneScope",
    "Vocabulary",
    "World",
    "WorldSpec",
    "default_k",
    "encoder_config_for",
    "evaluate",
    "evaluate_world",
    "generate_world",
    "gradient_check",
    "init_params",
    "load_checkpoint",
    "load_world",
    "observed_rationale_sets",
    "predict",
    "preset_spec",
    "render_prompt_R",
    "render_prompt_c_given_R",
    "save_checkpoint",
    "save_world",
    "score_image",
    "split_zero_shot",
    "train",
    "world_hash",
    "zero_shot_evaluate",
]
