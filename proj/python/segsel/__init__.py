"""Reinforcement-learned temporal segment selection for two-class multichannel signals."""

from ._core import (
    ConfigError,
    EmbeddingConfig,
    ExperimentConfig,
    FormatError,
    GeneratorConfig,
    PreprocessConfig,
    SubjectMetrics,
    Trial,
    cmd_compare,
    cmd_eval,
    cmd_generate,
    cmd_traces,
    cmd_train,
    default_generator_config,
    embed,
    evaluate,
    generate_trials,
    load_experiment_config,
    load_networks,
    load_trials,
    parse_experiment_config,
    preprocess,
    save_trials,
    stft_spectrogram,
    summarize,
    wilcoxon_signed_rank,
)

__all__ = [name for name in dir() if not name.startswith("_")]
