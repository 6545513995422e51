"""Python bindings for the misinfo_guard C++ core."""

from ._core import (
    Classifier,
    ConfigError,
    DataError,
    IoError,
    MguardError,
    RunConfig,
    StateError,
    Vocab,
    auroc,
    bench,
    build_vocab,
    calibrate_threshold,
    desk_gen,
    english_gate,
    eval,
    evaluate,
    export_bundle,
    fingerprint,
    focal_loss,
    generate_desk_corpus,
    latency_stats,
    length_gate,
    nearest_rank,
    normalize,
    prepare,
    quantize,
    quantize_rows,
    train,
    weighted_bce,
)

__version__ = "0.1.0"
