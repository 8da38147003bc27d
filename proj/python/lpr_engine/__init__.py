"""Python bindings for the legal passage retrieval experiment engine."""

from ._core import (
    Bm25Index,
    ConfigError,
    Error,
    FormatError,
    IoError,
    bleu,
    config_hash,
    gure_prompt,
    paired_t_test,
    parse_cot_output,
    porter_stem,
    read_embeddings,
    rouge_l,
    run_experiment,
    strip_scaffolding,
    tokenize,
    top_share,
    write_embeddings,
)

__all__ = [
    "Bm25Index",
    "ConfigError",
    "Error",
    "FormatError",
    "IoError",
    "bleu",
    "config_hash",
    "gure_prompt",
    "paired_t_test",
    "parse_cot_output",
    "porter_stem",
    "read_embeddings",
    "rouge_l",
    "run_experiment",
    "strip_scaffolding",
    "tokenize",
    "top_share",
    "write_embeddings",
]
