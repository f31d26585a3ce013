"""Token-level source identification: activation shards, probers and tagging."""

from ._core import (
    Checkpoint,
    DimensionError,
    Error,
    FormatError,
    IoError,
    ToyLm,
    ValidationError,
    __version__,
    load_checkpoint,
    read_shard,
    read_shard_header,
    save_catalog,
    shard_file_name,
    split_for_document,
    validate_corpus,
    write_shard,
)

__all__ = [
    "Checkpoint",
    "DimensionError",
    "Error",
    "FormatError",
    "IoError",
    "ToyLm",
    "ValidationError",
    "__version__",
    "load_checkpoint",
    "read_shard",
    "read_shard_header",
    "save_catalog",
    "shard_file_name",
    "split_for_document",
    "validate_corpus",
    "write_shard",
]
