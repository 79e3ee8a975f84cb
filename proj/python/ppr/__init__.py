"""Python bindings for the ppr prompt rewriting core."""

import json

from ._ppr import (
    Corpus,
    DuplicateError,
    Error,
    NotFoundError,
    ParseError,
    ProviderError,
    RetrievalResult,
    RewrittenPrompt,
    ValidationError,
    assign_arm,
    keywords,
    retrieve,
    rewrite,
    rouge_l,
    run_cli,
    shorten,
    tokenize,
)
from ._ppr import split_manifest as _split_manifest


def split(corpus, seed):
    """Train/test manifest as a dict: {"seed", "train": {user: [ids]}, "test": {...}}."""
    return json.loads(_split_manifest(corpus, seed))


__all__ = [
    "Corpus",
    "DuplicateError",
    "Error",
    "NotFoundError",
    "ParseError",
    "ProviderError",
    "RetrievalResult",
    "RewrittenPrompt",
    "ValidationError",
    "assign_arm",
    "keywords",
    "retrieve",
    "rewrite",
    "rouge_l",
    "run_cli",
    "shorten",
    "split",
    "tokenize",
]
