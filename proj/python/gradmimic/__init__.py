"""Python bindings for the gradmimic C++ core."""

import json

from . import _gradmimic
from ._gradmimic import (
    aggregate_em,
    binarize,
    config_hash,
    gen_blobs,
    mimic_score,
    normalize_scores,
    pearson,
    run_cli,
    softmax,
)

__all__ = [
    "aggregate_em",
    "binarize",
    "config_hash",
    "gen_blobs",
    "mimic_score",
    "normalize_scores",
    "pearson",
    "run_cli",
    "run_experiment",
    "softmax",
    "verify_theory",
]


def verify_theory(trials, seed):
    return json.loads(_gradmimic.verify_theory(trials, seed))


def run_experiment(config_text, seed=None):
    """Run an experiment described in the sectioned config format; returns the report dict."""
    return json.loads(_gradmimic.run_experiment(config_text, seed))
