"""Cosine-gated combination of main and auxiliary gradients."""

from ._core import (
    GateConfig,
    GateDecision,
    GateMode,
    Gate,
    combine,
    corrupted_cosine_stats,
    cosine,
    format_real,
    gate_weight,
    gridworld,
    landscape,
    load_config,
    mnist,
    parse_config,
    prop3,
    random_cosine_stats,
    rotate,
    run,
    toy,
)

__all__ = [
    "GateConfig",
    "GateDecision",
    "GateMode",
    "Gate",
    "combine",
    "corrupted_cosine_stats",
    "cosine",
    "format_real",
    "gate_weight",
    "gridworld",
    "landscape",
    "load_config",
    "mnist",
    "parse_config",
    "prop3",
    "random_cosine_stats",
    "rotate",
    "run",
    "toy",
]
