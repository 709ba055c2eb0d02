"""Python bindings for the dual-graph surrogate core."""

import json

from . import _core
from ._core import (
    CaseError,
    DivergenceError,
    ShapeError,
    attenuation,
    compute_alpha,
    element_to_node,
    generate_case,
    grad_check,
    graph_edges,
    load_case,
    node_to_element,
    rollout,
    save_case,
    split_cases,
    structured_grid,
    validate_case,
)

__all__ = [
    "CaseError",
    "DivergenceError",
    "ShapeError",
    "attenuation",
    "compute_alpha",
    "element_to_node",
    "evaluate",
    "generate_campaign",
    "generate_case",
    "grad_check",
    "graph_edges",
    "load_case",
    "node_to_element",
    "rollout",
    "save_case",
    "split_cases",
    "structured_grid",
    "train",
    "validate_case",
]


def generate_campaign(out, scale="tiny", count=190, seed=0, n_frames=21):
    """Write a synthetic campaign to `out` and return its index."""
    return json.loads(_core.generate_campaign(str(out), scale, count, seed, n_frames))


def train(campaign, checkpoint_out, **config):
    """Train on a campaign directory; `config` mirrors the training config JSON."""
    return _core.train(str(campaign), json.dumps(config), str(checkpoint_out))


def evaluate(checkpoint, cases):
    """Free-rollout metrics of a checkpoint over case directories."""
    return json.loads(_core.evaluate(str(checkpoint), [str(c) for c in cases]))
