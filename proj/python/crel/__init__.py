"""Python access to the continual relation extraction core.

Dict arguments are passed to the C++ side as JSON; results come back as dicts.
"""

import json
from os import PathLike
from typing import Any, Dict, Optional, Union

from ._crel import (
    ConfigError,
    DataError,
    NumericError,
    __version__,
    combine_probs,
    cosine_matrix,
    predict_combined,
)
from . import _crel

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "__version__",
    "combine_probs",
    "config_hash",
    "cosine_matrix",
    "load_experiment",
    "normalize_spec",
    "predict_combined",
    "profile",
    "resume_experiment",
    "run_experiment",
    "synthetic_sequence",
]

Spec = Dict[str, Any]


def profile(name: str) -> Dict[str, Any]:
    """Hyperparameters of the "fewrel" or "tacred" profile."""
    return json.loads(_crel.profile(name))


def normalize_spec(spec: Spec) -> Spec:
    """Validates an experiment spec and fills in every default."""
    return json.loads(_crel.normalize_spec(json.dumps(spec)))


def config_hash(spec: Spec) -> str:
    return _crel.config_hash(json.dumps(spec))


def synthetic_sequence(spec: Dict[str, Any]) -> Dict[str, Any]:
    return json.loads(_crel.synthetic_sequence(json.dumps(spec)))


def run_experiment(spec: Spec, stop_after: Optional[int] = None) -> Dict[str, Any]:
    return json.loads(_crel.run_experiment(json.dumps(spec), stop_after))


def resume_experiment(directory: Union[str, PathLike]) -> Dict[str, Any]:
    return json.loads(_crel.resume_experiment(directory))


def load_experiment(directory: Union[str, PathLike]) -> Dict[str, Any]:
    return json.loads(_crel.load_experiment(directory))
