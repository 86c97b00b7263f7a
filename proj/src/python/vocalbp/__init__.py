"""Python bindings for the vocal blood-pressure pipeline."""

import json as _json

from ._vocalbp import (
    VbpError,
    extract_features,
    label_hypertension,
    load_wav,
    mae,
    mfcc_12,
    mse,
    r2,
    relieff_weights,
    schema_names,
    serialize_features,
    tokenize,
    write_wav,
)
from . import _vocalbp

__all__ = [
    "VbpError",
    "extract_features",
    "label_hypertension",
    "load_wav",
    "mae",
    "mfcc_12",
    "mse",
    "predict",
    "r2",
    "relieff_weights",
    "run_stage",
    "schema_names",
    "serialize_features",
    "tokenize",
    "write_wav",
]


def run_stage(stage, config=None, workdir=None, seed=None):
    """Runs one pipeline stage. Returns (exit code, log text)."""
    return _vocalbp.run_stage(stage, _json.dumps(config or {}), workdir, seed)


def predict(workdir, config=None, wav=None, features=None):
    """Scores a WAV file or a feature CSV against a trained workdir.

    Returns the list of prediction dicts; raises VbpError with the exit code on failure.
    """
    code, out, log = _vocalbp.predict(_json.dumps(config or {}), workdir, wav, features)
    if code != 0:
        err = VbpError(log.strip())
        err.code = code
        raise err
    return _json.loads(out)["predictions"]
