"""JSON serialization of fitted models and dictionaries.

Every file carries ``{"schema": "koopkit.model", "version": 1, "kind": ...}``.
Complex arrays are stored as nested lists whose innermost pairs are
``[re, im]``. Floats are written with Python's shortest round-trip repr,
so values reload bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ._files import atomic_open
from .dmd import DmdcModel, DmdModel
from .edmd import EdmdModel
from .errors import InvalidInput, ModelFileError, VersionError
from .havok import HavokModel
from .observables import dictionary_from_dict

SCHEMA = "koopkit.model"
VERSION = 1


def encode_complex(a) -> list:
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def decode_complex(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0 or a.shape[-1] != 2:
        raise ModelFileError("complex array must end in [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def _real(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _matrix(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise ModelFileError(f"field {name!r} must be a matrix")
    return a


def model_to_dict(model) -> dict:
    head = {"schema": SCHEMA, "version": VERSION}
    if isinstance(model, DmdModel):
        return head | {
            "kind": model.kind,
            "dt": model.dt,
            "r": model.r,
            "lambda": encode_complex(model.Lambda),
            "omega": encode_complex(model.Omega),
            "b": encode_complex(model.b),
            "phi": encode_complex(model.Phi),
            "atilde": encode_complex(model.Atilde),
            "ur": encode_complex(model.Ur),
            "real_data": bool(model.real_data),
            "exact": None if model.exact is None else np.asarray(model.exact, bool).tolist(),
            "backward_singular": bool(model.backward_singular),
        }
    if isinstance(model, DmdcModel):
        return head | {"kind": "dmdc", "dt": model.dt, "r": model.r, "A": _real(model.A), "B": _real(model.B)}
    if isinstance(model, EdmdModel):
        return head | {
            "kind": model.kind,
            "dt": model.dt,
            "A": _real(model.A),
            "B": None if model.B is None else _real(model.B),
            "C": _real(model.C),
            "eigenvalues": encode_complex(model.eigenvalues),
            "modes": encode_complex(model.modes),
            "xi": encode_complex(model.Xi),
            "dictionary": model.dictionary.to_dict(),
        }
    if isinstance(model, HavokModel):
        return head | {
            "kind": "havok",
            "dt": model.dt,
            "q": model.q,
            "r": model.r,
            "A": _real(model.A),
            "B": _real(model.B),
            "U": _real(model.U),
            "S": _real(model.S),
            "V": _real(model.V),
            "residual": _real(model.residual),
            "r2": _real(model.r2),
        }
    raise InvalidInput(f"cannot serialize {type(model).__name__}")


def model_from_dict(d: dict):
    if not isinstance(d, dict) or d.get("schema") != SCHEMA:
        raise ModelFileError("not a koopkit model file")
    if d.get("version") != VERSION:
        raise VersionError(f"model schema version {d.get('version')!r} is not supported (expected {VERSION})")
    kind = d.get("kind")
    try:
        if kind in ("dmd", "fbdmd"):
            exact = d.get("exact")
            return DmdModel(
                decode_complex(d["phi"]),
                decode_complex(d["lambda"]),
                decode_complex(d["omega"]),
                decode_complex(d["b"]),
                int(d["r"]),
                float(d["dt"]),
                decode_complex(d["atilde"]),
                decode_complex(d["ur"]),
                bool(d["real_data"]),
                None if exact is None else np.asarray(exact, dtype=bool),
                kind,
                bool(d.get("backward_singular", False)),
            )
        if kind == "dmdc":
            return DmdcModel(_matrix(d["A"], "A"), _matrix(d["B"], "B"), int(d["r"]), float(d["dt"]))
        if kind in ("edmd", "edmdc"):
            return EdmdModel(
                _matrix(d["A"], "A"),
                dictionary_from_dict(d["dictionary"]),
                _matrix(d["C"], "C"),
                float(d["dt"]),
                decode_complex(d["eigenvalues"]),
                decode_complex(d["modes"]),
                decode_complex(d["xi"]),
                None if d["B"] is None else _matrix(d["B"], "B"),
                kind=kind,
            )
        if kind == "havok":
            return HavokModel(
                _matrix(d["U"], "U"),
                np.asarray(d["S"], dtype=float),
                _matrix(d["V"], "V"),
                int(d["r"]),
                _matrix(d["A"], "A"),
                np.asarray(d["B"], dtype=float),
                float(d["dt"]),
                int(d["q"]),
                np.asarray(d["residual"], dtype=float),
                np.asarray(d["r2"], dtype=float),
            )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (VersionError, ModelFileError)):
            raise
        raise ModelFileError(f"malformed {kind} model: {exc}") from exc
    raise ModelFileError(f"unknown model kind {kind!r}")


def serialize_model(model, path) -> None:
    """Write ``model`` atomically as JSON."""
    payload = model_to_dict(model)
    with atomic_open(path) as fh:
        json.dump(payload, fh, allow_nan=True)
        fh.write("\n")


def load_model(path):
    """Read a model written by serialize_model; never returns a partial model."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path} is truncated or not valid JSON: {exc}") from exc
    return model_from_dict(d)


def write_json(payload: dict, path) -> None:
    with atomic_open(path) as fh:
        json.dump(payload, fh, indent=2, allow_nan=True)
        fh.write("\n")
