"""Model documents: JSON ingestion and the built-in test models.

A model document is a JSON object

    {"model": {"type": "averaging" | "variance_profile" | "kronecker"
               | "full_tensor", ...fields...},
     "dimension": n}

with type-specific fields: ``scale`` (averaging), ``s`` (variance_profile,
an n x n nonnegative array), ``coefficients`` (kronecker, a list of
``{"re": [[...]], "im": [[...]]}`` objects with optional ``im``), ``kappa``
(full_tensor, an n^2 x n^2 re/im object on row-major index pairs).
Unknown keys are rejected everywhere.

The built-in models back the regression and acceptance suites: an
averaging model (the circular law), 2 x 2 and 16 x 16 variance profiles,
and a two-coefficient non-commuting matrix model, all normalized to unit
spectral radius.
"""

from __future__ import annotations

import numpy as np

from .covariance import CovarianceOperator, normalize


class ModelDocumentError(ValueError):
    """Malformed model document (schema violation)."""


def _check_keys(obj: dict, allowed: set[str], required: set[str], where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ModelDocumentError(f"unknown keys {sorted(unknown)} in {where}")
    missing = required - set(obj)
    if missing:
        raise ModelDocumentError(f"missing keys {sorted(missing)} in {where}")


def _complex_array(obj, where: str) -> np.ndarray:
    if not isinstance(obj, dict):
        raise ModelDocumentError(f"{where} must be an object with 're' (and 'im')")
    _check_keys(obj, {"re", "im"}, {"re"}, where)
    re = np.asarray(obj["re"], dtype=float)
    if "im" in obj:
        im = np.asarray(obj["im"], dtype=float)
        if im.shape != re.shape:
            raise ModelDocumentError(f"re/im shape mismatch in {where}")
        return re + 1j * im
    return re.astype(complex)


def load_model(doc: dict) -> CovarianceOperator:
    """Build a covariance operator from a model document."""
    if not isinstance(doc, dict):
        raise ModelDocumentError("model document must be a JSON object")
    _check_keys(doc, {"model", "dimension"}, {"model", "dimension"}, "document")
    n = doc["dimension"]
    if not isinstance(n, int) or n < 1:
        raise ModelDocumentError("invalid dimension: must be a positive integer")
    model = doc["model"]
    if not isinstance(model, dict) or "type" not in model:
        raise ModelDocumentError("model must be an object with a 'type' field")
    mtype = model["type"]

    if mtype == "averaging":
        _check_keys(model, {"type", "scale"}, {"type"}, "averaging model")
        scale = model.get("scale", 1.0)
        if not isinstance(scale, (int, float)) or scale <= 0:
            raise ModelDocumentError("averaging scale must be a positive number")
        return CovarianceOperator.averaging(n, float(scale))

    if mtype == "variance_profile":
        _check_keys(model, {"type", "s"}, {"type", "s"}, "variance_profile model")
        s = np.asarray(model["s"], dtype=float)
        if s.shape != (n, n):
            raise ModelDocumentError(f"variance profile must be {n} x {n}")
        if np.any(s < 0):
            raise ModelDocumentError("negative variance in profile")
        return CovarianceOperator.variance_profile(s)

    if mtype == "kronecker":
        _check_keys(model, {"type", "coefficients"}, {"type", "coefficients"},
                    "kronecker model")
        coeffs = model["coefficients"]
        if not isinstance(coeffs, list) or not coeffs:
            raise ModelDocumentError("kronecker model needs a nonempty coefficient list")
        mats = []
        for i, c in enumerate(coeffs):
            a = _complex_array(c, f"coefficient {i}")
            if a.shape != (n, n):
                raise ModelDocumentError(f"coefficient {i} must be {n} x {n}")
            mats.append(a)
        return CovarianceOperator.kronecker(mats)

    if mtype == "full_tensor":
        _check_keys(model, {"type", "kappa"}, {"type", "kappa"}, "full_tensor model")
        kappa = _complex_array(model["kappa"], "kappa")
        if kappa.shape != (n * n, n * n):
            raise ModelDocumentError(f"kappa must be {n * n} x {n * n}")
        return CovarianceOperator.full_tensor(kappa, n)

    raise ModelDocumentError(f"unknown model type {mtype!r}")


def model_document(op: CovarianceOperator) -> dict:
    """Inverse of ``load_model`` for provenance embedding."""
    n = op.dimension
    if op.form == "averaging":
        model = {"type": "averaging", "scale": op.scale}
    elif op.form == "variance_profile":
        model = {"type": "variance_profile", "s": op.s_matrix.tolist()}
    elif op.form == "kronecker":
        model = {
            "type": "kronecker",
            "coefficients": [
                {"re": c.real.tolist(), "im": c.imag.tolist()} for c in op.coefficients
            ],
        }
    else:
        model = {
            "type": "full_tensor",
            "kappa": {"re": op.kappa.real.tolist(), "im": op.kappa.imag.tolist()},
        }
    return {"model": model, "dimension": n}


# -- built-in models ---------------------------------------------------------


def builtin_circular(n: int = 32) -> CovarianceOperator:
    """The circular law: i.i.d. entries of variance 1/n."""
    return CovarianceOperator.averaging(n, 1.0)


def builtin_vp2() -> CovarianceOperator:
    """2 x 2 variance profile [[1,2],[3,4]], normalized to unit radius."""
    op = CovarianceOperator.variance_profile(np.array([[1.0, 2.0], [3.0, 4.0]]))
    return normalize(op)[0]


def builtin_vp16() -> CovarianceOperator:
    """Smooth strictly positive 16 x 16 profile, normalized to unit radius."""
    n = 16
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    s = 1.0 + 0.5 * np.cos(2 * np.pi * (i - j) / n) + 0.25 * np.sin(2 * np.pi * (i + j) / n)
    return normalize(CovarianceOperator.variance_profile(s))[0]


def builtin_kron16() -> CovarianceOperator:
    """Two non-commuting 16 x 16 coefficients, normalized to unit radius.

    A weighted diagonal plus a weighted cyclic shift; deterministic and
    flat enough for the density machinery.
    """
    n = 16
    k = np.arange(n)
    a1 = np.diag(1.0 + 0.5 * np.cos(2 * np.pi * k / n)).astype(complex)
    shift = np.eye(n)[:, list(range(1, n)) + [0]]
    a2 = (shift * (1.0 + 0.5 * np.sin(2 * np.pi * k / n))).astype(complex)
    op = CovarianceOperator.kronecker([a1 / np.sqrt(2), a2 / np.sqrt(2)])
    return normalize(op)[0]


BUILTIN_FACTORIES = {
    "circular": builtin_circular,
    "vp2": builtin_vp2,
    "vp16": builtin_vp16,
    "kron16": builtin_kron16,
}


def builtin(name: str, **kwargs) -> CovarianceOperator:
    try:
        factory = BUILTIN_FACTORIES[name]
    except KeyError:
        raise ModelDocumentError(
            f"unknown builtin model {name!r}; available: {sorted(BUILTIN_FACTORIES)}"
        ) from None
    return factory(**kwargs)
