"""Flat parameter vectors and the elementwise operations used for averaging.

Model parameters are handled everywhere as 1-D float64 numpy arrays in a
fixed, documented flattening order (see ``models``).  Aggregation is
structure-agnostic: it only ever sees these flat vectors.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError, WeightNormError

# Tolerance on "the weights sum to one".
WEIGHT_SUM_TOL = 1e-9

ParamVector = np.ndarray


def as_params(values) -> ParamVector:
    """Coerce *values* to a 1-D float64 vector, rejecting non-finite entries."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise DimensionError(f"parameter vector must be 1-D, got shape {vec.shape}")
    if not np.isfinite(vec).all():
        raise NumericError("parameter vector contains NaN or infinity")
    return vec


def scale_add(accumulator: ParamVector, v: ParamVector, w: float) -> ParamVector:
    """Return ``accumulator + w * v`` as a new vector.

    Raises:
        DimensionError: if the two vectors differ in length.
        NumericError: if ``w`` is non-finite or the result overflows.
    """
    acc = np.asarray(accumulator, dtype=np.float64)
    vec = np.asarray(v, dtype=np.float64)
    if acc.shape != vec.shape or acc.ndim != 1:
        raise DimensionError(f"shape mismatch: {acc.shape} vs {vec.shape}")
    if not np.isfinite(w):
        raise NumericError(f"non-finite weight {w!r}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = acc + w * vec
    if not np.isfinite(out).all():
        raise NumericError("scale_add produced a non-finite entry")
    return out


def convex_combine(vectors: list[ParamVector], weights: list[float]) -> ParamVector:
    """Weighted sum of *vectors* with non-negative *weights* summing to one.

    Summation runs in input order (no pairwise or compensated summation) so
    results are reproducible across runs on one platform.

    Raises:
        DimensionError: empty input, length mismatch, or differing dims.
        WeightNormError: a negative weight, or weights not summing to 1
            within ``WEIGHT_SUM_TOL``.
    """
    if len(vectors) == 0 or len(vectors) != len(weights):
        raise DimensionError(
            f"need equal, non-zero counts of vectors and weights: "
            f"{len(vectors)} vs {len(weights)}"
        )
    ws = [float(w) for w in weights]
    for w in ws:
        if not np.isfinite(w) or w < 0.0:
            raise WeightNormError(f"invalid weight {w!r}")
    total = sum(ws)
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise WeightNormError(f"weights sum to {total!r}, expected 1 within {WEIGHT_SUM_TOL}")

    first = np.asarray(vectors[0], dtype=np.float64)
    out = ws[0] * first
    for vec, w in zip(vectors[1:], ws[1:]):
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != first.shape:
            raise DimensionError(f"dim mismatch: {arr.shape} vs {first.shape}")
        out += w * arr
    if not np.isfinite(out).all():
        raise NumericError("convex_combine produced a non-finite entry")
    return out
