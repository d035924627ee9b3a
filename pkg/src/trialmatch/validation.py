"""Small input-validation helpers used across modules."""

from __future__ import annotations

import numpy as np

from .errors import DimMismatch


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array, optionally checking its length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimMismatch(f"{name}: expected 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimMismatch(f"{name}: expected length {dim}, got {v.shape[0]}")
    return v


def as_matrix(x, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 2:
        raise DimMismatch(f"{name}: expected 2-D, got shape {v.shape}")
    if cols is not None and v.shape[1] != cols:
        raise DimMismatch(f"{name}: expected {cols} columns, got {v.shape[1]}")
    return v


def check_finite(x: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def check_probability_vector(p: np.ndarray, tol: float = 1e-6) -> None:
    if np.any(p < -tol) or np.any(p > 1 + tol):
        raise ValueError("probabilities outside [0, 1]")
    if abs(float(p.sum()) - 1.0) > tol:
        raise ValueError(f"probabilities sum to {p.sum()}, not 1")
