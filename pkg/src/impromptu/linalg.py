"""Small symmetric-matrix helpers for the feature-distance metric."""

from __future__ import annotations

import numpy as np


class AsymmetryError(ValueError):
    pass


def matrix_sqrt_psd(m: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix.

    Eigenvalues below zero (numerical noise) are clamped to zero. Raises
    AsymmetryError if the input is not symmetric within tol (relative to
    the largest entry).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    if float(np.abs(m - m.T).max()) > tol * scale:
        raise AsymmetryError("matrix_sqrt_psd: input asymmetric beyond tolerance")
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T
