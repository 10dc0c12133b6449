"""Symmetric matrix functions via eigendecomposition."""
import numpy as np

from .errors import InvalidMeasureError

#: relative slack below zero tolerated before a PSD matrix is rejected
NEG_EIG_TOL = 1e-8


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _clamped_eigh(a, what):
    w, v = np.linalg.eigh(symmetrize(a))
    scale = np.maximum(np.abs(w).max(axis=-1, keepdims=True), 1.0)
    if np.any(w < -NEG_EIG_TOL * scale):
        raise InvalidMeasureError(f"{what}: matrix is not positive semi-definite (min eig {w.min():.3e})")
    return np.clip(w, 0.0, None), v


def sqrtm_psd(a):
    """Principal square root of a PSD matrix (or a stack of them)."""
    w, v = _clamped_eigh(a, "sqrtm")
    return (v * np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def inv_sqrtm_spd(a):
    w, v = np.linalg.eigh(symmetrize(a))
    if np.any(w <= 0):
        raise InvalidMeasureError("inverse square root of a singular matrix")
    return (v / np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def trace_sqrtm_psd(a):
    """``Tr(a^{1/2})`` for PSD ``a``; batched over leading axes."""
    w = np.linalg.eigvalsh(symmetrize(a))
    scale = np.maximum(np.abs(w).max(axis=-1, keepdims=True), 1.0)
    if np.any(w < -NEG_EIG_TOL * scale):
        raise InvalidMeasureError(f"trace sqrtm: matrix is not positive semi-definite (min eig {w.min():.3e})")
    return np.sqrt(np.clip(w, 0.0, None)).sum(axis=-1)
