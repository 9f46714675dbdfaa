"""Regularized canonical correlation analysis between two PHOC views.

Samples are rows (``n x d``).  Covariances are scatter sums, not averages,
so with ``lam = 0`` the projected training views satisfy
``sum_i (W.T x_i)(W.T x_i).T = I`` exactly as written.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DEFAULT_LAMBDA",
    "CcaError",
    "IllConditionedError",
    "CcaModel",
    "fit",
    "identity_model",
    "project_query",
    "project_candidates",
]

DEFAULT_LAMBDA = 1e-3
EIG_FLOOR = 1e-12


class CcaError(ValueError):
    pass


class IllConditionedError(CcaError):
    def __init__(self, view: str, ratio: float):
        super().__init__(
            f"covariance of view {view!r} is singular (min/max eigenvalue "
            f"{ratio:.3g}); fit with lam > 0"
        )
        self.view = view


@dataclass(frozen=True, eq=False)
class CcaModel:
    """Paired projections ``Wx``, ``Wy`` (each ``d x p``) and training means."""

    Wx: np.ndarray
    Wy: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    lam: float
    correlations: np.ndarray
    identity: bool = False

    @property
    def d(self) -> int:
        return self.Wx.shape[0]

    @property
    def p(self) -> int:
        return self.Wx.shape[1]

    def same_as(self, other: "CcaModel") -> bool:
        return (
            self.lam == other.lam
            and self.identity == other.identity
            and all(
                np.array_equal(a, b)
                for a, b in zip(
                    (self.Wx, self.Wy, self.mean_x, self.mean_y, self.correlations),
                    (other.Wx, other.Wy, other.mean_x, other.mean_y, other.correlations),
                )
            )
        )


def identity_model(d: int) -> CcaModel:
    """The no-projection model: ``Wx = Wy = I``, zero means."""
    eye = np.eye(d)
    zero = np.zeros(d)
    return CcaModel(eye, eye, zero, zero.copy(), 0.0, np.ones(d), identity=True)


def _inv_sqrt(C: np.ndarray, lam: float, view: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(C + lam * np.eye(C.shape[0]))
    top = vals[-1]
    if top <= 0:
        raise IllConditionedError(view, 0.0)
    floor = EIG_FLOOR * top
    small = vals < floor
    if small.any():
        if lam == 0:
            raise IllConditionedError(view, float(vals[0] / top))
        warnings.warn(
            f"{int(small.sum())} eigenvalue(s) of view {view!r} clamped to "
            f"{floor:.3g}",
            RuntimeWarning,
            stacklevel=3,
        )
        vals = np.maximum(vals, floor)
    return (vecs / np.sqrt(vals)) @ vecs.T


def _fix_signs(Wx: np.ndarray, Wy: np.ndarray) -> None:
    for j in range(Wx.shape[1]):
        col = Wx[:, j]
        big = np.abs(col) > 1e-12 * np.abs(col).max()
        if big.any() and col[np.argmax(big)] < 0:
            Wx[:, j] *= -1
            Wy[:, j] *= -1


def fit(X, Y, lam: float = DEFAULT_LAMBDA, p: int | None = None) -> CcaModel:
    """Fit regularized CCA on paired rows of ``X`` (clean) and ``Y`` (noisy).

    Each view's scatter matrix plus ``lam * I`` is whitened through its
    symmetric eigendecomposition; the SVD of the whitened cross-scatter gives
    the canonical directions and correlations (sorted non-increasing).
    ``p`` defaults to ``min(d, n - 1)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2:
        raise CcaError("views must be 2-D (samples x features)")
    n = X.shape[0]
    if Y.shape[0] != n:
        raise CcaError(f"views have {n} and {Y.shape[0]} samples")
    if n < 2:
        raise CcaError("at least two pairs are required")
    if lam < 0:
        raise CcaError(f"lam must be non-negative, got {lam}")
    dx, dy = X.shape[1], Y.shape[1]
    if p is None:
        p = min(dx, dy, n - 1)
    if not 1 <= p <= min(dx, dy):
        raise CcaError(f"p={p} exceeds achievable rank {min(dx, dy)}")

    mean_x = X.mean(axis=0)
    mean_y = Y.mean(axis=0)
    Xc = X - mean_x
    Yc = Y - mean_y

    Kx = _inv_sqrt(Xc.T @ Xc, lam, "x")
    Ky = _inv_sqrt(Yc.T @ Yc, lam, "y")
    T = Kx @ (Xc.T @ Yc) @ Ky
    U, s, Vt = np.linalg.svd(T, full_matrices=False)

    Wx = Kx @ U[:, :p]
    Wy = Ky @ Vt[:p].T
    _fix_signs(Wx, Wy)
    return CcaModel(Wx, Wy, mean_x, mean_y, float(lam), s[:p].copy())


def project_query(model: CcaModel, v) -> np.ndarray:
    """``Wx.T (v - mean_x)`` for a single clean-view vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.d,):
        raise CcaError(f"expected a vector of length {model.d}, got shape {v.shape}")
    if model.identity:
        return v.copy()
    return model.Wx.T @ (v - model.mean_x)


def project_candidates(model: CcaModel, M) -> np.ndarray:
    """Project candidate rows ``M`` (``m x d``) through ``Wy``; returns ``m x p``.

    Each row is projected with the same matrix-vector product as a single
    candidate would be, so batching never changes the bits.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != model.d:
        raise CcaError(f"expected rows of length {model.d}, got shape {M.shape}")
    if model.identity:
        return M.copy()
    out = np.empty((M.shape[0], model.p))
    Wt = np.ascontiguousarray(model.Wy.T)
    for i, row in enumerate(M):
        out[i] = Wt @ (row - model.mean_y)
    return out
