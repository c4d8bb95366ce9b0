"""Third-order tensors and the M-product algebra.

A tensor is a float64 ``ndarray`` of shape ``(d1, d2, d3)``; the third axis
is time, so ``W[:, :, k]`` is frontal slice ``k``.  The M-product of two
tensors is the facewise (slice-by-slice) matrix product carried out in the
domain obtained by mixing the time axis with an invertible matrix ``M``::

    W * Y = ((W x3 M) facewise (Y x3 M)) x3 inv(M)

``inv(M)`` is never formed; it is applied through a cached factorization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg


class SizeError(ValueError):
    """Raised when tensor or matrix dimensions are incompatible."""


def as_tensor3(W, name: str = "tensor") -> np.ndarray:
    """Return ``W`` as a float64 array, checking it is third order."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 3:
        raise SizeError(f"{name} must be third order, got shape {W.shape}")
    return W


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Invertible ``T x T`` matrix mixing the time axis.

    Use the ``banded_mean``, ``identity``, ``dft`` or ``custom`` constructors
    rather than instantiating directly.  ``kind`` records which one built the
    matrix; lower-triangular kinds are inverted by forward substitution, the
    others through an LU factorization computed once at construction.
    """

    matrix: np.ndarray
    kind: str
    bandwidth: int | None = None
    _lu: tuple | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_lower_triangular(self) -> bool:
        return self.kind in ("banded_mean", "identity")

    def apply(self, X: np.ndarray, transpose: bool = False) -> np.ndarray:
        """Multiply the last axis of ``X`` by ``M`` (or ``M^T``)."""
        M = self.matrix.T if transpose else self.matrix
        return X @ M.T

    def solve(self, X: np.ndarray, transpose: bool = False) -> np.ndarray:
        """Multiply the last axis of ``X`` by ``inv(M)`` (or ``inv(M)^T``)."""
        shape = X.shape
        rhs = X.reshape(-1, shape[-1]).T
        if self.kind == "identity":
            return X.copy()
        if self.is_lower_triangular:
            out = scipy.linalg.solve_triangular(
                self.matrix, rhs, lower=True, trans=1 if transpose else 0,
                check_finite=False)
        else:
            out = scipy.linalg.lu_solve(self._lu, rhs, trans=1 if transpose else 0,
                                        check_finite=False)
        return np.ascontiguousarray(out.T).reshape(shape)

    @classmethod
    def banded_mean(cls, T: int, b: int) -> "MixingMatrix":
        return build_banded_mean(T, b)

    @classmethod
    def identity(cls, T: int) -> "MixingMatrix":
        _check_size(T)
        return cls(np.eye(T), "identity")

    @classmethod
    def dft(cls, T: int) -> "MixingMatrix":
        """Real orthonormal DCT-II matrix, the real-valued stand-in for the DFT."""
        _check_size(T)
        C = scipy.fft.dct(np.eye(T), type=2, norm="ortho", axis=0)
        return cls(C, "dft", _lu=scipy.linalg.lu_factor(C))

    @classmethod
    def custom(cls, matrix, rcond: float = 1e-12) -> "MixingMatrix":
        """Wrap an arbitrary square matrix, rejecting (numerically) singular ones."""
        M = np.array(matrix, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
            raise SizeError(f"mixing matrix must be square and non-empty, got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ValueError("mixing matrix has non-finite entries")
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= rcond * s[0]:
            raise ValueError(
                f"mixing matrix is singular or ill-conditioned (sigma_min/sigma_max="
                f"{s[-1] / s[0]:.3e})")
        return cls(M, "custom", _lu=scipy.linalg.lu_factor(M))


def _check_size(T: int) -> None:
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")


def build_banded_mean(T: int, b: int) -> MixingMatrix:
    """Lower-triangular moving-average mixing matrix.

    Row ``t`` (1-indexed) averages the ``min(b, t)`` most recent time steps:
    it holds ``1/min(b, t)`` in columns ``max(1, t-b+1) .. t``.

    Parameters
    ----------
    T : int
        Number of time steps.
    b : int
        Bandwidth; values larger than ``T`` behave like ``b = T``.

    Returns
    -------
    MixingMatrix
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if int(b) != b or b < 1:
        raise ValueError(f"bandwidth b must be a positive integer, got {b}")
    T, b = int(T), int(b)
    M = np.zeros((T, T))
    for t in range(1, T + 1):
        width = min(b, t)
        M[t - 1, t - width:t] = 1.0 / width
    return MixingMatrix(M, "banded_mean", bandwidth=b)


def _check_depth(W: np.ndarray, M: MixingMatrix) -> None:
    if W.shape[2] != M.size:
        raise SizeError(
            f"tensor depth d3={W.shape[2]} does not match mixing matrix size T={M.size}")


def m_transform(W, M: MixingMatrix) -> np.ndarray:
    """Mode-3 product ``W x3 M``: ``out[i, j, t] = sum_k M[t, k] W[i, j, k]``."""
    W = as_tensor3(W)
    _check_depth(W, M)
    return M.apply(W)


def m_transform_inverse(W, M: MixingMatrix) -> np.ndarray:
    """Mode-3 product with ``inv(M)``, computed by solving rather than inverting."""
    W = as_tensor3(W)
    _check_depth(W, M)
    return M.solve(W)


def facewise_product(W, Y) -> np.ndarray:
    """Slice-by-slice matrix product: ``out[:, :, k] = W[:, :, k] @ Y[:, :, k]``."""
    W = as_tensor3(W, "W")
    Y = as_tensor3(Y, "Y")
    if W.shape[1] != Y.shape[0]:
        raise SizeError(f"inner dimensions differ: W.d2={W.shape[1]}, Y.d1={Y.shape[0]}")
    if W.shape[2] != Y.shape[2]:
        raise SizeError(f"depths differ: W.d3={W.shape[2]}, Y.d3={Y.shape[2]}")
    out = np.matmul(W.transpose(2, 0, 1), Y.transpose(2, 0, 1))
    return np.ascontiguousarray(out.transpose(1, 2, 0))


def m_product(W, Y, M: MixingMatrix) -> np.ndarray:
    """M-product ``W * Y`` of an ``(I, J, T)`` and a ``(J, Q, T)`` tensor."""
    W = as_tensor3(W, "W")
    Y = as_tensor3(Y, "Y")
    _check_depth(W, M)
    _check_depth(Y, M)
    return m_transform_inverse(facewise_product(m_transform(W, M), m_transform(Y, M)), M)


def frobenius_norm(W) -> float:
    W = np.asarray(W, dtype=np.float64)
    return float(np.sqrt(np.sum(W * W)))
