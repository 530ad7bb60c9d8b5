"""Low-rank adapter algebra: forward pass, merging and rank permutation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


class RankWarning(UserWarning):
    pass


def _as_matrix(name, value):
    arr = np.asarray(value)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


@dataclass(frozen=True, eq=False)
class AdapterPair:
    """Frozen base weight ``W`` with a trainable low-rank update ``B @ A``.

    ``W`` is ``c_out x c_in``, ``A`` is ``r x c_in`` and ``B`` is ``c_out x r``.
    Arrays are made read-only on construction.
    """

    W: np.ndarray
    A: np.ndarray
    B: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        W = _as_matrix("W", self.W)
        A = _as_matrix("A", self.A)
        B = _as_matrix("B", self.B)
        c_out, c_in = W.shape
        r = A.shape[0]
        if r < 1:
            raise ShapeError("rank must be positive (A has zero rows)")
        if A.shape[1] != c_in:
            raise ShapeError(f"input axis mismatch: A has {A.shape[1]} columns, W has {c_in}")
        if B.shape[1] != r:
            raise ShapeError(f"rank axis mismatch: B has {B.shape[1]} columns, A has {r} rows")
        if B.shape[0] != c_out:
            raise ShapeError(f"output axis mismatch: B has {B.shape[0]} rows, W has {c_out}")
        if r > min(c_out, c_in):
            raise ShapeError(f"rank {r} exceeds min(c_out, c_in) = {min(c_out, c_in)}")
        if r > min(c_out, c_in) / 2:
            warnings.warn(
                f"rank {r} is above half the layer width {min(c_out, c_in)}",
                RankWarning,
                stacklevel=3,
            )
        for name, arr in (("W", W), ("A", A), ("B", B)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if not np.isfinite(self.scale):
            raise ValueError("scale must be finite")
        for name, arr in (("W", W), ("A", A), ("B", B)):
            arr = arr.copy() if arr.flags.writeable else arr
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def r(self) -> int:
        return self.A.shape[0]

    @property
    def c_out(self) -> int:
        return self.W.shape[0]

    @property
    def c_in(self) -> int:
        return self.W.shape[1]

    def with_factors(self, A, B) -> "AdapterPair":
        return AdapterPair(self.W, A, B, self.scale)


def forward(adapter: AdapterPair, h) -> np.ndarray:
    """Return ``W h + scale * B (A h)``.

    ``h`` is either a single vector of length ``c_in`` or a ``c_in x m``
    batch of column vectors; the result has the matching shape.
    """
    h = np.asarray(h)
    if h.ndim not in (1, 2):
        raise ShapeError(f"features must be a vector or a c_in x m matrix, got ndim={h.ndim}")
    if h.shape[0] != adapter.c_in:
        raise ShapeError(f"input axis mismatch: features have {h.shape[0]} rows, W expects {adapter.c_in}")
    if h.ndim == 2 and h.shape[1] < 1:
        raise ShapeError("batch axis is empty")
    return adapter.W @ h + adapter.scale * (adapter.B @ (adapter.A @ h))


def effective_update(adapter: AdapterPair) -> np.ndarray:
    return adapter.scale * (adapter.B @ adapter.A)


def merge(adapter: AdapterPair) -> np.ndarray:
    """Fold the low-rank branch into a plain weight matrix."""
    return adapter.W + effective_update(adapter)


def check_permutation(sigma, r: int) -> np.ndarray:
    sigma = np.asarray(sigma)
    if sigma.ndim != 1 or sigma.shape[0] != r:
        raise ValueError(f"permutation must have length {r}, got shape {sigma.shape}")
    if not np.issubdtype(sigma.dtype, np.integer):
        raise ValueError("permutation entries must be integers")
    if not np.array_equal(np.sort(sigma), np.arange(r)):
        raise ValueError("sigma is not a permutation of range(r)")
    return sigma.astype(np.intp)


def apply_permutation(adapter: AdapterPair, sigma) -> AdapterPair:
    """Reorder ranks: slot ``i`` of the result holds original rank ``sigma[i]``.

    Rows of ``A`` and columns of ``B`` move together, so ``B @ A`` is unchanged.
    """
    sigma = check_permutation(sigma, adapter.r)
    return adapter.with_factors(adapter.A[sigma, :], adapter.B[:, sigma])
