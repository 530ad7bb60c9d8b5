"""Inter-group orthogonal constraint and orthogonality/spectrum analysis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from gola.adapter import AdapterPair
from gola.partition import GroupedAdapter


class OrthGrad(NamedTuple):
    A_i: np.ndarray
    A_j: np.ndarray
    B_i: np.ndarray
    B_j: np.ndarray


@dataclass(frozen=True)
class OrthHeatmap:
    values: np.ndarray
    normalization: str
    matrix: str


def _check_pair(grouped: GroupedAdapter, pair):
    i, j = (int(p) for p in pair)
    n = grouped.n
    if i == j:
        raise ValueError(f"orthogonal loss needs two different groups, got ({i}, {j})")
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"group pair ({i}, {j}) out of range for n={n}")
    return i, j


def cross_grams(grouped: GroupedAdapter, pair):
    """Channel-space ``A_iᵀA_j`` (c_in x c_in) and rank-space ``B_iᵀB_j`` (g x g)."""
    i, j = _check_pair(grouped, pair)
    A_i, A_j = grouped.A_group(i), grouped.A_group(j)
    B_i, B_j = grouped.B_group(i), grouped.B_group(j)
    return A_i.T @ A_j, B_i.T @ B_j


def orth_loss(grouped: GroupedAdapter, pair) -> float:
    """Entrywise L1 mass of both cross-Gram matrices for one group pair."""
    C_A, C_B = cross_grams(grouped, pair)
    return float(np.abs(C_A).sum() + np.abs(C_B).sum())


def orth_loss_grad(grouped: GroupedAdapter, pair) -> OrthGrad:
    """Subgradient of :func:`orth_loss` w.r.t. the four group slices.

    Uses sign(0) = 0, so exactly orthogonal groups are stationary.
    ``A_i``/``A_j`` are ``g x c_in`` row blocks, ``B_i``/``B_j`` ``c_out x g``
    column blocks, matching the slices returned by the grouped adapter.
    """
    i, j = _check_pair(grouped, pair)
    A_i, A_j = grouped.A_group(i), grouped.A_group(j)
    B_i, B_j = grouped.B_group(i), grouped.B_group(j)
    S_A = np.sign(A_i.T @ A_j)
    S_B = np.sign(B_i.T @ B_j)
    return OrthGrad(A_j @ S_A.T, A_i @ S_A, B_j @ S_B.T, B_i @ S_B)


def orth_grad_full(grouped: GroupedAdapter, pair):
    """Scatter the pair subgradient into full-size ``(dA, dB)`` arrays."""
    i, j = _check_pair(grouped, pair)
    g = orth_loss_grad(grouped, (i, j))
    dA = np.zeros_like(grouped.adapter.A, dtype=np.float64)
    dB = np.zeros_like(grouped.adapter.B, dtype=np.float64)
    Gi, Gj = grouped.groups[i], grouped.groups[j]
    dA[Gi] += g.A_i
    dA[Gj] += g.A_j
    dB[:, Gi] += g.B_i
    dB[:, Gj] += g.B_j
    return dA, dB


def orth_loss_all_pairs(grouped: GroupedAdapter) -> float:
    # unordered pairs; offline analysis only
    n = grouped.n
    return sum(orth_loss(grouped, (i, j)) for i in range(n) for j in range(i + 1, n))


def sample_pair(n: int, rng: np.random.Generator) -> tuple[int, int]:
    """Draw one unordered pair of distinct groups uniformly; advances ``rng``."""
    if n < 2:
        raise ValueError(f"need at least 2 groups to sample a pair, got n={n}")
    iu, ju = np.triu_indices(n, k=1)
    idx = int(rng.integers(len(iu)))
    return int(iu[idx]), int(ju[idx])


def _unit_columns(M):
    norms = np.linalg.norm(M, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return M / safe


def orth_heatmap(grouped: GroupedAdapter, matrix: str = "B") -> OrthHeatmap:
    """Normalized inter-group orthogonality.

    Every rank vector (row of ``A`` or column of ``B``) is scaled to unit
    length; entry ``(i, j)`` is the mean absolute cosine between the rank
    vectors of groups ``i`` and ``j``, and the map is divided by its maximum.
    """
    if matrix == "A":
        vecs = _unit_columns(np.asarray(grouped.adapter.A, dtype=np.float64).T)
    elif matrix == "B":
        vecs = _unit_columns(np.asarray(grouped.adapter.B, dtype=np.float64))
    else:
        raise ValueError(f"matrix must be 'A' or 'B', got {matrix!r}")
    n = grouped.n
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            gram = vecs[:, grouped.groups[i]].T @ vecs[:, grouped.groups[j]]
            H[i, j] = H[j, i] = np.abs(gram).mean()
    top = H.max()
    if top > 0:
        H = H / top
    return OrthHeatmap(H, "unit rank vectors, mean |cosine|, divided by max", matrix)


def offdiag_mass(heatmap: OrthHeatmap | np.ndarray) -> float:
    H = heatmap.values if isinstance(heatmap, OrthHeatmap) else np.asarray(heatmap)
    n = H.shape[0]
    return float((H.sum() - np.trace(H)) / (n * (n - 1)))


def singular_spectrum(adapter: AdapterPair) -> np.ndarray:
    """Singular values of the effective update, descending, at most ``r`` of them."""
    B = np.asarray(adapter.B, dtype=np.float64)
    A = np.asarray(adapter.A, dtype=np.float64)
    s = np.linalg.svd(adapter.scale * (B @ A), compute_uv=False)
    return s[: adapter.r]


def spectrum_histogram(spectrum, bins: int = 50):
    spectrum = np.asarray(spectrum, dtype=np.float64)
    top = float(spectrum.max()) if spectrum.size else 0.0
    counts, edges = np.histogram(spectrum, bins=bins, range=(0.0, top if top > 0 else 1.0))
    return counts, edges
