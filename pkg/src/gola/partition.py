"""Offline rank partitioning: importance scoring, sorting, crucial split and
capacity-balanced grouping of the redundant ranks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gola.adapter import AdapterPair, apply_permutation, check_permutation

MAX_KMEANS_ITER = 100


class PartitionError(ValueError):
    pass


class DegenerateInputError(PartitionError):
    pass


@dataclass(frozen=True)
class ImportanceScores:
    scores: np.ndarray
    topk: int
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class RankPartition:
    """Sort order, crucial count and balanced groups.

    ``sigma[i]`` is the original index of the rank placed in slot ``i``.
    ``groups`` hold slot indices (``k <= idx < r``) in the sorted adapter.
    """

    sigma: np.ndarray
    k: int
    groups: tuple[np.ndarray, ...]
    seed: int = 0
    degenerate: bool = False

    @property
    def r(self) -> int:
        return len(self.sigma)

    @property
    def n(self) -> int:
        return len(self.groups)

    @property
    def group_size(self) -> int:
        return (self.r - self.k) // self.n

    def to_dict(self) -> dict:
        return {
            "sigma": [int(s) for s in self.sigma],
            "k": int(self.k),
            "n": self.n,
            "r": self.r,
            "groups": [[int(g) for g in grp] for grp in self.groups],
            "seed": int(self.seed),
            "degenerate": bool(self.degenerate),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RankPartition":
        sigma = check_permutation(np.asarray(d["sigma"], dtype=np.intp), len(d["sigma"]))
        groups = tuple(np.asarray(g, dtype=np.intp) for g in d["groups"])
        part = cls(sigma, int(d["k"]), groups, int(d.get("seed", 0)), bool(d.get("degenerate", False)))
        part.validate()
        return part

    def validate(self):
        r, k = self.r, self.k
        if not 1 <= k < r:
            raise PartitionError(f"crucial count k={k} must satisfy 1 <= k < r={r}")
        if self.n < 2:
            raise PartitionError(f"need at least 2 groups, got {self.n}")
        sizes = {len(g) for g in self.groups}
        if len(sizes) != 1 or sizes.pop() * self.n != r - k:
            raise PartitionError("groups are not balanced over the redundant slots")
        covered = np.sort(np.concatenate(self.groups))
        if not np.array_equal(covered, np.arange(k, r)):
            raise PartitionError("groups must cover each redundant slot exactly once")

    def equals(self, other: "RankPartition") -> bool:
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True, eq=False)
class GroupedAdapter:
    """Sorted adapter with its crucial slots frozen and redundant slots grouped."""

    adapter: AdapterPair
    partition: RankPartition | None
    frozen_mask: np.ndarray = field(repr=False)
    k: int

    @property
    def groups(self) -> tuple[np.ndarray, ...]:
        if self.partition is None:
            raise PartitionError("groups have not been assigned yet")
        return self.partition.groups

    @property
    def n(self) -> int:
        return len(self.groups)

    def A_group(self, i: int) -> np.ndarray:
        return self.adapter.A[self.groups[i], :]

    def B_group(self, i: int) -> np.ndarray:
        return self.adapter.B[:, self.groups[i]]

    @property
    def A_crucial(self) -> np.ndarray:
        return self.adapter.A[: self.k]

    @property
    def B_crucial(self) -> np.ndarray:
        return self.adapter.B[:, : self.k]

    @property
    def A_redundant(self) -> np.ndarray:
        return self.adapter.A[self.k :]

    @property
    def B_redundant(self) -> np.ndarray:
        return self.adapter.B[:, self.k :]

    def with_adapter(self, adapter: AdapterPair) -> "GroupedAdapter":
        if adapter.r != self.adapter.r:
            raise PartitionError("replacement adapter has a different rank")
        return GroupedAdapter(adapter, self.partition, self.frozen_mask, self.k)


def center_columns(B) -> np.ndarray:
    """Subtract the mean rank vector from every column of ``B``."""
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[1] < 2:
        raise DegenerateInputError("centering needs a c x r matrix with r >= 2")
    return B - B.mean(axis=1, keepdims=True)


def rank_importance(B, k: int) -> ImportanceScores:
    """Score each rank (column of ``B``) by its weighted projection onto the
    top-``k`` principal directions of the centered rank vectors.

    The score of rank ``i`` is the L2 norm, over the ``k`` reference
    directions, of ``<bbar_i, u_j> * s_j`` where ``u_j`` / ``s_j`` are the
    left singular vectors / values of the centered matrix.
    """
    Bbar = center_columns(B)
    c, r = Bbar.shape
    if not 1 <= k <= min(c, r):
        raise PartitionError(f"k={k} must lie in [1, min(c, r)] = [1, {min(c, r)}]")
    U, s, _ = np.linalg.svd(Bbar, full_matrices=False)
    scale = np.max(np.abs(np.asarray(B, dtype=np.float64)))
    if s[0] <= np.finfo(np.float64).eps * max(c, r) * scale:
        return ImportanceScores(np.zeros(r), k, degenerate=True)
    ref = U[:, :k].T  # k x c reference directions
    proj = (Bbar.T @ ref.T) * s[:k]
    return ImportanceScores(np.linalg.norm(proj, axis=1), k)


def sort_ranks(scores: ImportanceScores) -> np.ndarray:
    """Descending order of scores; ties keep ascending original index."""
    return np.argsort(-np.asarray(scores.scores), kind="stable")


def split_crucial(adapter: AdapterPair, sigma, k: int) -> GroupedAdapter:
    if not 1 <= k < adapter.r:
        raise PartitionError(f"crucial count k={k} must satisfy 1 <= k < r={adapter.r}")
    permuted = apply_permutation(adapter, sigma)
    mask = np.zeros(adapter.r, dtype=bool)
    mask[:k] = True
    mask.flags.writeable = False
    return GroupedAdapter(permuted, None, mask, k)


def _check_divisible(m: int, n: int):
    if n < 2:
        raise PartitionError(f"need at least 2 groups, got n={n}")
    if m % n != 0:
        raise PartitionError(
            f"{m} redundant ranks cannot be split into {n} equal groups; "
            f"choose k or n so that n divides r - k"
        )


def _kmeans_pp(X, n, rng):
    m = X.shape[0]
    chosen = [int(rng.integers(m))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, n):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(m, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(m), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return X[chosen].copy()


def _balanced_assign(cost, cap):
    m, n = cost.shape
    best = np.sort(cost, axis=1)
    # largest regret first: points that lose most by missing their nearest centroid
    regret = best[:, 1] - best[:, 0]
    labels = np.empty(m, dtype=np.intp)
    room = np.full(n, cap)
    for p in np.argsort(-regret, kind="stable"):
        for c in np.argsort(cost[p], kind="stable"):
            if room[c] > 0:
                labels[p] = c
                room[c] -= 1
                break
    return labels


def cluster_groups(B_u, n: int, seed: int) -> list[np.ndarray]:
    """Split the columns of ``B_u`` into ``n`` equal-size groups.

    Capacity-constrained k-means: k-means++ seeding, then alternating greedy
    balanced assignment and centroid updates until the labels stop changing.
    Returned indices are column positions within ``B_u``.
    """
    X = np.asarray(B_u, dtype=np.float64).T
    m = X.shape[0]
    _check_divisible(m, n)
    cap = m // n
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(X, n, rng)
    labels = None
    for _ in range(MAX_KMEANS_ITER):
        cost = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = _balanced_assign(cost, cap)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(n):
            centroids[c] = X[labels == c].mean(axis=0)
    return [np.flatnonzero(labels == c) for c in range(n)]


def partition(adapter: AdapterPair, k: int, n: int, seed: int = 0) -> GroupedAdapter:
    """Score, sort, freeze the top-``k`` ranks and group the rest into ``n``."""
    r = adapter.r
    if not 1 <= k < r:
        raise PartitionError(f"crucial count k={k} must satisfy 1 <= k < r={r}")
    _check_divisible(r - k, n)
    scores = rank_importance(adapter.B, k)
    sigma = np.arange(r) if scores.degenerate else sort_ranks(scores)
    grouped = split_crucial(adapter, sigma, k)
    rel = cluster_groups(grouped.B_redundant, n, seed)
    groups = tuple(np.sort(g) + k for g in rel)
    part = RankPartition(sigma, k, groups, seed, scores.degenerate)
    part.validate()
    return GroupedAdapter(grouped.adapter, part, grouped.frozen_mask, k)


def apply_partition(adapter: AdapterPair, part: RankPartition) -> GroupedAdapter:
    """Rebuild a grouped adapter from an unsorted adapter and a stored partition."""
    if adapter.r != part.r:
        raise PartitionError(f"partition has r={part.r} but adapter has r={adapter.r}")
    grouped = split_crucial(adapter, part.sigma, part.k)
    return GroupedAdapter(grouped.adapter, part, grouped.frozen_mask, part.k)
