import numpy as np

from gola.adapter import AdapterPair
from gola.partition import GroupedAdapter, RankPartition


def random_adapter(rng, c_out, c_in, r, dtype=np.float64, scale=1.0):
    W = rng.standard_normal((c_out, c_in)) / np.sqrt(c_in)
    A = rng.standard_normal((r, c_in)) / np.sqrt(c_in)
    B = rng.standard_normal((c_out, r)) / np.sqrt(r)
    return AdapterPair(W.astype(dtype), A.astype(dtype), B.astype(dtype), scale)


def grouped_from(A, B, k, groups, W=None):
    """Grouped adapter with hand-picked groups (slots already sorted)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    r = A.shape[0]
    if W is None:
        W = np.zeros((B.shape[0], A.shape[1]))
    part = RankPartition(np.arange(r), k, tuple(np.asarray(g) for g in groups))
    part.validate()
    return GroupedAdapter(AdapterPair(W, A, B), part, np.arange(r) < k, k)


def random_grouped(rng, c_out, c_in, k, n, g):
    r = k + n * g
    A = rng.standard_normal((r, c_in))
    B = rng.standard_normal((c_out, r))
    groups = [list(range(k + i * g, k + (i + 1) * g)) for i in range(n)]
    return grouped_from(A, B, k, groups)
