"""Group-orthogonal low-rank adaptation toolkit."""

__version__ = "0.1.0"

from gola.adapter import (
    AdapterPair,
    RankWarning,
    ShapeError,
    apply_permutation,
    effective_update,
    forward,
    merge,
)
from gola.partition import (
    GroupedAdapter,
    ImportanceScores,
    PartitionError,
    RankPartition,
    center_columns,
    cluster_groups,
    partition,
    rank_importance,
    sort_ranks,
    split_crucial,
)
from gola.orth import (
    OrthHeatmap,
    orth_heatmap,
    orth_loss,
    orth_loss_all_pairs,
    orth_loss_grad,
    sample_pair,
    singular_spectrum,
)

__all__ = [
    "AdapterPair",
    "GroupedAdapter",
    "ImportanceScores",
    "OrthHeatmap",
    "PartitionError",
    "RankPartition",
    "RankWarning",
    "ShapeError",
    "apply_permutation",
    "center_columns",
    "cluster_groups",
    "effective_update",
    "forward",
    "merge",
    "orth_heatmap",
    "orth_loss",
    "orth_loss_all_pairs",
    "orth_loss_grad",
    "partition",
    "rank_importance",
    "sample_pair",
    "singular_spectrum",
    "sort_ranks",
    "split_crucial",
]
