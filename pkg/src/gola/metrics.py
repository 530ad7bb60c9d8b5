"""Tracking evaluation: precision / success rates and their dual-modality forms.

Boxes are ``(x, y, w, h)`` with ``(x, y)`` the top-left corner, in pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SR_GRID = np.arange(21) / 20.0
DEFAULT_XI_PR = 20.0


class BBox(NamedTuple):
    x: float
    y: float
    w: float
    h: float


def _as_boxes(boxes, name):
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"{name} must be an N x 4 array of (x, y, w, h)")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coordinates")
    if np.any(arr[:, 2:] < 0):
        raise ValueError(f"{name} has negative width or height")
    return arr


@dataclass(frozen=True, eq=False)
class BBoxSequence:
    pred: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        pred = _as_boxes(self.pred, "pred")
        truth = _as_boxes(self.truth, "truth")
        if len(pred) != len(truth):
            raise ValueError(f"{len(pred)} predictions but {len(truth)} ground-truth boxes")
        if len(pred) < 1:
            raise ValueError("sequence needs at least one frame")
        object.__setattr__(self, "pred", pred)
        object.__setattr__(self, "truth", truth)

    def __len__(self):
        return len(self.pred)


@dataclass(frozen=True, eq=False)
class ModalPair:
    visible: BBoxSequence
    thermal: BBoxSequence

    def __post_init__(self):
        if len(self.visible) != len(self.thermal):
            raise ValueError(
                f"modalities differ in length: visible {len(self.visible)}, thermal {len(self.thermal)}"
            )


def center_errors(pred, truth) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(truth, dtype=np.float64).reshape(-1, 4)
    dx = (p[:, 0] + p[:, 2] / 2) - (g[:, 0] + g[:, 2] / 2)
    dy = (p[:, 1] + p[:, 3] / 2) - (g[:, 1] + g[:, 3] / 2)
    return np.hypot(dx, dy)


def ious(pred, truth) -> np.ndarray:
    """Per-frame IoU; frames whose union has zero area score 0."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(truth, dtype=np.float64).reshape(-1, 4)
    # areas from corners so identical boxes give intersection == area exactly
    px2, py2 = p[:, 0] + p[:, 2], p[:, 1] + p[:, 3]
    gx2, gy2 = g[:, 0] + g[:, 2], g[:, 1] + g[:, 3]
    iw = np.clip(np.minimum(px2, gx2) - np.maximum(p[:, 0], g[:, 0]), 0, None)
    ih = np.clip(np.minimum(py2, gy2) - np.maximum(p[:, 1], g[:, 1]), 0, None)
    inter = iw * ih
    union = (px2 - p[:, 0]) * (py2 - p[:, 1]) + (gx2 - g[:, 0]) * (gy2 - g[:, 1]) - inter
    out = np.zeros_like(inter)
    ok = union > 0
    out[ok] = inter[ok] / union[ok]
    return np.clip(out, 0.0, 1.0)


def center_error(p, g) -> float:
    return float(center_errors(p, g)[0])


def iou(p, g) -> float:
    return float(ious(p, g)[0])


def _precision(dist, xi_pr):
    if not xi_pr > 0:
        raise ValueError(f"precision threshold must be positive, got {xi_pr}")
    return float(np.mean(dist < xi_pr))


def _success(overlap, xi_sr):
    return float(np.mean(overlap >= xi_sr))


def _auc(overlap):
    return float(np.mean([_success(overlap, xi) for xi in SR_GRID]))


def precision_rate(seq: BBoxSequence, xi_pr: float = DEFAULT_XI_PR) -> float:
    """Fraction of frames whose center error is strictly below ``xi_pr``."""
    return _precision(center_errors(seq.pred, seq.truth), xi_pr)


def success_rate(seq: BBoxSequence, xi_sr: float) -> float:
    """Fraction of frames whose IoU is at least ``xi_sr``."""
    return _success(ious(seq.pred, seq.truth), xi_sr)


def success_auc(seq: BBoxSequence) -> float:
    """Success rate averaged over the thresholds 0, 0.05, ..., 1."""
    return _auc(ious(seq.pred, seq.truth))


def _min_center_errors(pair: ModalPair):
    v, t = pair.visible, pair.thermal
    return np.minimum(center_errors(v.pred, v.truth), center_errors(t.pred, t.truth))


def _max_ious(pair: ModalPair):
    v, t = pair.visible, pair.thermal
    return np.maximum(ious(v.pred, v.truth), ious(t.pred, t.truth))


def mpr(pair: ModalPair, xi_pr: float = DEFAULT_XI_PR) -> float:
    """Precision rate on the per-frame minimum center error over both modalities."""
    return _precision(_min_center_errors(pair), xi_pr)


def msr(pair: ModalPair, xi_sr: float) -> float:
    """Success rate on the per-frame maximum IoU over both modalities."""
    return _success(_max_ious(pair), xi_sr)


def msr_auc(pair: ModalPair) -> float:
    return _auc(_max_ious(pair))
