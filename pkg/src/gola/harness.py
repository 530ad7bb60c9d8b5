"""Desk-scale fine-tuning harness for grouped orthogonal low-rank adaptation.

A frozen base layer is adapted to a synthetic multi-mode regression task.
Training runs in two phases: a plain low-rank warm start on every rank, then
the offline partition and the grouped phase in which only redundant ranks
move and one random group pair is pushed towards orthogonality per step.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from gola.adapter import AdapterPair, forward
from gola.orth import (
    offdiag_mass,
    orth_grad_full,
    orth_heatmap,
    orth_loss,
    orth_loss_all_pairs,
    sample_pair,
)
from gola.partition import GroupedAdapter, partition


class NumericalError(RuntimeError):
    pass


def _check_finite(where, *arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite parameters after {where}")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.4e-3
    lr: float = 0.5
    steps: int = 200
    batch: int = 32
    k: int = 16
    n: int = 8
    seed: int = 0
    pairs_per_step: int = 1
    tau: float = 0.84
    rank: int = 64
    momentum: float = 0.0
    eval_size: int = 512

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be a finite value >= 0, got {self.lam}")
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise ValueError(f"lr must be a finite value >= 0, got {self.lr}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        for name in ("batch", "pairs_per_step", "rank", "eval_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0 <= self.tau <= 1:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        out = {}
        for key, value in d.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"config key {key!r} must be a number, got {value!r}")
            if known[key] == "int":
                if float(value) != int(value):
                    raise ValueError(f"config key {key!r} must be an integer, got {value!r}")
                value = int(value)
            else:
                value = float(value)
            out[key] = value
        return cls(**out)


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    """Frozen base layer plus per-mode rank-2 perturbations.

    The ``c`` input channels are split into ``modes`` contiguous blocks; a
    sample of mode ``j`` only excites block ``j`` and its label is
    ``(W0 + deltas[j]) @ x``.
    """

    W0: np.ndarray
    deltas: np.ndarray
    regions: np.ndarray
    seed: int

    @property
    def c(self) -> int:
        return self.W0.shape[0]

    @property
    def modes(self) -> int:
        return len(self.deltas)

    def sample(self, m: int, rng: np.random.Generator):
        """Return ``(X, Y, mode)`` with ``X``/``Y`` shaped ``c x m``."""
        mode = rng.integers(self.modes, size=m)
        X = rng.standard_normal((self.c, m)) * self.regions[mode].T
        Y = self.W0 @ X
        for j in range(self.modes):
            cols = mode == j
            Y[:, cols] += self.deltas[j] @ X[:, cols]
        return X, Y, mode


def _unit(rng, size):
    v = rng.standard_normal(size)
    return v / np.linalg.norm(v)


def make_synthetic_task(c: int, modes: int, seed: int) -> SyntheticTask:
    if c < 8:
        raise ValueError(f"c must be >= 8, got {c}")
    if not 1 <= modes <= 8:
        raise ValueError(f"modes must lie in [1, 8], got {modes}")
    rng = np.random.default_rng(seed)
    W0 = rng.standard_normal((c, c)) / np.sqrt(c)
    regions = np.zeros((modes, c), dtype=bool)
    for j, block in enumerate(np.array_split(np.arange(c), modes)):
        regions[j, block] = True
    deltas = np.zeros((modes, c, c))
    for j in range(modes):
        block = np.flatnonzero(regions[j])
        for _ in range(2):
            v = np.zeros(c)
            v[block] = _unit(rng, len(block))
            deltas[j] += np.outer(_unit(rng, c), v)
    for arr in (W0, regions, deltas):
        arr.flags.writeable = False
    return SyntheticTask(W0, deltas, regions, seed)


class LossBreakdown(NamedTuple):
    task: float
    orth: float
    total: float
    pairs: tuple


@dataclass(frozen=True, eq=False)
class TrainState:
    grouped: GroupedAdapter
    velocity_A: np.ndarray | None = None
    velocity_B: np.ndarray | None = None
    step: int = 0


def task_loss_grad(adapter: AdapterPair, X, Y):
    """Mean squared error over all outputs and its gradient w.r.t. ``A`` and ``B``."""
    # overflow surfaces as a non-finite loss, reported by the caller
    with np.errstate(over="ignore", invalid="ignore"):
        resid = forward(adapter, X) - Y
        loss = float(np.mean(resid**2))
        G = (2.0 / resid.size) * resid
        AX = adapter.A @ X
        dA = adapter.scale * (adapter.B.T @ G @ X.T)
        dB = adapter.scale * (G @ AX.T)
    return loss, dA, dB


def _sgd(param, grad, velocity, cfg):
    if cfg.momentum > 0:
        velocity = grad if velocity is None else cfg.momentum * velocity + grad
        grad = velocity
    return param - cfg.lr * grad, velocity


def train_step(state: TrainState, batch, cfg: TrainConfig, rng: np.random.Generator):
    """One step on ``task + lam * orth``; crucial slots and ``W`` stay fixed.

    ``batch`` is ``(X, Y)`` (extra trailing items are ignored). Pairs are
    always drawn from ``rng`` so runs that differ only in ``lam`` see the
    same pair sequence; the orthogonal gradient is skipped when ``lam == 0``.
    """
    X, Y = batch[0], batch[1]
    grouped = state.grouped
    adapter = grouped.adapter
    k = grouped.k
    task, dA, dB = task_loss_grad(adapter, X, Y)
    pairs = tuple(sample_pair(grouped.n, rng) for _ in range(cfg.pairs_per_step))
    orth = sum(orth_loss(grouped, p) for p in pairs)
    total = task + cfg.lam * orth
    if not np.isfinite(total):
        raise NumericalError(f"non-finite loss at step {state.step}: task={task}, orth={orth}")
    if cfg.lam > 0:
        for p in pairs:
            oA, oB = orth_grad_full(grouped, p)
            dA += cfg.lam * oA
            dB += cfg.lam * oB
    losses = LossBreakdown(task, float(orth), float(total), pairs)
    if cfg.lr == 0:
        return TrainState(grouped, state.velocity_A, state.velocity_B, state.step + 1), losses

    A_u, vA = _sgd(adapter.A[k:], dA[k:], state.velocity_A, cfg)
    B_u, vB = _sgd(adapter.B[:, k:], dB[:, k:], state.velocity_B, cfg)
    _check_finite(f"step {state.step}", A_u, B_u)
    A = np.concatenate([adapter.A[:k], A_u], axis=0)
    B = np.concatenate([adapter.B[:, :k], B_u], axis=1)
    new = grouped.with_adapter(adapter.with_factors(A, B))
    return TrainState(new, vA, vB, state.step + 1), losses


def confidence_gate(conf: float, tau: float = 0.84) -> bool:
    """Whether a tracker should refresh its online template (``conf >= tau``)."""
    if not 0.0 <= conf <= 1.0:
        raise ValueError(f"confidence must lie in [0, 1], got {conf}")
    return conf >= tau


def frozen_checksum(grouped: GroupedAdapter) -> str:
    h = hashlib.sha256()
    for arr in (grouped.adapter.W, grouped.A_crucial, grouped.B_crucial):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass(eq=False)
class TrainReport:
    config: dict
    task_seed: int
    final_task_loss: float
    final_orth_loss: float
    eval_mse: float
    task_trace: list = field(default_factory=list)
    orth_trace: list = field(default_factory=list)
    total_trace: list = field(default_factory=list)
    gram_mass_trace: list = field(default_factory=list)
    initial_gram_mass: float = 0.0
    offdiag_A: float = 0.0
    offdiag_B: float = 0.0
    checksum_before: str = ""
    checksum_after: str = ""
    degenerate_partition: bool = False
    grouped: GroupedAdapter | None = field(default=None, repr=False)

    @property
    def offdiag_mean(self) -> float:
        return 0.5 * (self.offdiag_A + self.offdiag_B)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "grouped"}
        d["offdiag_mean"] = self.offdiag_mean
        if self.grouped is not None:
            d["partition"] = self.grouped.partition.to_dict()
        return d


def _warm_start(task: SyntheticTask, cfg: TrainConfig, init_rng, data_rng) -> AdapterPair:
    # plain low-rank training on every rank, standing in for a pretrained adapter
    c = task.c
    A = init_rng.standard_normal((cfg.rank, c)) / np.sqrt(c)
    B = np.zeros((c, cfg.rank))
    adapter = AdapterPair(task.W0, A, B)
    for step in range(cfg.steps // 2):
        X, Y, _ = task.sample(cfg.batch, data_rng)
        loss, dA, dB = task_loss_grad(adapter, X, Y)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at warm-start step {step}")
        A, B = adapter.A - cfg.lr * dA, adapter.B - cfg.lr * dB
        _check_finite(f"warm-start step {step}", A, B)
        adapter = adapter.with_factors(A, B)
    return adapter


def _heatmap_mass(grouped):
    return offdiag_mass(orth_heatmap(grouped, "A")), offdiag_mass(orth_heatmap(grouped, "B"))


def train(task: SyntheticTask, cfg: TrainConfig) -> TrainReport:
    """Warm start, partition, then ``cfg.steps`` grouped training steps."""
    init_ss, data_ss, pair_ss, eval_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    data_rng = np.random.default_rng(data_ss)
    pair_rng = np.random.default_rng(pair_ss)
    adapter = _warm_start(task, cfg, np.random.default_rng(init_ss), data_rng)
    grouped = partition(adapter, cfg.k, cfg.n, seed=cfg.seed)
    before = frozen_checksum(grouped)

    state = TrainState(grouped)
    report = TrainReport(
        config=cfg.to_dict(),
        task_seed=task.seed,
        final_task_loss=0.0,
        final_orth_loss=0.0,
        eval_mse=0.0,
        initial_gram_mass=orth_loss_all_pairs(grouped),
        checksum_before=before,
        degenerate_partition=grouped.partition.degenerate,
    )
    for _ in range(cfg.steps):
        X, Y, _ = task.sample(cfg.batch, data_rng)
        state, losses = train_step(state, (X, Y), cfg, pair_rng)
        report.task_trace.append(losses.task)
        report.orth_trace.append(losses.orth)
        report.total_trace.append(losses.total)
        report.gram_mass_trace.append(orth_loss_all_pairs(state.grouped))

    final = state.grouped
    Xe, Ye, _ = task.sample(cfg.eval_size, np.random.default_rng(eval_ss))
    report.eval_mse = float(np.mean((forward(final.adapter, Xe) - Ye) ** 2))
    if cfg.steps:
        report.final_task_loss = report.task_trace[-1]
        report.final_orth_loss = report.orth_trace[-1]
    report.offdiag_A, report.offdiag_B = _heatmap_mass(final)
    report.checksum_after = frozen_checksum(final)
    report.grouped = final
    return report
