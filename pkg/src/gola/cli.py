"""Command-line entry point: ``gola {partition,train,eval,analyze}``.

Exit codes: 0 success, 2 bad user input, 3 I/O failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from gola import __version__
from gola.adapter import RankWarning
from gola.container import (
    ContainerError,
    adapter_from_container,
    adapter_metadata,
    adapter_to_tensors,
    atomic_write,
    encode_container,
    read_container,
)
from gola.harness import NumericalError, TrainConfig, make_synthetic_task, train
from gola.metrics import SR_GRID, BBoxSequence, ModalPair, mpr, msr_auc, precision_rate, success_auc
from gola.orth import orth_heatmap, singular_spectrum, spectrum_histogram
from gola.partition import GroupedAdapter, PartitionError, RankPartition, apply_partition, partition

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
CSV_HEADER = ["frame", "px", "py", "pw", "ph", "gx", "gy", "gw", "gh"]


class CLIError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def fmt(value: float) -> str:
    return f"{float(value):.9g}"


def _round(obj):
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def _json_bytes(obj) -> bytes:
    return (json.dumps(_round(obj), sort_keys=True, indent=2) + "\n").encode("utf-8")


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _write(path, data: bytes):
    try:
        atomic_write(path, data)
    except OSError as exc:
        raise CLIError(f"cannot write {path}: {exc}", EXIT_IO) from None


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _seed(args_seed: int) -> int:
    env = os.environ.get("GOLA_SEED")
    if env is None:
        return args_seed
    try:
        return int(env)
    except ValueError:
        raise CLIError(f"GOLA_SEED must be an integer, got {env!r}") from None


def _load_adapter(path):
    try:
        tensors, meta = read_container(path)
    except ContainerError as exc:
        raise CLIError(str(exc), EXIT_IO) from None
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO) from None
    try:
        return adapter_from_container(tensors, meta), meta
    except ValueError as exc:
        raise CLIError(f"{path}: {exc}") from None


def _load_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: invalid JSON ({exc})") from None


def cmd_partition(args) -> int:
    seed = _seed(args.seed)
    out = Path(args.out)
    if out.with_suffix(".gola").resolve() == Path(args.inp).resolve():
        raise CLIError(f"--out {out} would overwrite the input container; pick another name")
    adapter, meta = _load_adapter(args.inp)
    try:
        grouped = partition(adapter, args.k, args.n, seed)
    except PartitionError as exc:
        raise CLIError(f"partition failed: {exc}") from None
    part = grouped.partition
    part_bytes = _json_bytes(part.to_dict())
    meta = adapter_metadata(grouped.adapter, meta.get("layer_name", "layer"), permuted=True)
    _write(out, part_bytes)
    _write(out.with_suffix(".gola"), encode_container(adapter_to_tensors(grouped.adapter), meta))
    sizes = [len(g) for g in part.groups]
    print(f"k={part.k} n={part.n} group_sizes={sizes} degenerate={str(part.degenerate).lower()}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg_dict = {}
    inputs = {}
    if args.cfg:
        raw = _load_json(args.cfg)
        if not isinstance(raw, dict):
            raise CLIError(f"{args.cfg}: config must be a JSON object")
        cfg_dict.update(raw)
        inputs[str(args.cfg)] = _digest(Path(args.cfg).read_bytes())
    if args.steps is not None:
        cfg_dict["steps"] = args.steps
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if "GOLA_SEED" in os.environ:
        cfg_dict["seed"] = _seed(0)
    try:
        cfg = TrainConfig.from_dict(cfg_dict)
        task = make_synthetic_task(args.c, args.modes, args.task_seed)
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid configuration: {exc}") from None

    try:
        with np.errstate(all="ignore"):
            report = train(task, cfg)
    except NumericalError as exc:
        raise CLIError(f"training diverged: {exc}", EXIT_NUMERIC) from None
    except ValueError as exc:
        # partition divisibility, rank larger than the layer width
        raise CLIError(f"invalid configuration: {exc}") from None

    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError(f"cannot create {out_dir}: {exc}", EXIT_IO) from None
    grouped = report.grouped
    files = {
        "report.json": _json_bytes(report.to_dict()),
        "loss_trace.csv": _csv_bytes(
            ["step", "task_loss", "orth_loss"],
            [[i, fmt(t), fmt(o)] for i, (t, o) in enumerate(zip(report.task_trace, report.orth_trace))],
        ),
        "partition.json": _json_bytes(grouped.partition.to_dict()),
        "adapter.gola": encode_container(
            adapter_to_tensors(grouped.adapter), adapter_metadata(grouped.adapter, "synthetic", permuted=True)
        ),
    }
    for name, data in files.items():
        _write(out_dir / name, data)
    manifest = {
        "tool": "gola",
        "version": __version__,
        "command": "train",
        "config": cfg.to_dict(),
        "seeds": {"task_seed": args.task_seed, "seed": cfg.seed},
        "task": {"c": args.c, "modes": args.modes},
        "inputs": inputs,
        "outputs": {name: _digest(data) for name, data in files.items()},
    }
    _write(out_dir / "manifest.json", _json_bytes(manifest))
    print(
        f"task_loss={fmt(report.final_task_loss)} orth_loss={fmt(report.final_orth_loss)} "
        f"eval_mse={fmt(report.eval_mse)} frozen_unchanged={str(report.checksum_before == report.checksum_after).lower()}"
    )
    return EXIT_OK


def read_sequence_csv(path) -> BBoxSequence:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO) from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [h.strip() for h in rows[0]] != CSV_HEADER:
        raise CLIError(f"{path}:1: header must be {','.join(CSV_HEADER)}")
    pred, truth, last = [], [], None
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise CLIError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise CLIError(f"{path}:{lineno}: non-numeric field") from None
        if not all(np.isfinite(vals)) or min(vals[3], vals[4], vals[7], vals[8]) < 0:
            raise CLIError(f"{path}:{lineno}: non-finite value or negative box size")
        if last is not None and vals[0] <= last:
            raise CLIError(f"{path}:{lineno}: frames must be strictly increasing")
        last = vals[0]
        pred.append(vals[1:5])
        truth.append(vals[5:9])
    if not pred:
        raise CLIError(f"{path}: no frames")
    return BBoxSequence(np.array(pred), np.array(truth))


def cmd_eval(args) -> int:
    visible = read_sequence_csv(args.visible)
    thermal = read_sequence_csv(args.thermal)
    if len(visible) != len(thermal):
        raise CLIError(f"modalities differ in length: visible {len(visible)} frames, thermal {len(thermal)} frames")
    if not args.xi_pr > 0:
        raise CLIError("--xi-pr must be positive")
    pair = ModalPair(visible, thermal)
    result = {
        "PR": precision_rate(visible, args.xi_pr),
        "SR_auc": success_auc(visible),
        "MPR": mpr(pair, args.xi_pr),
        "MSR_auc": msr_auc(pair),
        "N": len(visible),
        "thresholds": {"xi_pr": args.xi_pr, "sr_grid": [float(x) for x in SR_GRID]},
    }
    _write(args.out, _json_bytes(result))
    print(" ".join(f"{key}={result[key]:.4f}" for key in ("PR", "SR_auc", "MPR", "MSR_auc")))
    return EXIT_OK


def grouped_from_files(adapter, meta, part: RankPartition) -> GroupedAdapter:
    if part.r != adapter.r:
        raise PartitionError(f"partition has r={part.r} but the container adapter has r={adapter.r}")
    if meta.get("permuted"):
        mask = np.arange(adapter.r) < part.k
        return GroupedAdapter(adapter, part, mask, part.k)
    return apply_partition(adapter, part)


def cmd_analyze(args) -> int:
    if args.bins < 1:
        raise CLIError("--bins must be >= 1")
    adapter, meta = _load_adapter(args.inp)
    raw = _load_json(args.partition)
    try:
        part = RankPartition.from_dict(raw)
        grouped = grouped_from_files(adapter, meta, part)
    except (KeyError, TypeError, ValueError) as exc:
        raise CLIError(f"{args.partition}: {exc}") from None
    spectrum = singular_spectrum(adapter)
    counts, edges = spectrum_histogram(spectrum, args.bins)
    heat = orth_heatmap(grouped, args.matrix).values
    n = heat.shape[0]
    spectrum_out = Path(args.spectrum_out)
    hist_out = Path(args.hist_out) if args.hist_out else spectrum_out.with_name(spectrum_out.stem + "_hist.csv")
    _write(spectrum_out, _csv_bytes(["index", "sigma"], [[i, fmt(s)] for i, s in enumerate(spectrum)]))
    _write(
        Path(args.heatmap_out),
        _csv_bytes([f"g{j}" for j in range(n)], [[fmt(v) for v in row] for row in heat]),
    )
    _write(
        hist_out,
        _csv_bytes(
            ["bin_lo", "bin_hi", "count"],
            [[fmt(lo), fmt(hi), int(c)] for lo, hi, c in zip(edges[:-1], edges[1:], counts)],
        ),
    )
    print(f"sigma_max={fmt(spectrum[0]) if len(spectrum) else 0} groups={n} matrix={args.matrix}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gola", description="Group-orthogonal low-rank adaptation tools")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="score, sort and group the ranks of an adapter container")
    p.add_argument("--in", dest="inp", required=True, help="input .gola container")
    p.add_argument("--k", type=int, default=16, help="number of crucial (frozen) ranks")
    p.add_argument("--n", type=int, default=8, help="number of redundant-rank groups")
    p.add_argument("--seed", type=int, default=0, help="clustering seed (GOLA_SEED overrides)")
    p.add_argument("--out", required=True, help="partition JSON; the sorted container goes next to it as .gola")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="run the synthetic fine-tuning harness")
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--modes", type=int, default=4)
    p.add_argument("--c", type=int, default=64)
    p.add_argument("--cfg", help="JSON file with TrainConfig overrides")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.add_argument("--seed", type=int, help="override the configured seed (GOLA_SEED overrides)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PR / SR / MPR / MSR for one visible-thermal sequence pair")
    p.add_argument("--visible", required=True, help="visible-modality CSV")
    p.add_argument("--thermal", required=True, help="thermal-modality CSV")
    p.add_argument("--xi-pr", type=float, default=20.0, help="center-error threshold in pixels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="singular spectrum, histogram and group orthogonality heatmap")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--spectrum-out", required=True)
    p.add_argument("--heatmap-out", required=True)
    p.add_argument("--hist-out", help="histogram CSV (default: <spectrum-out stem>_hist.csv)")
    p.add_argument("--matrix", choices=("A", "B"), default="B")
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            return args.func(args)
    except CLIError as exc:
        print(f"gola {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
