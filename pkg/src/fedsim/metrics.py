"""Metrics rows, CSV rendering and parsing.

One experiment produces a single :class:`MetricsLog` whose rows span all
compared algorithms; on disk each (experiment, algorithm) pair becomes
its own CSV with columns ``update,comm_rounds,loss,grad_sq_norm,diverged``
plus one JSON metadata sidecar carrying the resolved configuration and
dataset statistics.  Floats are written with ``repr`` so files are
bit-reproducible and parse back to identical doubles.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

CSV_COLUMNS = ("update", "comm_rounds", "loss", "grad_sq_norm", "diverged")


@dataclass
class MetricsRow:
    update: int
    comm_rounds: int
    algorithm: str
    loss: float
    grad_sq_norm: Optional[float]
    diverged: bool
    seed: int


@dataclass
class MetricsLog:
    """Per-update metrics for every algorithm of one experiment."""

    header: dict
    rows: list = field(default_factory=list)

    @property
    def algorithms(self) -> tuple:
        seen = []
        for row in self.rows:
            if row.algorithm not in seen:
                seen.append(row.algorithm)
        return tuple(seen)

    def rows_for(self, algorithm: str) -> list:
        return [row for row in self.rows if row.algorithm == algorithm]

    def final_loss(self, algorithm: str, last: int = 10) -> float:
        """Mean of the last ``last`` logged losses (NaN if any diverged)."""
        losses = [row.loss for row in self.rows_for(algorithm)]
        if not losses:
            return math.nan
        tail = losses[-last:]
        return sum(tail) / len(tail)


def comparable_loss(value: float) -> float:
    """NaN-safe ordering key: diverged (NaN) counts as infinitely bad."""
    return math.inf if math.isnan(value) else value


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(rows) -> str:
    """CSV text for one algorithm's rows."""
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(
            ",".join(
                (
                    str(row.update),
                    str(row.comm_rounds),
                    _fmt(row.loss),
                    _fmt(row.grad_sq_norm),
                    _fmt(row.diverged),
                )
            )
        )
    return "\n".join(lines) + "\n"


def parse_csv(text: str, algorithm: str = "", seed: int = 0) -> list:
    """Rows back from :func:`render_csv` output."""
    lines = text.strip().split("\n")
    if lines[0] != ",".join(CSV_COLUMNS):
        raise ValueError(f"unexpected CSV header: {lines[0]!r}")
    rows = []
    for line in lines[1:]:
        update, comm, loss, grad, diverged = line.split(",")
        rows.append(
            MetricsRow(
                update=int(update),
                comm_rounds=int(comm),
                algorithm=algorithm,
                loss=float(loss),
                grad_sq_norm=float(grad) if grad else None,
                diverged=diverged == "1",
                seed=seed,
            )
        )
    return rows


def write_experiment(log: MetricsLog, out_dir: str, stem: str) -> list:
    """Write one CSV per algorithm plus the metadata sidecar; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for algorithm in log.algorithms:
        path = os.path.join(out_dir, f"{stem}_{algorithm}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(render_csv(log.rows_for(algorithm)))
        paths.append(path)
    meta_path = os.path.join(out_dir, f"{stem}.meta.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(log.header, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    paths.append(meta_path)
    return paths


def row_to_dict(row: MetricsRow) -> dict:
    return asdict(row)


def row_from_dict(d: dict) -> MetricsRow:
    return MetricsRow(
        update=int(d["update"]),
        comm_rounds=int(d["comm_rounds"]),
        algorithm=d["algorithm"],
        loss=float(d["loss"]),
        grad_sq_norm=None if d.get("grad_sq_norm") is None else float(d["grad_sq_norm"]),
        diverged=bool(d["diverged"]),
        seed=int(d["seed"]),
    )
