"""Per-cycle metric rows, run summaries and the metrics CSV."""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_HEADER = "seed,cycle,test_accuracy,labeled_accuracy,switch_count,loss_pseudo,loss_temp"


def quantize(x: float | None) -> float:
    """Round to the 6 decimals the CSV keeps, so summaries survive a round trip."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return float("nan")
    return float(f"{x:.6f}")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "" if math.isnan(x) else f"{x:.6f}"


@dataclass(frozen=True)
class MetricRow:
    seed: int
    cycle: int
    test_accuracy: float
    labeled_accuracy: float
    switch_count: int | None = None
    loss_pseudo: float = float("nan")
    loss_temp: float = float("nan")

    def __post_init__(self):
        for name in ("test_accuracy", "labeled_accuracy", "loss_pseudo", "loss_temp"):
            object.__setattr__(self, name, quantize(getattr(self, name)))

    def to_csv(self) -> str:
        return ",".join(_fmt(v) for v in (self.seed, self.cycle, self.test_accuracy, self.labeled_accuracy,
                                          self.switch_count, self.loss_pseudo, self.loss_temp))

    @classmethod
    def from_csv(cls, line: str) -> "MetricRow":
        cells = line.split(",")
        if len(cells) != 7:
            raise ValueError(f"expected 7 columns, got {len(cells)}: {line!r}")

        def real(s):
            return float(s) if s else float("nan")

        return cls(int(cells[0]), int(cells[1]), real(cells[2]), real(cells[3]),
                   int(cells[4]) if cells[4] else None, real(cells[5]), real(cells[6]))


@dataclass(frozen=True)
class RunSummary:
    """All rows of one experiment; aggregates are derived from the rows only."""

    name: str
    method: str
    rows: tuple[MetricRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(sorted(self.rows, key=lambda r: (r.seed, r.cycle))))
        if not self.rows:
            raise ValueError("a run summary needs at least one row")

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(sorted({r.seed for r in self.rows}))

    def _by_seed(self) -> dict[int, list[MetricRow]]:
        out: dict[int, list[MetricRow]] = {}
        for r in self.rows:
            out.setdefault(r.seed, []).append(r)
        return out

    @property
    def final_accuracies(self) -> dict[int, float]:
        return {s: rows[-1].test_accuracy for s, rows in self._by_seed().items()}

    @property
    def curves(self) -> dict[int, list[float]]:
        return {s: [r.test_accuracy for r in rows] for s, rows in self._by_seed().items()}

    @property
    def switch_series(self) -> dict[int, list[int | None]]:
        return {s: [r.switch_count for r in rows] for s, rows in self._by_seed().items()}

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.final_accuracies.values())))

    @property
    def std(self) -> float:
        """Sample (n - 1) standard deviation; nan for a single seed."""
        acc = list(self.final_accuracies.values())
        return float(np.std(acc, ddof=1)) if len(acc) > 1 else float("nan")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "method": self.method,
            "seeds": list(self.seeds),
            "final_accuracies": {str(k): v for k, v in self.final_accuracies.items()},
            "mean": self.mean,
            "std": None if math.isnan(self.std) else self.std,
        }


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    values = list(values)
    return float(np.mean(values)), float(np.std(values, ddof=1)) if len(values) > 1 else float("nan")


def format_rows(rows: Iterable[MetricRow]) -> str:
    return "".join(r.to_csv() + "\n" for r in rows)


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e


def emit_metrics_csv(summary: RunSummary | Iterable[MetricRow], path) -> None:
    rows = summary.rows if isinstance(summary, RunSummary) else sorted(summary, key=lambda r: (r.seed, r.cycle))
    atomic_write_text(path, CSV_HEADER + "\n" + format_rows(rows))


def read_metric_rows(path) -> list[MetricRow]:
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except OSError as e:
        raise OSError(f"cannot read {path}: {e.strerror}") from e
    lines = text.split("\n")
    if lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    return [MetricRow.from_csv(line) for line in lines[1:] if line]


def load_metrics_csv(path, name: str | None = None, method: str = "") -> RunSummary:
    """Rebuild a summary from a metrics CSV alone."""
    return RunSummary(name or Path(path).parent.name, method, tuple(read_metric_rows(path)))
