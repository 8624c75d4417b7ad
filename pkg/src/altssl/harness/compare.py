"""Side-by-side comparison of runs that share a seed list."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import Mapping

import numpy as np

from .metrics import RunSummary


@dataclass(frozen=True)
class PairStats:
    mean_difference: float
    wins: int
    per_seed: tuple[float, ...]


@dataclass(frozen=True)
class Comparison:
    seeds: tuple[int, ...]
    means: dict[str, float]
    stds: dict[str, float]
    pairs: dict[tuple[str, str], PairStats]

    def format_table(self) -> str:
        names = list(self.means)
        width = max(8, *(len(n) for n in names))
        lines = [f"{'run':<{width}}  mean      std       (seeds {list(self.seeds)})"]
        for n in names:
            std = "n/a" if math.isnan(self.stds[n]) else f"{self.stds[n]:.6f}"
            lines.append(f"{n:<{width}}  {self.means[n]:.6f}  {std}")
        if self.pairs:
            lines.append("")
            lines.append(f"{'a - b':<{2 * width + 3}}  mean diff  wins(a>b)")
            for (a, b), p in self.pairs.items():
                lines.append(f"{a + ' - ' + b:<{2 * width + 3}}  {p.mean_difference:+.6f}  "
                             f"{p.wins}/{len(self.seeds)}")
        return "\n".join(lines) + "\n"


def compare_runs(summaries: Mapping[str, RunSummary]) -> Comparison:
    """Mean and sample std per run, and for each ordered pair the mean per-seed
    difference and the number of seeds where the first run is strictly better."""
    if not summaries:
        raise ValueError("nothing to compare")
    names = list(summaries)
    seeds = summaries[names[0]].seeds
    for n in names[1:]:
        if summaries[n].seeds != seeds:
            raise ValueError(f"seed lists differ: {names[0]} has {list(seeds)}, {n} has {list(summaries[n].seeds)}")
    finals = {n: np.array([summaries[n].final_accuracies[s] for s in seeds]) for n in names}
    pairs = {}
    for a, b in permutations(names, 2):
        d = finals[a] - finals[b]
        pairs[(a, b)] = PairStats(float(np.mean(d)), int(np.sum(d > 0)), tuple(float(x) for x in d))
    return Comparison(
        seeds=seeds,
        means={n: summaries[n].mean for n in names},
        stds={n: summaries[n].std for n in names},
        pairs=pairs,
    )
