"""Report rows, per-author statistics, and CSV/text rendering.

Scores are stored as fractions and rendered ×100 with two decimals. Every
file ends with a ``#`` line carrying the config hash and seed.
"""
from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .text import PrefixMode

HEADER = ["section", "mode", "split", "r1", "r2", "rl", "min", "max", "mean", "median", "std"]
SECTION_ORDER = ("HPI", "PE", "AP")
MODE_ORDER = tuple(m.value for m in PrefixMode)


@dataclass
class ReportRow:
    section: str
    mode: str
    split: str
    r1: float
    r2: float
    rl: float
    min: float
    max: float
    mean: float
    median: float
    std: float

    @classmethod
    def from_author_scores(cls, section: str, mode: str, split: str,
                           per_author: dict[str, tuple[float, float, float]]) -> "ReportRow":
        """``per_author`` maps author -> (R-1, R-2, R-L) means over that author's documents."""
        if not per_author:
            raise ValueError("no authors to report")
        vals = list(per_author.values())
        r2s = [v[1] for v in vals]
        mean = lambda xs: sum(xs) / len(xs)
        return cls(section, mode, split, mean([v[0] for v in vals]), mean(r2s), mean([v[2] for v in vals]),
                   min(r2s), max(r2s), mean(r2s), statistics.median(r2s), statistics.pstdev(r2s))

    def sort_key(self):
        sec = SECTION_ORDER.index(self.section) if self.section in SECTION_ORDER else len(SECTION_ORDER)
        mode = MODE_ORDER.index(self.mode) if self.mode in MODE_ORDER else len(MODE_ORDER)
        return (sec, self.section, mode, self.mode, self.split)

    def rendered(self) -> list[str]:
        return [self.section, self.mode, self.split] + [pct(getattr(self, k)) for k in HEADER[3:]]


def pct(x: float) -> str:
    return f"{100 * x:.2f}"


def footer(config_hash: str, seed: int) -> str:
    return f"# config_hash={config_hash} seed={seed}"


def atomic_write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


def render_csv(header: Sequence[str], rows: Sequence[Sequence], config_hash: str, seed: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue() + footer(config_hash, seed) + "\n"


def render_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda r: "  ".join(str(x).rjust(w) for x, w in zip(r, widths))
    return "\n".join([line(header), "  ".join("-" * w for w in widths)] + [line(r) for r in rows]) + "\n"


def write_report(rows: Sequence[ReportRow], path: str | Path, config_hash: str, seed: int) -> tuple[Path, Path]:
    """Sorted CSV at ``path`` plus an aligned text table next to it (``.txt``)."""
    if not rows:
        raise ValueError("no report rows")
    ordered = sorted(rows, key=ReportRow.sort_key)
    rendered = [r.rendered() for r in ordered]
    path = Path(path)
    csv_path = atomic_write_text(path, render_csv(HEADER, rendered, config_hash, seed))
    txt_path = atomic_write_text(path.with_suffix(".txt"),
                                 render_table(HEADER, rendered) + footer(config_hash, seed) + "\n")
    return csv_path, txt_path


def read_report(path: str | Path) -> list[dict[str, str]]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def relative_improvement(adapted: float, base: float) -> float:
    """(adapted - base) / base; infinite when the base score is zero and adapted is positive."""
    if base == 0:
        return 0.0 if adapted == 0 else float("inf")
    return (adapted - base) / base
