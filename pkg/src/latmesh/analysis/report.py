"""The per-pair-class statistics table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from ..topology import CLASS_ORDER
from .dataset import group_by_class
from .stats import TABLE_COLUMNS, summarize


@dataclass
class Report:
    rows: list  # (PairClass, StatsSummary)
    notes: list = field(default_factory=list)

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("group",) + TABLE_COLUMNS + ("count",))
        for cls, s in self.rows:
            w.writerow([cls.value] + [_fmt(v) for v in s.row()] + [s.count])
        for note in self.notes:
            out.write(f"# {note}\n")
        return out.getvalue()

    def to_text(self):
        header = ("group",) + TABLE_COLUMNS + ("count",)
        body = [[cls.value] + [_fmt(v) for v in s.row()] + [str(s.count)] for cls, s in self.rows]
        widths = [max(len(str(r[i])) for r in [header] + body) for i in range(len(header))]
        lines = []
        for r in [header] + body:
            cells = [str(r[0]).ljust(widths[0])] + [str(v).rjust(w) for v, w in zip(r[1:], widths[1:])]
            lines.append("  ".join(cells))
        lines.extend(f"({note})" for note in self.notes)
        return "\n".join(lines) + "\n"


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


def report(ds):
    """One StatsSummary per pair class present in ``ds``, in table order."""
    groups = group_by_class(ds)
    rows, notes = [], []
    for cls in CLASS_ORDER:
        samples = groups.get(cls)
        if samples is None or len(samples) == 0:
            notes.append(f"{cls.value}: no samples")
            continue
        rows.append((cls, summarize(samples)))
    return Report(rows, notes)
