"""Regime-versus-observation tables."""

from __future__ import annotations

import csv
import io
from typing import Sequence

from ..oracle import EIGHT_PI

COLUMNS = ("name", "m0/8pi", "M0/8pi", "predicted", "observed", "agree")


def table_rows(reports: Sequence) -> list:
    return [[r.name, f"{r.m0 / EIGHT_PI:.4g}", f"{r.M0 / EIGHT_PI:.4g}", r.predicted,
             r.observed, "yes" if r.agree else "no"] for r in reports]


def summary(reports: Sequence) -> dict:
    agree = sum(1 for r in reports if r.agree)
    return {"scenarios": len(reports), "agree": agree, "disagree": len(reports) - agree}


def report_table(reports: Sequence):
    """Return ``(text, csv_text)`` with one row per scenario and a summary line."""
    rows = table_rows(reports)
    widths = [max([len(c)] + [len(row[i]) for row in rows]) for i, c in enumerate(COLUMNS)]

    def fmt(cells):
        return "  ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip()

    lines = [fmt(COLUMNS), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]
    s = summary(reports)
    lines.append(f"{s['scenarios']} scenarios: {s['agree']} agree, {s['disagree']} disagree")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    w.writerows(rows)
    return "\n".join(lines) + "\n", buf.getvalue()
