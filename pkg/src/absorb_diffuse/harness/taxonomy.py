"""Error taxonomy over verifier verdicts: where chains break, and how."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass

from ..tasks.base import VALID


@dataclass
class TaxonomyRow:
    kind: str
    step: int | None
    count: int
    rate: float


def error_taxonomy(verdicts) -> list[TaxonomyRow]:
    """Aggregate verdicts into (kind, step) buckets with rates over the total.

    Valid outcomes collapse into a single row; failing kinds are broken out
    by the 1-based step where the verifier stopped.
    """
    verdicts = list(verdicts)
    n = len(verdicts)
    if n == 0:
        raise ValueError("no verdicts to aggregate")
    buckets = Counter()
    for v in verdicts:
        key = (VALID, None) if v.ok else (v.kind, v.step)
        buckets[key] += 1
    rows = [
        TaxonomyRow(kind, step, count, count / n)
        for (kind, step), count in buckets.items()
    ]
    rows.sort(key=lambda r: (r.kind != VALID, r.kind, r.step if r.step is not None else -1))
    return rows


def taxonomy_csv(rows, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kind", "step", "count", "rate"])
        for r in rows:
            w.writerow([r.kind, "" if r.step is None else r.step, r.count, f"{r.rate:.6f}"])
