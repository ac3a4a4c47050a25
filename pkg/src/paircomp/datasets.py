"""Bundled and user-supplied example datasets.

The aggregated university preference counts ship with the package.  The
subject-level file (one row per student) is not redistributed; callers place
it locally and :func:`university_subject_level` validates and adapts it.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .pcdata import (
    PairedComparisonDataset,
    aggregate_counts,
    load_aggregated_csv,
)

__all__ = [
    "university_counts_path",
    "university_counts",
    "university_subject_level",
    "UNIVERSITY_OBJECTS",
]

UNIVERSITY_OBJECTS = ("London", "Paris", "Milan", "St. Gallen",
                      "Barcelona", "Stockholm")

_DATA_DIR = Path(__file__).parent / "data"


def university_counts_path() -> Path:
    """Location of the bundled aggregated university CSV."""
    return _DATA_DIR / "universities_agg.csv"


def university_counts() -> PairedComparisonDataset:
    """Aggregated university preference study (n=6, H=3, 15 pairs)."""
    return load_aggregated_csv(university_counts_path(),
                               objects=UNIVERSITY_OBJECTS)


def _expected_pair_counts() -> dict:
    """Reference per-pair (prefer_i, tie, prefer_j) totals for validation."""
    agg = aggregate_counts(university_counts())
    return {agg.pairs[r]: tuple(agg.counts[r]) for r in range(len(agg.pairs))}


def university_subject_level(path) -> PairedComparisonDataset:
    """Adapt a wide subject-level university file to a dataset.

    Expected shape: one row per student, one column per pair comparison
    with a three-level response code, possibly alongside extra columns
    (demographics etc., ignored here).  Column order follows the pair
    order of the aggregated table.  The response coding is detected
    automatically by requiring the aggregate counts to reproduce the
    bundled table exactly; a file that matches no known coding is
    rejected rather than guessed at.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"subject-level file not found: {path}")
    text = path.read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]

    pairs = list(university_counts().observed_pairs)
    # candidate column blocks: named V1..V15/comp1..comp15, else first 15
    lowered = [h.lower() for h in header]
    idx = None
    for prefix in ("v", "comp", "pc"):
        cand = [k for k, h in enumerate(lowered)
                if h.startswith(prefix) and h[len(prefix):].isdigit()]
        if len(cand) == len(pairs):
            idx = sorted(cand, key=lambda k: int(lowered[k][len(prefix):]))
            break
    if idx is None:
        if len(header) < len(pairs):
            raise ValueError(f"{path}: expected {len(pairs)} comparison "
                             "columns")
        idx = list(range(len(pairs)))

    raw = []
    for r, row in enumerate(body, start=2):
        vals = []
        for k in idx:
            cell = row[k].strip() if k < len(row) else ""
            if cell in ("", "NA", "."):
                vals.append(None)
            else:
                try:
                    vals.append(int(float(cell)))
                except ValueError:
                    raise ValueError(f"{path}:{r}: response {cell!r} is "
                                     "not numeric") from None
        raw.append(vals)

    codes = sorted({v for row in raw for v in row if v is not None})
    if len(codes) != 3:
        raise ValueError(f"{path}: expected three response levels, "
                         f"found {codes}")
    # try both reading directions of the code scale
    expected = _expected_pair_counts()
    for order in (codes, codes[::-1]):
        # order[0] -> prefer i, order[1] -> tie, order[2] -> prefer j
        outcome_of = {order[0]: 3, order[1]: 2, order[2]: 1}
        tally = {p: [0, 0, 0] for p in pairs}
        for row in raw:
            for p, v in zip(pairs, row):
                if v is not None:
                    tally[p][3 - outcome_of[v]] += 1
        if all(tuple(float(c) for c in tally[p]) == expected[p]
               for p in pairs):
            break
    else:
        raise ValueError(f"{path}: response coding does not reproduce the "
                         "published aggregate counts under any known scheme")

    pi, pj, out, sidx = [], [], [], []
    for s, row in enumerate(raw):
        for (i, j), v in zip(pairs, row):
            if v is None:
                continue
            pi.append(i)
            pj.append(j)
            out.append(outcome_of[v])
            sidx.append(s)
    return PairedComparisonDataset(
        objects=UNIVERSITY_OBJECTS,
        H=3,
        pair_i=np.array(pi, dtype=int),
        pair_j=np.array(pj, dtype=int),
        outcome=np.array(out, dtype=int),
        weight=np.ones(len(pi)),
        subject_idx=np.array(sidx, dtype=int),
        subjects=tuple(f"s{k+1}" for k in range(len(raw))),
    )
