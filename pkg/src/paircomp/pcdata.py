"""Dataset ingestion, aggregation, design matrices, transitivity checks.

One internal representation serves every fitter: a validated record table
(object index pair, outcome category 1..H, real-valued weight, optional
subject index).  Outcome categories run from 1 (second object preferred) to
H (first object preferred); ties occupy the middle category when H is odd.
Aggregated count tables are kept in the conventional display layout with
the favor-first-object column leading, i.e. table column k corresponds to
internal category H + 1 - k.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "PairedComparisonDataset",
    "AggregatedCounts",
    "DesignMatrix",
    "CsvSchema",
    "TransitivityReport",
    "load_long_csv",
    "load_aggregated_csv",
    "load_covariates_csv",
    "aggregate_counts",
    "build_design_matrix",
    "transitivity_report",
    "all_pairs",
]

TIE_POLICIES = ("keep-categories", "split-half")


def all_pairs(n: int) -> tuple[tuple[int, int], ...]:
    """All (i, j) with i < j in lexicographic order."""
    return tuple((i, j) for i in range(n) for j in range(i + 1, n))


@dataclass(frozen=True)
class PairedComparisonDataset:
    """Per-record paired-comparison outcomes plus covariates.

    ``pair_i``/``pair_j`` are 0-based object indices with pair_i < pair_j;
    ``outcome`` holds categories 1..H; ``weight`` carries real multiplicities
    (0.5 for split ties, aggregated counts when expanded from a count table).
    ``subject_idx`` is None for single-judgment data.
    """

    objects: tuple[str, ...]
    H: int
    pair_i: np.ndarray
    pair_j: np.ndarray
    outcome: np.ndarray
    weight: np.ndarray
    subject_idx: np.ndarray | None = None
    subjects: tuple[str, ...] | None = None
    object_covariates: np.ndarray | None = None
    object_covariate_names: tuple[str, ...] = ()
    subject_covariates: np.ndarray | None = None
    subject_covariate_names: tuple[str, ...] = ()
    comparison_covariates: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.objects)
        if n < 2:
            raise ValueError("need at least two objects")
        if self.H < 2:
            raise ValueError("category count H must be >= 2")
        for name in ("pair_i", "pair_j", "outcome"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=int))
        object.__setattr__(self, "weight",
                           np.asarray(self.weight, dtype=float))
        R = self.pair_i.size
        if not (self.pair_j.size == R == self.outcome.size == self.weight.size):
            raise ValueError("record columns must have equal length")
        if R:
            if self.pair_i.min() < 0 or self.pair_j.max() >= n:
                raise ValueError("object index out of range")
            if np.any(self.pair_i >= self.pair_j):
                raise ValueError("records must satisfy pair_i < pair_j")
            if self.outcome.min() < 1 or self.outcome.max() > self.H:
                raise ValueError(f"outcomes must lie in 1..{self.H}")
            if np.any(self.weight <= 0):
                raise ValueError("record weights must be positive")
        if (self.subject_idx is None) != (self.subjects is None):
            raise ValueError("subject indices and subject labels go together")
        if self.subject_idx is not None:
            object.__setattr__(self, "subject_idx",
                               np.asarray(self.subject_idx, dtype=int))
            if self.subject_idx.size != R:
                raise ValueError("subject index column length mismatch")
            S = len(self.subjects)
            if R and (self.subject_idx.min() < 0
                      or self.subject_idx.max() >= S):
                raise ValueError("subject index out of range")
            self._check_judgment_uniqueness()
        if self.object_covariates is not None:
            oc = np.asarray(self.object_covariates, dtype=float)
            object.__setattr__(self, "object_covariates", oc)
            if oc.shape[0] != n:
                raise ValueError("object covariate rows must match objects")
            if oc.shape[1] != len(self.object_covariate_names):
                raise ValueError("object covariate names do not match columns")
        if self.subject_covariates is not None:
            if self.subjects is None:
                raise ValueError("subject covariates need declared subjects")
            sc = np.asarray(self.subject_covariates, dtype=float)
            object.__setattr__(self, "subject_covariates", sc)
            if sc.shape[0] != len(self.subjects):
                raise ValueError("subject covariate rows must match subjects")
            if sc.shape[1] != len(self.subject_covariate_names):
                raise ValueError("subject covariate names do not match columns")
        for cname, col in self.comparison_covariates.items():
            col = np.asarray(col, dtype=float)
            self.comparison_covariates[cname] = col
            if col.size != R:
                raise ValueError(f"comparison covariate {cname!r} length "
                                 "mismatch")

    def _check_judgment_uniqueness(self):
        seen: dict = {}
        for k in range(self.pair_i.size):
            key = (int(self.subject_idx[k]), int(self.pair_i[k]),
                   int(self.pair_j[k]))
            seen.setdefault(key, []).append(k)
        for key, rows in seen.items():
            if len(rows) == 1:
                continue
            outs = {int(self.outcome[r]) for r in rows}
            if len(rows) == 2 and len(outs) == 2:
                # split ties arrive as two half-weight records
                continue
            subj = self.subjects[key[0]]
            raise ValueError(
                f"subject {subj!r} has duplicate records for pair "
                f"({self.objects[key[1]]}, {self.objects[key[2]]})"
            )

    # -- derived views ----------------------------------------------------

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def n_records(self) -> int:
        return int(self.pair_i.size)

    @property
    def multiple_judgment(self) -> bool:
        return self.subject_idx is not None

    @property
    def observed_pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted({(int(i), int(j))
                             for i, j in zip(self.pair_i, self.pair_j)}))

    def object_index(self, label: str) -> int:
        try:
            return self.objects.index(label)
        except ValueError:
            raise KeyError(f"unknown object label {label!r}") from None

    def split_ties(self) -> "PairedComparisonDataset":
        """Binary dataset: ties become two half-weight opposite records.

        Categories above the middle map to 2 (first object preferred),
        categories below to 1; an odd-H middle category is split.  Total
        weight per pair is preserved exactly.
        """
        if self.H == 2:
            return self
        mid = (self.H + 1) / 2.0
        cols = {"pair_i": [], "pair_j": [], "outcome": [], "weight": [],
                "subject_idx": []}
        comp_cov: dict = {name: [] for name in self.comparison_covariates}

        def push(k, y, w):
            cols["pair_i"].append(self.pair_i[k])
            cols["pair_j"].append(self.pair_j[k])
            cols["outcome"].append(y)
            cols["weight"].append(w)
            if self.subject_idx is not None:
                cols["subject_idx"].append(self.subject_idx[k])
            for name in comp_cov:
                comp_cov[name].append(self.comparison_covariates[name][k])

        for k in range(self.n_records):
            y = self.outcome[k]
            w = self.weight[k]
            if y > mid:
                push(k, 2, w)
            elif y < mid:
                push(k, 1, w)
            else:
                push(k, 2, w / 2.0)
                push(k, 1, w / 2.0)
        return replace(
            self, H=2,
            pair_i=np.array(cols["pair_i"], dtype=int),
            pair_j=np.array(cols["pair_j"], dtype=int),
            outcome=np.array(cols["outcome"], dtype=int),
            weight=np.array(cols["weight"], dtype=float),
            subject_idx=(np.array(cols["subject_idx"], dtype=int)
                         if self.subject_idx is not None else None),
            comparison_covariates={k: np.array(v, dtype=float)
                                   for k, v in comp_cov.items()},
        )


@dataclass(frozen=True)
class AggregatedCounts:
    """Per-pair outcome counts in display layout (favor first object first).

    ``counts[r, k]`` is the weight of outcomes in display column k for pair
    ``pairs[r]``; display column k corresponds to internal category H+1-k
    (k counted from 1).
    """

    objects: tuple[str, ...]
    pairs: tuple[tuple[int, int], ...]
    counts: np.ndarray
    H: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "counts", counts)
        if counts.shape != (len(self.pairs), self.H):
            raise ValueError("count table shape mismatch")
        if counts.size and counts.min() < 0:
            raise ValueError("counts must be nonnegative")

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def row(self, label_i: str, label_j: str) -> np.ndarray:
        i = self.objects.index(label_i)
        j = self.objects.index(label_j)
        for r, pair in enumerate(self.pairs):
            if pair == (i, j):
                return self.counts[r]
            if pair == (j, i):  # pragma: no cover - pairs stored with i<j
                return self.counts[r][::-1]
        raise KeyError(f"pair ({label_i}, {label_j}) not present")

    def binary_wins(self, ties: str = "exclude") -> np.ndarray:
        """(n_pairs, 2) array of (wins for i, wins for j) weights.

        ``ties="exclude"`` drops middle-category weight, ``ties="split"``
        adds half of it to each side.  Even H has no tie column.
        """
        if ties not in ("exclude", "split"):
            raise ValueError("ties must be 'exclude' or 'split'")
        mid = (self.H + 1) / 2.0
        k = np.arange(1, self.H + 1)
        cat = self.H + 1 - k  # internal category per display column
        wins_i = self.counts[:, cat > mid].sum(axis=1)
        wins_j = self.counts[:, cat < mid].sum(axis=1)
        if self.H % 2 == 1:
            tie_w = self.counts[:, cat == mid].sum(axis=1)
            if ties == "split":
                wins_i = wins_i + tie_w / 2.0
                wins_j = wins_j + tie_w / 2.0
        return np.column_stack([wins_i, wins_j])


@dataclass(frozen=True)
class DesignMatrix:
    """Rows of +1/-1 object indicators, one row per compared pair."""

    values: np.ndarray
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.shape[0] != len(self.pairs):
            raise ValueError("row count must match pair count")
        for r, (i, j) in enumerate(self.pairs):
            row = vals[r]
            if row[i] != 1.0 or row[j] != -1.0 or \
                    np.count_nonzero(row) != 2:
                raise ValueError(f"row {r} is not a valid +1/-1 pair row")

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_objects(self) -> int:
        return int(self.values.shape[1])


def build_design_matrix(n: int, pairs) -> DesignMatrix:
    """Design matrix with +1 at i and -1 at j for each pair (i, j)."""
    if n < 2:
        raise ValueError("need at least two objects")
    pairs = tuple((int(i), int(j)) for i, j in pairs)
    A = np.zeros((len(pairs), n))
    for r, (i, j) in enumerate(pairs):
        if not (0 <= i < j < n):
            raise ValueError(f"invalid pair ({i}, {j}) for n={n}")
        A[r, i] = 1.0
        A[r, j] = -1.0
    return DesignMatrix(A, pairs)


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class CsvSchema:
    """Column-name mapping for the long (one row per comparison) format."""

    object_i: str = "object_i"
    object_j: str = "object_j"
    outcome: str = "outcome"
    subject: str | None = "subject"
    weight: str | None = None
    comparison_covariates: tuple[str, ...] = ()


def _open_rows(path):
    text = Path(path).read_text(encoding="utf-8")
    return csv.reader(io.StringIO(text))


def load_long_csv(path, schema: CsvSchema | None = None,
                  tie_policy: str = "keep-categories",
                  H: int | None = None,
                  objects=None) -> PairedComparisonDataset:
    """Read a long-format CSV into a validated dataset.

    The header row is required.  Outcome categories are integers 1..H; H is
    inferred from the data when not supplied.  ``objects`` optionally
    declares the label order (required to get n right for empty files);
    otherwise labels are taken in order of first appearance.
    """
    if schema is None:
        schema = CsvSchema()
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"tie policy must be one of {TIE_POLICIES}")
    rows = _open_rows(path)
    try:
        header = next(rows)
    except StopIteration:
        raise ValueError(f"{path}: empty file, header row required") from None
    header = [h.strip() for h in header]
    col = {name: k for k, name in enumerate(header)}
    for required in (schema.object_i, schema.object_j, schema.outcome):
        if required not in col:
            raise ValueError(f"{path}: missing required column {required!r}")
    has_subject = schema.subject is not None and schema.subject in col
    for cov in schema.comparison_covariates:
        if cov not in col:
            raise ValueError(f"{path}: missing covariate column {cov!r}")

    declared = list(objects) if objects is not None else None
    labels: list[str] = list(declared) if declared else []
    label_pos = {lab: k for k, lab in enumerate(labels)}
    subj_labels: list[str] = []
    subj_pos: dict = {}
    pi, pj, out, wt, sidx = [], [], [], [], []
    comp_cov: dict = {name: [] for name in schema.comparison_covariates}

    def object_id(label, line_no):
        if label not in label_pos:
            if declared is not None:
                raise ValueError(
                    f"{path}:{line_no}: unknown object label {label!r}"
                )
            label_pos[label] = len(labels)
            labels.append(label)
        return label_pos[label]

    line_no = 1
    for row in rows:
        line_no += 1
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValueError(
                f"{path}:{line_no}: expected {len(header)} fields, "
                f"got {len(row)}"
            )
        try:
            y = int(row[col[schema.outcome]])
        except ValueError:
            raise ValueError(
                f"{path}:{line_no}: outcome "
                f"{row[col[schema.outcome]]!r} is not an integer"
            ) from None
        a = object_id(row[col[schema.object_i]].strip(), line_no)
        b = object_id(row[col[schema.object_j]].strip(), line_no)
        if a == b:
            raise ValueError(f"{path}:{line_no}: pair compares an object "
                             "with itself")
        # store with the lower index first; a mirrored pair mirrors the
        # outcome category (y under (j, i) is H + 1 - y under (i, j))
        if a > b:
            a, b = b, a
            out.append(("mirror", y))
        else:
            out.append(("plain", y))
        pi.append(a)
        pj.append(b)
        if schema.weight is not None and schema.weight in col:
            try:
                w = float(row[col[schema.weight]])
            except ValueError:
                raise ValueError(
                    f"{path}:{line_no}: weight is not a number"
                ) from None
        else:
            w = 1.0
        wt.append(w)
        if has_subject:
            s = row[col[schema.subject]].strip()
            if s not in subj_pos:
                subj_pos[s] = len(subj_labels)
                subj_labels.append(s)
            sidx.append(subj_pos[s])
        for cov in schema.comparison_covariates:
            try:
                comp_cov[cov].append(float(row[col[cov]]))
            except ValueError:
                raise ValueError(
                    f"{path}:{line_no}: covariate {cov!r} is not a number"
                ) from None

    if H is None:
        H = max((v for _, v in out), default=2)
    outcome = np.array([v if tag == "plain" else H + 1 - v
                        for tag, v in out], dtype=int)
    data = PairedComparisonDataset(
        objects=tuple(labels),
        H=int(H),
        pair_i=np.array(pi, dtype=int),
        pair_j=np.array(pj, dtype=int),
        outcome=outcome,
        weight=np.array(wt, dtype=float),
        subject_idx=np.array(sidx, dtype=int) if has_subject else None,
        subjects=tuple(subj_labels) if has_subject else None,
        comparison_covariates={k: np.array(v, dtype=float)
                               for k, v in comp_cov.items()},
    )
    if tie_policy == "split-half":
        data = data.split_ties()
    return data


def load_aggregated_csv(path, objects=None) -> PairedComparisonDataset:
    """Read a count-table CSV (object_i, object_j, then H count columns).

    Count columns are in display order, favor-first-object first.  Rows
    expand to weighted records; zero-count cells produce no record.
    """
    rows = _open_rows(path)
    try:
        header = next(rows)
    except StopIteration:
        raise ValueError(f"{path}: empty file, header row required") from None
    if len(header) < 4:
        raise ValueError(f"{path}: need object_i, object_j and at least two "
                         "count columns")
    H = len(header) - 2
    declared = list(objects) if objects is not None else None
    labels: list[str] = list(declared) if declared else []
    label_pos = {lab: k for k, lab in enumerate(labels)}
    pi, pj, out, wt = [], [], [], []
    line_no = 1
    for row in rows:
        line_no += 1
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}:{line_no}: expected {len(header)} "
                             f"fields, got {len(row)}")
        la, lb = row[0].strip(), row[1].strip()
        for lab in (la, lb):
            if lab not in label_pos:
                if declared is not None:
                    raise ValueError(f"{path}:{line_no}: unknown object "
                                     f"label {lab!r}")
                label_pos[lab] = len(labels)
                labels.append(lab)
        a, b = label_pos[la], label_pos[lb]
        flip = a > b
        if flip:
            a, b = b, a
        try:
            counts = [float(c) for c in row[2:]]
        except ValueError:
            raise ValueError(f"{path}:{line_no}: count is not a number") \
                from None
        if any(c < 0 for c in counts):
            raise ValueError(f"{path}:{line_no}: negative count")
        for k, c in enumerate(counts, start=1):
            if c == 0:
                continue
            y = H + 1 - k  # display column k -> internal category
            if flip:
                y = H + 1 - y
            pi.append(a)
            pj.append(b)
            out.append(y)
            wt.append(c)
    return PairedComparisonDataset(
        objects=tuple(labels),
        H=H,
        pair_i=np.array(pi, dtype=int),
        pair_j=np.array(pj, dtype=int),
        outcome=np.array(out, dtype=int),
        weight=np.array(wt, dtype=float),
    )


def load_covariates_csv(path):
    """Read a covariate table keyed by its first column.

    Returns (keys, column names, float matrix).
    """
    rows = _open_rows(path)
    header = next(rows)
    names = tuple(h.strip() for h in header[1:])
    keys, vals = [], []
    line_no = 1
    for row in rows:
        line_no += 1
        if not row or all(not c.strip() for c in row):
            continue
        keys.append(row[0].strip())
        try:
            vals.append([float(v) for v in row[1:]])
        except ValueError:
            raise ValueError(f"{path}:{line_no}: covariate is not a number") \
                from None
    return keys, names, np.array(vals, dtype=float)


# ---------------------------------------------------------------------------
# aggregation and transitivity


def aggregate_counts(data: PairedComparisonDataset) -> AggregatedCounts:
    """Weighted per-pair category counts in display layout."""
    pairs = data.observed_pairs
    pair_row = {p: r for r, p in enumerate(pairs)}
    counts = np.zeros((len(pairs), data.H))
    for k in range(data.n_records):
        r = pair_row[(int(data.pair_i[k]), int(data.pair_j[k]))]
        col = data.H - int(data.outcome[k])  # display column, 0-based
        counts[r, col] += data.weight[k]
    return AggregatedCounts(objects=data.objects, pairs=pairs,
                            counts=counts, H=data.H)


@dataclass(frozen=True)
class TransitivityReport:
    """Triad-level stochastic-transitivity diagnostics.

    Violation lists hold (labels, probabilities) pairs where ``labels`` is
    the triad ordered so the premise p(a,b) >= 1/2, p(b,c) >= 1/2 holds and
    ``probabilities`` is (p_ab, p_bc, p_ac) for that orientation.  Any weak
    violation is also listed as moderate and strong (the conditions nest).
    """

    objects: tuple[str, ...]
    n_triads: int
    n_evaluated: int
    excluded: tuple
    weak: tuple
    moderate: tuple
    strong: tuple
    tie_break_note: str = ("triads containing an exact 0.5 empirical "
                           "probability are classified as satisfying the "
                           "weak condition")

    def summary(self) -> dict:
        return {
            "n_triads": self.n_triads,
            "n_evaluated": self.n_evaluated,
            "n_excluded": len(self.excluded),
            "weak_violations": len(self.weak),
            "moderate_violations": len(self.moderate),
            "strong_violations": len(self.strong),
            "tie_break": self.tie_break_note,
        }


def transitivity_report(counts: AggregatedCounts,
                        ties: str = "exclude") -> TransitivityReport:
    """Classify every observable triad against the three transitivity levels.

    Works on binarized counts (ties excluded by default, or split half).
    A triad with an unobserved pair is excluded and reported as such.
    """
    n = len(counts.objects)
    wins = counts.binary_wins(ties=ties)
    p = np.full((n, n), np.nan)
    for r, (i, j) in enumerate(counts.pairs):
        tot = wins[r, 0] + wins[r, 1]
        if tot > 0:
            p[i, j] = wins[r, 0] / tot
            p[j, i] = wins[r, 1] / tot

    from itertools import combinations, permutations

    excluded, weak, moderate, strong = [], [], [], []
    n_triads = 0
    for triad in combinations(range(n), 3):
        n_triads += 1
        probs = [p[a, b] for a, b in combinations(triad, 2)]
        if any(np.isnan(v) for v in probs):
            missing = [
                (counts.objects[a], counts.objects[b])
                for a, b in combinations(triad, 2) if np.isnan(p[a, b])
            ]
            excluded.append((tuple(counts.objects[t] for t in triad),
                             tuple(missing)))
            continue
        has_exact_half = any(p[a, b] == 0.5
                             for a, b in combinations(triad, 2))
        viol = {"weak": None, "moderate": None, "strong": None}
        for a, b, c in permutations(triad):
            if p[a, b] >= 0.5 and p[b, c] >= 0.5:
                labels = (counts.objects[a], counts.objects[b],
                          counts.objects[c])
                trip = (p[a, b], p[b, c], p[a, c])
                if p[a, c] < 0.5 and not has_exact_half and \
                        viol["weak"] is None:
                    viol["weak"] = (labels, trip)
                if p[a, c] < min(p[a, b], p[b, c]) and \
                        viol["moderate"] is None:
                    viol["moderate"] = (labels, trip)
                if p[a, c] < max(p[a, b], p[b, c]) and \
                        viol["strong"] is None:
                    viol["strong"] = (labels, trip)
        if viol["weak"]:
            weak.append(viol["weak"])
        if viol["moderate"]:
            moderate.append(viol["moderate"])
        if viol["strong"]:
            strong.append(viol["strong"])

    report = TransitivityReport(
        objects=counts.objects,
        n_triads=n_triads,
        n_evaluated=n_triads - len(excluded),
        excluded=tuple(excluded),
        weak=tuple(weak),
        moderate=tuple(moderate),
        strong=tuple(strong),
    )
    # the three conditions nest; a weak violation that failed to surface as
    # moderate/strong would mean a classification bug
    weak_t = {frozenset(v[0]) for v in report.weak}
    moderate_t = {frozenset(v[0]) for v in report.moderate}
    strong_t = {frozenset(v[0]) for v in report.strong}
    assert weak_t <= moderate_t <= strong_t, "transitivity nesting violated"
    return report
