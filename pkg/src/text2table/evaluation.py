"""Order-insensitive table scoring.

A table is decomposed into three record multisets: the header cells, the
first column of the body, and the remaining data cells keyed by their
row's first cell and their column's header cell.  Each part gets an
exact-match F1 (multiset intersection) and a soft chrF F1 (greedy
one-to-one matching on similarity).  Corpus scores are per-table scores
averaged arithmetically, and outputs that fail format validation count
toward the error rate and score zero everywhere.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .chrf import chrf_similarity
from .tables import Table, validate

PARTS = ("header", "first_column", "data")
METRICS = ("exact", "chrf")


@dataclass(frozen=True)
class CellRecord:
    """One scoreable unit of a table.

    Header and first-column records carry only their content; data
    records also carry the first cell of their row and the header cell
    of their column, so a value only counts when it sits at the right
    coordinates.
    """

    part: str
    row_key: str
    col_key: str
    content: str

    def key_string(self) -> str:
        return f"{self.row_key} | {self.col_key} | {self.content}"


@dataclass(frozen=True)
class PartScores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ScoreReport:
    """Corpus-level scores: part -> PartScores per metric, plus the

    percentage of outputs that failed format validation.
    """

    exact: Mapping[str, PartScores]
    chrf: Mapping[str, PartScores]
    error_rate: float
    n_tables: int

    def as_text(self) -> str:
        lines = [f"tables: {self.n_tables}", f"error rate: {self.error_rate:.2f}"]
        lines.append(f"{'part':<14}{'metric':<8}{'prec':>8}{'rec':>8}{'f1':>8}")
        for part in PARTS:
            for metric, table in (("exact", self.exact), ("chrf", self.chrf)):
                s = table[part]
                lines.append(
                    f"{part:<14}{metric:<8}"
                    f"{s.precision:>8.2f}{s.recall:>8.2f}{s.f1:>8.2f}"
                )
        return "\n".join(lines) + "\n"

    def as_kv(self) -> str:
        lines = [f"n_tables\t{self.n_tables}", f"error_rate\t{self.error_rate:.4f}"]
        for part in PARTS:
            for metric, table in (("exact", self.exact), ("chrf", self.chrf)):
                s = table[part]
                for field in ("precision", "recall", "f1"):
                    lines.append(f"{metric}.{part}.{field}\t{getattr(s, field):.4f}")
        return "\n".join(lines) + "\n"


def extract_records(table: Table) -> list[CellRecord]:
    """Decompose a well-formed table into its scoreable records.

    An empty top-left header cell is a structural corner, not content,
    and produces no record.  Empty data cells produce no record either:
    a cell the gold table does not fill cannot be credited or penalized.
    """
    report = validate(table)
    if not report.well_formed:
        raise ValueError(f"malformed table: {report.violations[0][1]}")
    records = []
    for j, cell in enumerate(table.header):
        if j == 0 and cell == "":
            continue
        records.append(CellRecord("header", "", "", cell))
    for row in table.body:
        records.append(CellRecord("first_column", "", "", row[0]))
        for j in range(1, len(row)):
            if row[j] == "":
                continue
            records.append(CellRecord("data", row[0], table.header[j], row[j]))
    return records


def _harmonic(p: float, r: float) -> float:
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def exact_f1(preds: Sequence[CellRecord], golds: Sequence[CellRecord]) -> PartScores:
    """Multiset-intersection precision/recall/F1 on a 0..100 scale."""
    if not preds and not golds:
        return PartScores(100.0, 100.0, 100.0)
    if not preds or not golds:
        return PartScores(0.0, 0.0, 0.0)
    overlap = sum((Counter(preds) & Counter(golds)).values())
    p = 100.0 * overlap / len(preds)
    r = 100.0 * overlap / len(golds)
    return PartScores(p, r, _harmonic(p, r))


def chrf_f1(preds: Sequence[CellRecord], golds: Sequence[CellRecord]) -> PartScores:
    """Soft precision/recall/F1 under greedy one-to-one chrF matching.

    All pred/gold pairs are ranked by similarity (ties broken by index
    order) and matched greedily without reuse.  A record's credit is its
    matched similarity, zero if unmatched.
    """
    if not preds and not golds:
        return PartScores(100.0, 100.0, 100.0)
    if not preds or not golds:
        return PartScores(0.0, 0.0, 0.0)
    pairs = []
    for i, pred in enumerate(preds):
        for j, gold in enumerate(golds):
            sim = chrf_similarity(pred.key_string(), gold.key_string())
            pairs.append((-sim, i, j))
    pairs.sort()
    pred_credit = [0.0] * len(preds)
    gold_credit = [0.0] * len(golds)
    pred_used = [False] * len(preds)
    gold_used = [False] * len(golds)
    for neg_sim, i, j in pairs:
        if pred_used[i] or gold_used[j]:
            continue
        pred_used[i] = True
        gold_used[j] = True
        pred_credit[i] = gold_credit[j] = -neg_sim
    p = sum(pred_credit) / len(preds)
    r = sum(gold_credit) / len(golds)
    return PartScores(p, r, _harmonic(p, r))


def _score_table(pred: Table, gold: Table) -> dict:
    pred_records = extract_records(pred)
    gold_records = extract_records(gold)
    out = {}
    for part in PARTS:
        ps = [r for r in pred_records if r.part == part]
        gs = [r for r in gold_records if r.part == part]
        out[("exact", part)] = exact_f1(ps, gs)
        out[("chrf", part)] = chrf_f1(ps, gs)
    return out


_ZERO = PartScores(0.0, 0.0, 0.0)


def evaluate_corpus(
    preds: Sequence[Optional[Table]], golds: Sequence[Table]
) -> ScoreReport:
    """Average per-table scores over a corpus.

    A None or malformed prediction is a format error: it scores zero on
    every part and metric for its table and raises the error rate.
    """
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold tables")
    if not golds:
        raise ValueError("empty corpus")
    sums = {(m, part): [0.0, 0.0, 0.0] for m in METRICS for part in PARTS}
    errors = 0
    for pred, gold in zip(preds, golds):
        if pred is None or not validate(pred).well_formed:
            errors += 1
            continue  # zeros already counted by omission
        scored = _score_table(pred, gold)
        for key, part_scores in scored.items():
            sums[key][0] += part_scores.precision
            sums[key][1] += part_scores.recall
            sums[key][2] += part_scores.f1
    n = len(golds)
    tables = {m: {} for m in METRICS}
    for (metric, part), (p, r, f) in sums.items():
        tables[metric][part] = PartScores(p / n, r / n, f / n)
    return ScoreReport(
        exact=tables["exact"],
        chrf=tables["chrf"],
        error_rate=100.0 * errors / n,
        n_tables=n,
    )
