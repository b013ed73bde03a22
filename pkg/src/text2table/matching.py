"""Row-to-target assignment: first-cell cost matrix and Hungarian solver.

The solver lifts float64 costs to exact integers (every float is a dyadic
rational, so scaling by the largest denominator is lossless) and runs the
O(M^3) augmenting-path algorithm in integer arithmetic.  That makes the
optimum exact and the lexicographic tie-break well defined: among all
minimum-cost permutations we return the lexicographically smallest,
found by fixing slots in ascending order and testing only the candidate
edges whose reduced cost is zero (no optimal matching can use any other).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import DecoderState, CrossContext, ModelConfig, ModelParams, first_cell_rollout
from .tokenizer import EOS, NEWROW, NULL, SEP

_CELL_BOUNDARY = (SEP, EOS, NEWROW)


def first_cell_length(tokens: Sequence[int]) -> int:
    """Tokens strictly before the first cell boundary of a row target."""
    n = 0
    for t in tokens:
        if t in _CELL_BOUNDARY:
            break
        n += 1
    return n


@dataclass(frozen=True)
class PaddedTargets:
    """Exactly M target rows, real ones first-cell-measured, the rest null."""

    rows: tuple[tuple[int, ...], ...]
    is_null: tuple[bool, ...]
    first_cell_len: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.rows) == len(self.is_null) == len(self.first_cell_len)):
            raise ValueError("rows, is_null and first_cell_len must align")

    @property
    def n_slots(self) -> int:
        return len(self.rows)

    @property
    def n_real(self) -> int:
        return sum(not x for x in self.is_null)


def pad_targets(real_rows: Sequence[Sequence[int]], m: int) -> PaddedTargets:
    """Pad real row targets with single-token null rows up to m slots."""
    if len(real_rows) > m:
        raise ValueError(f"{len(real_rows)} target rows exceed {m} row slots")
    rows, nulls, lens = [], [], []
    for row in real_rows:
        if len(row) == 0:
            raise ValueError("empty target row")
        rows.append(tuple(int(t) for t in row))
        nulls.append(False)
        lens.append(first_cell_length(rows[-1]))
    for _ in range(m - len(real_rows)):
        rows.append((NULL,))
        nulls.append(True)
        lens.append(0)
    return PaddedTargets(tuple(rows), tuple(nulls), tuple(lens))


def build_cost_matrix(probs: np.ndarray, targets: PaddedTargets) -> np.ndarray:
    """Cost of slot m taking target j: minus the summed probability the
    rollout put on target j's first-cell tokens; null targets cost 0."""
    m_slots, k_fc, _ = probs.shape
    if m_slots != targets.n_slots:
        raise ValueError(f"{m_slots} rollout rows vs {targets.n_slots} target slots")
    longest = max(targets.first_cell_len)
    if k_fc < longest:
        raise ValueError(f"rollout length {k_fc} shorter than a first cell ({longest})")
    cost = np.zeros((m_slots, m_slots))
    for j, (row, null, n) in enumerate(
        zip(targets.rows, targets.is_null, targets.first_cell_len)
    ):
        if null or n == 0:
            continue
        tokens = np.asarray(row[:n])
        cost[:, j] = -probs[:, np.arange(n), tokens].sum(axis=1)
    return cost


@dataclass(frozen=True)
class Assignment:
    perm: tuple[int, ...]   # perm[m] = target index taken by slot m
    total_cost: float


def _to_exact_ints(cost: np.ndarray) -> list[list[int]]:
    ratios = [[float(x).as_integer_ratio() for x in row] for row in cost]
    scale = max(den for row in ratios for _, den in row)
    return [[num * (scale // den) for num, den in row] for row in ratios]


def _solve(a: list[list[int]], n: int) -> tuple[list[int], list[int], list[int]]:
    """Augmenting-path assignment on an exact integer matrix.

    Returns (col_of_row, u, v): col_of_row[i] = column matched to row i,
    with optimal dual potentials u (rows) and v (columns).
    """
    inf = sum(abs(x) for row in a for x in row) + 1
    u = [0] * (n + 1)
    v = [0] * (n + 1)
    p = [0] * (n + 1)        # p[j] = 1-based row matched to column j; p[0] = current row
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = [0] * n
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row, u, v


def _lex_smallest_optimum(a: list[list[int]], n: int) -> list[int]:
    perm, u, v = _solve(a, n)
    best = sum(a[i][perm[i]] for i in range(n))
    # Any edge inside some optimal matching has zero reduced cost, so only
    # those edges can improve the permutation lexicographically.
    reduced = [[a[i][j] - u[i + 1] - v[j + 1] for j in range(n)] for i in range(n)]

    taken: list[int] = []
    free_rows = list(range(n))
    free_cols = list(range(n))
    fixed_cost = 0
    for _ in range(n):
        row = free_rows[0]
        current = perm[row]
        committed = None
        for col in free_cols:
            if col >= current:
                break
            if reduced[row][col] != 0:
                continue
            rest_rows = [r for r in free_rows if r != row]
            rest_cols = [c for c in free_cols if c != col]
            sub = [[a[r][c] for c in rest_cols] for r in rest_rows]
            sub_perm, _, _ = _solve(sub, n - len(taken) - 1) if rest_rows else ([], [], [])
            sub_cost = sum(
                a[r][rest_cols[sub_perm[k]]] for k, r in enumerate(rest_rows)
            )
            if fixed_cost + a[row][col] + sub_cost == best:
                committed = col
                # adopt the witness as the optimal completion going forward
                for k, r in enumerate(rest_rows):
                    perm[r] = rest_cols[sub_perm[k]]
                break
        if committed is None:
            committed = current
        perm[row] = committed
        taken.append(committed)
        fixed_cost += a[row][committed]
        free_rows.remove(row)
        free_cols.remove(committed)
    return perm


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-cost perfect matching; lexicographically smallest among ties."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return Assignment(perm=(), total_cost=0.0)
    perm = _lex_smallest_optimum(_to_exact_ints(cost), n)
    total = float(np.sum(cost[np.arange(n), perm]))
    return Assignment(perm=tuple(perm), total_cost=total)


def assign_targets(
    params: ModelParams,
    config: ModelConfig,
    ctx: CrossContext,
    header_state: DecoderState,
    targets: PaddedTargets,
) -> Assignment:
    """Roll the first cells, score them against targets, solve the matching.

    Gradient-free: the rollout records nothing and parameter gradients are
    untouched.
    """
    if targets.n_slots != config.max_rows:
        raise ValueError(
            f"{targets.n_slots} target slots but the model decodes {config.max_rows} rows"
        )
    k_fc = max(targets.first_cell_len) + 1
    probs = first_cell_rollout(params, config, ctx, header_state, k_fc)
    return hungarian(build_cost_matrix(probs, targets))


def format_assignment(cost: np.ndarray, assignment: Assignment) -> str:
    """Aligned text dump of a cost matrix with the chosen entries starred."""
    n = cost.shape[0]
    lines = [f"total cost {assignment.total_cost:.6f}"]
    for m in range(n):
        cells = [
            f"{cost[m, j]:9.4f}" + ("*" if assignment.perm[m] == j else " ")
            for j in range(n)
        ]
        lines.append(f"slot {m}: " + " ".join(cells))
    return "\n".join(lines)
