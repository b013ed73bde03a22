"""Table data model and its linear text serialization.

A table is a header row plus zero or more body rows, all the same width.
The serialized form joins cells with " ⟨s⟩ " inside a row and rows with
" ⟨n⟩ "; an empty cell is written as the marker "⟨ ⟩".  One serialized
table per line is the on-disk format for dataset target files and for
generated output, and parsing back out of that format is what the
error-rate metric counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

SEP_MARKER = "⟨s⟩"
NEWROW_MARKER = "⟨n⟩"
NULL_MARKER = "⟨∅⟩"
EMPTY_CELL_MARKER = "⟨ ⟩"

RESERVED_MARKERS = (SEP_MARKER, NEWROW_MARKER, NULL_MARKER)

# Cells are raw surface strings; "" denotes an empty cell.  Metrics compare
# surface strings, so numeric cells are deliberately not typed.
Cell = str


@dataclass(frozen=True)
class Table:
    """Header plus body rows of cells.  Construction does not validate;

    ill-formed values are representable so that validate() can report on
    them (model output is parsed into whatever shape it actually has).
    """

    header: tuple[Cell, ...]
    body: tuple[tuple[Cell, ...], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "header", tuple(self.header))
        object.__setattr__(self, "body", tuple(tuple(row) for row in self.body))

    @property
    def n_columns(self) -> int:
        return len(self.header)

    @property
    def n_rows(self) -> int:
        return len(self.body)


@dataclass(frozen=True)
class FormatReport:
    """Outcome of format validation: a list of (row_index, description).

    Row index 0 is the header; body rows count from 1 in serialized order.
    """

    violations: tuple[tuple[int, str], ...] = ()

    @property
    def well_formed(self) -> bool:
        return not self.violations


def _render_cell(text: Cell) -> str:
    return EMPTY_CELL_MARKER if text == "" else text


def _trim_one_space(s: str) -> str:
    # Exact inverse of the single-space joins used by serialize_table.
    if s.startswith(" "):
        s = s[1:]
    if s.endswith(" "):
        s = s[:-1]
    return s


def _parse_cell(s: str) -> Cell:
    s = _trim_one_space(s)
    return "" if s == EMPTY_CELL_MARKER else s


def render_row(row: Sequence[Cell]) -> str:
    """One row's serialized text: cells joined by the cell marker."""
    return f" {SEP_MARKER} ".join(_render_cell(c) for c in row)


def serialize_table(t: Table) -> str:
    """Render a table to its one-line text form.

    Raises ValueError for tables that violate the format invariants
    (ragged rows, reserved marker inside a cell): such a table has no
    faithful serialization.
    """
    report = validate(t)
    if not report.well_formed:
        row, why = report.violations[0]
        raise ValueError(f"cannot serialize ill-formed table: row {row}: {why}")
    return f" {NEWROW_MARKER} ".join(render_row(row) for row in (t.header, *t.body))


def parse_table(s: str) -> Union[Table, FormatReport]:
    """Inverse of serialize_table.

    Splits on the row marker then the cell marker, trimming the single
    surrounding spaces the joins introduced; "⟨ ⟩" maps back to the empty
    cell.  Ragged body rows (cell count differing from the header's) are
    reported rather than parsed; so is empty input.
    """
    if s == "":
        return FormatReport(((0, "no header"),))
    rows = [
        [_parse_cell(cell) for cell in fragment.split(SEP_MARKER)]
        for fragment in s.split(NEWROW_MARKER)
    ]
    header = rows[0]
    violations = tuple(
        (i, f"cell count {len(row)} != {len(header)}")
        for i, row in enumerate(rows[1:], start=1)
        if len(row) != len(header)
    )
    if violations:
        return FormatReport(violations)
    return Table(header=tuple(header), body=tuple(tuple(r) for r in rows[1:]))


def validate(t: Table) -> FormatReport:
    """Enumerate format violations; total over all Table values."""
    violations: list[tuple[int, str]] = []
    if len(t.header) < 1:
        violations.append((0, "empty header"))
    for index, row in enumerate((t.header, *t.body)):
        for cell in row:
            for marker in RESERVED_MARKERS:
                if marker in cell:
                    violations.append((index, f"reserved marker {marker!r} in cell"))
            if cell == EMPTY_CELL_MARKER:
                # Literal "⟨ ⟩" content would parse back as the empty cell;
                # refusing it keeps serialize/parse a true inverse pair.
                violations.append((index, f"reserved marker {EMPTY_CELL_MARKER!r} in cell"))
        if index > 0 and len(row) != len(t.header):
            violations.append((index, f"cell count {len(row)} != {len(t.header)}"))
    return FormatReport(tuple(violations))
