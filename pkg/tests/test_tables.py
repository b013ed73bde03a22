import random

import pytest

from text2table.tables import (
    FormatReport,
    Table,
    parse_table,
    serialize_table,
    validate,
)


def test_serialize_header_and_row_layout():
    t = Table(header=("", "AST", "PTS"), body=(("Kevin Durant", "5", "22"),))
    assert (
        serialize_table(t)
        == "⟨ ⟩ ⟨s⟩ AST ⟨s⟩ PTS ⟨n⟩ Kevin Durant ⟨s⟩ 5 ⟨s⟩ 22"
    )


def test_serialize_single_cell_header_no_rows():
    assert serialize_table(Table(header=("A",))) == "A"


def test_serialize_rejects_marker_in_cell():
    t = Table(header=("a ⟨s⟩ b",))
    with pytest.raises(ValueError, match="reserved marker"):
        serialize_table(t)


def test_serialize_rejects_ragged_table():
    t = Table(header=("A", "B"), body=(("x",),))
    with pytest.raises(ValueError, match="cell count"):
        serialize_table(t)


def test_parse_two_by_two():
    t = parse_table("A ⟨s⟩ B ⟨n⟩ x ⟨s⟩ y")
    assert t == Table(header=("A", "B"), body=(("x", "y"),))


def test_parse_ragged_row_reports():
    report = parse_table("A ⟨s⟩ B ⟨n⟩ x")
    assert isinstance(report, FormatReport)
    assert not report.well_formed
    assert report.violations == ((1, "cell count 1 != 2"),)


def test_parse_empty_input_reports_no_header():
    report = parse_table("")
    assert isinstance(report, FormatReport)
    assert report.violations == ((0, "no header"),)


def test_parse_figure_layout_table():
    t = parse_table(
        "⟨ ⟩ ⟨s⟩ AST ⟨s⟩ PTS ⟨n⟩ Kevin Durant ⟨s⟩ 5 ⟨s⟩ 22"
        " ⟨n⟩ Stephen Curry ⟨s⟩ 8 ⟨s⟩ 30"
    )
    assert isinstance(t, Table)
    assert t.n_columns == 3
    assert t.header == ("", "AST", "PTS")
    assert [row[0] for row in t.body] == ["Kevin Durant", "Stephen Curry"]


def test_validate_well_formed():
    t = Table(header=("A", "B", "C"), body=(("1", "2", "3"), ("4", "", "6")))
    assert validate(t).well_formed


def test_validate_short_row():
    t = Table(header=("A", "B"), body=(("1", "2"), ("3",)))
    report = validate(t)
    assert not report.well_formed
    assert report.violations == ((2, "cell count 1 != 2"),)


def test_validate_empty_header():
    assert validate(Table(header=())).violations == ((0, "empty header"),)


def test_validate_marker_in_body_cell():
    t = Table(header=("A",), body=(("x ⟨∅⟩",),))
    report = validate(t)
    assert len(report.violations) == 1
    assert report.violations[0][0] == 1


def test_validate_invariant_under_row_permutation():
    rng = random.Random(7)
    t = Table(header=("A", "B"), body=(("1", "2"), ("3", "4"), ("5",)))
    base = validate(t).well_formed
    for _ in range(20):
        rows = list(t.body)
        rng.shuffle(rows)
        assert validate(Table(header=t.header, body=tuple(rows))).well_formed == base


def _random_table(rng: random.Random) -> Table:
    alphabet = "abc XYZ 0123 ⟨ ⟩ é"
    def cell() -> str:
        if rng.random() < 0.15:
            return ""
        n = rng.randrange(1, 8)
        text = "".join(rng.choice(alphabet) for _ in range(n))
        # keep single-space-normalized form so the round trip is exact
        return " ".join(text.split())
    cols = rng.randrange(1, 5)
    rows = rng.randrange(0, 5)
    return Table(
        header=tuple(cell() for _ in range(cols)),
        body=tuple(tuple(cell() for _ in range(cols)) for _ in range(rows)),
    )


def test_round_trip_1000_random_tables():
    rng = random.Random(0)
    done = 0
    while done < 1000:
        t = _random_table(rng)
        if not validate(t).well_formed:
            continue
        assert parse_table(serialize_table(t)) == t
        done += 1


def test_serialize_marker_counts():
    rng = random.Random(3)
    for _ in range(50):
        t = _random_table(rng)
        if not validate(t).well_formed:
            continue
        s = serialize_table(t)
        rows = 1 + t.n_rows
        assert s.count("⟨n⟩") == rows - 1
        # "⟨ ⟩" contains no "⟨s⟩", so counting the marker directly is safe
        assert s.count("⟨s⟩") == rows * (t.n_columns - 1)
