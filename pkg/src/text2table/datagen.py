"""Synthetic text-to-table corpus generation and dataset file I/O.

Each instance is a short game recap: one sentence per entity stating its
stat line, optionally interleaved with stat-free distractor sentences
and shuffled.  The target table has an empty corner cell over the entity
column and one column per stat.  Every cell value appears verbatim in
the source text, so perfect extraction is always attainable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .tables import FormatReport, Table, parse_table, serialize_table, validate

FIRST_NAMES = (
    "Ava", "Ben", "Cara", "Dan", "Elsa", "Finn", "Gina", "Hugo",
    "Iris", "Jack", "Kira", "Liam", "Mona", "Nate", "Olga", "Pete",
    "Quinn", "Rosa", "Sam", "Tara", "Umar", "Vera", "Wade", "Yuki",
)
LAST_NAMES = (
    "Adler", "Brook", "Cole", "Drake", "Ellis", "Frost", "Gray", "Hale",
    "Irwin", "Jones", "Kerr", "Lane", "Moss", "Nash", "Ortiz", "Price",
    "Reed", "Shaw", "Tate", "Usher", "Vance", "West", "York", "Zane",
)

DISTRACTOR_TEMPLATES = (
    "The crowd cheered through the {} quarter.",
    "Coaches praised the defense after the {} half.",
    "The arena in {} was sold out.",
    "Reporters called it the game of the {} season.",
)
DISTRACTOR_FILLERS = ("first", "second", "third", "fourth", "home", "away")

MAX_STAT = 49


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one generated corpus."""

    n_instances: int
    rows_min: int
    rows_max: int
    columns: tuple[str, ...] = ("points", "assists")
    name_pool: int = len(FIRST_NAMES) * len(LAST_NAMES)
    shuffle_sentences: bool = True
    distractor_sentences: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.n_instances <= 0:
            raise ValueError("n_instances must be positive")
        if not 0 <= self.rows_min <= self.rows_max:
            raise ValueError(
                f"need 0 <= rows_min <= rows_max, got {self.rows_min}..{self.rows_max}"
            )
        if not self.columns:
            raise ValueError("at least one stat column is required")
        max_pool = len(FIRST_NAMES) * len(LAST_NAMES)
        if not 0 < self.name_pool <= max_pool:
            raise ValueError(f"name_pool must be in 1..{max_pool}")
        if self.name_pool < self.rows_max:
            raise ValueError(
                f"name pool of {self.name_pool} cannot fill {self.rows_max} rows"
            )
        if self.distractor_sentences < 0:
            raise ValueError("distractor_sentences must be >= 0")


def _all_names() -> list[str]:
    return [f"{f} {l}" for f in FIRST_NAMES for l in LAST_NAMES]


def _stat_sentence(name: str, columns: Sequence[str], values: Sequence[int]) -> str:
    parts = [f"{v} {col}" for col, v in zip(columns, values)]
    if len(parts) == 1:
        stats = parts[0]
    else:
        stats = ", ".join(parts[:-1]) + " and " + parts[-1]
    return f"{name} recorded {stats}."


def _distractor(rng: random.Random) -> str:
    template = rng.choice(DISTRACTOR_TEMPLATES)
    return template.format(rng.choice(DISTRACTOR_FILLERS))


def generate(spec: SynthSpec) -> tuple[list[str], list[Table]]:
    """Produce aligned (source document, target table) lists."""
    rng = random.Random(spec.seed)
    pool = _all_names()[: spec.name_pool]
    sources = []
    tables = []
    header = ("",) + spec.columns
    for _ in range(spec.n_instances):
        n_rows = rng.randint(spec.rows_min, spec.rows_max)
        names = rng.sample(pool, n_rows)
        rows = []
        sentences = []
        for name in names:
            values = [rng.randrange(MAX_STAT + 1) for _ in spec.columns]
            rows.append((name,) + tuple(str(v) for v in values))
            sentences.append(_stat_sentence(name, spec.columns, values))
        for _ in range(spec.distractor_sentences):
            sentences.append(_distractor(rng))
        if spec.shuffle_sentences:
            rng.shuffle(sentences)
        sources.append(" ".join(sentences))
        tables.append(Table(header, tuple(rows)))
    return sources, tables


@dataclass(frozen=True)
class DatasetPair:
    """Paths of an aligned corpus: one document and one serialized table

    per line, same line count in both files.
    """

    source_path: Path
    target_path: Path

    def load(self) -> tuple[list[str], list[Table]]:
        return load_pair(self.source_path, self.target_path)


def write_pair(
    sources: Sequence[str], tables: Iterable[Table], source_path, target_path
) -> DatasetPair:
    source_path = Path(source_path)
    target_path = Path(target_path)
    lines = []
    for table in tables:
        report = validate(table)
        if not report.well_formed:
            raise ValueError(f"refusing to write malformed table: {report.violations}")
        lines.append(serialize_table(table))
    if len(sources) != len(lines):
        raise ValueError(f"{len(sources)} sources for {len(lines)} tables")
    for text in sources:
        if "\n" in text:
            raise ValueError("source documents must be single lines")
    source_path.write_text("".join(s + "\n" for s in sources), encoding="utf-8")
    target_path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return DatasetPair(source_path, target_path)


def load_pair(source_path, target_path) -> tuple[list[str], list[Table]]:
    sources = Path(source_path).read_text(encoding="utf-8").splitlines()
    lines = Path(target_path).read_text(encoding="utf-8").splitlines()
    if len(sources) != len(lines):
        raise ValueError(
            f"{source_path} has {len(sources)} lines, {target_path} has {len(lines)}"
        )
    tables = []
    for i, line in enumerate(lines):
        parsed = parse_table(line)
        report = parsed if isinstance(parsed, FormatReport) else validate(parsed)
        if not report.well_formed:
            raise ValueError(
                f"{target_path} line {i + 1}: {report.violations[0][1]}"
            )
        tables.append(parsed)
    return sources, tables


def reorder_rows(tables: Sequence[Table], seed: int) -> list[Table]:
    """Independently shuffle each table's body rows; headers unchanged."""
    rng = random.Random(seed)
    out = []
    for table in tables:
        rows = list(table.body)
        rng.shuffle(rows)
        out.append(Table(table.header, tuple(rows)))
    return out


def reorder_study(pair: DatasetPair, seeds: Sequence[int]) -> list[DatasetPair]:
    """Write one row-shuffled copy of the dataset per seed.

    Copies live next to the original target file with a .seedN suffix;
    the source file is shared, not duplicated.
    """
    sources, tables = pair.load()
    copies = []
    for seed in seeds:
        shuffled = reorder_rows(tables, seed)
        target = pair.target_path.with_name(
            f"{pair.target_path.name}.seed{seed}"
        )
        copies.append(write_pair(sources, shuffled, pair.source_path, target))
    return copies
