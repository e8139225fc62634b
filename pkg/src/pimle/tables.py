"""Text format for observed count tables.

Keyed form, one cell per line, any order, ``#`` starts a comment::

    n 0 0 0 283     # n_ijk: Y=i, X1=j, X2=k, observed outcome
    m 1 1 5         # m_jk:  X1=j, X2=k, missing outcome

Cells not listed are zero.  A bare form with exactly twelve whitespace
separated integers is also accepted, in the order
``n000 n010 n001 n011 n100 n110 n101 n111 m00 m10 m01 m11``.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from pimle.missing_data import CELLS, CellCounts

__all__ = ["CountsFormatError", "BARE_ORDER", "parse_counts", "read_counts", "format_counts", "write_counts"]

BARE_ORDER = tuple(f"n{i}{j}{k}" for i in (0, 1) for (j, k) in CELLS) + tuple(
    f"m{j}{k}" for (j, k) in CELLS
)


class CountsFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


_INT = re.compile(r"^[0-9]+$")


def _count(tok: str, lineno: int) -> int:
    if not _INT.match(tok):
        raise CountsFormatError(f"expected a non-negative integer count, got {tok!r}", lineno)
    return int(tok)


def _bit(tok: str, lineno: int) -> int:
    if tok not in ("0", "1"):
        raise CountsFormatError(f"cell index must be 0 or 1, got {tok!r}", lineno)
    return int(tok)


def parse_counts(text: str) -> CellCounts:
    n = np.zeros(8, dtype=np.int64)
    m = np.zeros(4, dtype=np.int64)
    lines = [(no, raw.split("#", 1)[0].split()) for no, raw in enumerate(text.splitlines(), 1)]
    lines = [(no, toks) for no, toks in lines if toks]
    if not lines:
        raise CountsFormatError("no counts found")

    if all(_INT.match(tok) for _, toks in lines for tok in toks):
        values = [(no, tok) for no, toks in lines for tok in toks]
        if len(values) < 12:
            missing = BARE_ORDER[len(values)]
            raise CountsFormatError(
                f"expected 12 counts, found {len(values)}; first missing cell is {missing}",
                lines[-1][0],
            )
        if len(values) > 12:
            raise CountsFormatError(f"expected 12 counts, found {len(values)}", values[12][0])
        c = [_count(tok, no) for no, tok in values]
        return CellCounts.from_vector(c)

    seen: dict[str, int] = {}
    for no, toks in lines:
        kind = toks[0]
        if kind == "n":
            if len(toks) != 5:
                raise CountsFormatError("expected 'n i j k count'", no)
            i, j, k = (_bit(x, no) for x in toks[1:4])
            key, pos, target = f"n{i}{j}{k}", 4 * i + CELLS.index((j, k)), n
        elif kind == "m":
            if len(toks) != 4:
                raise CountsFormatError("expected 'm j k count'", no)
            j, k = (_bit(x, no) for x in toks[1:3])
            key, pos, target = f"m{j}{k}", CELLS.index((j, k)), m
        else:
            raise CountsFormatError(f"unknown record type {kind!r} (expected 'n' or 'm')", no)
        if key in seen:
            raise CountsFormatError(f"cell {key} already given on line {seen[key]}", no)
        seen[key] = no
        target[pos] = _count(toks[-1], no)
    counts = CellCounts(n, m)
    if counts.total < 1:
        raise CountsFormatError("table is empty")
    return counts


def read_counts(path) -> CellCounts:
    return parse_counts(Path(path).read_text(encoding="utf-8"))


def format_counts(counts: CellCounts) -> str:
    out = ["# observed outcome: n i j k count", "# missing outcome:  m j k count"]
    for i in (0, 1):
        for j, k in CELLS:
            out.append(f"n {i} {j} {k} {counts.n_cell(i, j, k)}")
    for j, k in CELLS:
        out.append(f"m {j} {k} {counts.m_cell(j, k)}")
    return "\n".join(out) + "\n"


def write_counts(counts: CellCounts, path) -> None:
    Path(path).write_text(format_counts(counts), encoding="utf-8")
