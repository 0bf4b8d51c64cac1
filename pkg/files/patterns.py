import re
from pathlib import Path
from typing import List, Optional

import numpy as np

from factor.errors import ParseError, UsageError
from factor.model import CellKind, PatternMatrix

# "*" free, "0" fixed zero, "+" positive anchor, any other number a fixed value
_CELL = re.compile(r"[^,\s]+")
_SYMBOLS = {"*": CellKind.FREE, "+": CellKind.ANCHOR}


def parse_pattern(text: str, source: Optional[str] = None) -> PatternMatrix:
    """Pattern grid, one row per item; cells separated by commas or whitespace, '#' comments."""
    kinds: List[List[int]] = []
    values: List[List[float]] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        cells = list(_CELL.finditer(line))
        if not cells:
            continue
        row_kinds, row_values = [], []
        for cell in cells:
            token = cell.group()
            if token in _SYMBOLS:
                row_kinds.append(_SYMBOLS[token])
                row_values.append(0.0)
                continue
            try:
                value = float(token)
            except ValueError:
                raise ParseError(number, cell.start() + 1, f"unknown pattern cell {token!r}; use *, 0, + or a number", source)
            if not np.isfinite(value):
                raise ParseError(number, cell.start() + 1, f"fixed value {token!r} is not finite", source)
            row_kinds.append(CellKind.ZERO if value == 0 else CellKind.VALUE)
            row_values.append(value)
        if kinds and len(row_kinds) != len(kinds[0]):
            expected = len(kinds[0])
            column = cells[expected].start() + 1 if len(row_kinds) > expected else len(line.rstrip()) + 1
            raise ParseError(number, column, f"row has {len(row_kinds)} cells, expected {len(kinds[0])}", source)
        kinds.append(row_kinds)
        values.append(row_values)
    if not kinds:
        raise ParseError(1, 1, "empty pattern", source)
    return PatternMatrix(np.array(kinds, dtype=np.int8), np.array(values, dtype=float))


def load_pattern(file_path: str) -> PatternMatrix:
    path = Path(file_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read pattern file {file_path}: {exc.strerror}")
    return parse_pattern(text, source=path.name)


def format_pattern(pattern: PatternMatrix) -> str:
    symbols = {CellKind.FREE: "*", CellKind.ZERO: "0", CellKind.ANCHOR: "+"}
    lines = []
    for kinds, values in zip(pattern.kinds, pattern.values):
        cells = [symbols[k] if k in symbols else repr(float(v)) for k, v in zip(kinds, values)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
