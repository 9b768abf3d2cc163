"""Versioned tab-separated dumps.

Every file starts with a ``# semfda <tag> v<version>`` line followed by the
column header row. Floats are written with ``repr`` so that a write/read
round trip is bit-exact.
"""

from __future__ import annotations

import io
import os
from typing import Iterable, Sequence

from .errors import ParseError

FORMAT_VERSION = 1


def fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item"):  # numpy scalar
        return fmt(value.item())
    return str(value)


def write_tsv(path, tag: str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    buf.write(f"# semfda {tag} v{FORMAT_VERSION}\n")
    buf.write("\t".join(columns) + "\n")
    for row in rows:
        buf.write("\t".join(fmt(v) for v in row) + "\n")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_tsv(path, tag: str, columns: Sequence[str]) -> list[list[str]]:
    """Read a dump written by :func:`write_tsv`, checking tag, version and header."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    expected = f"# semfda {tag} v{FORMAT_VERSION}"
    if lines[0].strip() != expected:
        raise ParseError(f"{path}: expected version header {expected!r}, got {lines[0]!r}", 1)
    if len(lines) < 2 or lines[1].split("\t") != list(columns):
        raise ParseError(f"{path}: expected columns {list(columns)}", 2)
    rows = []
    for n, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != len(columns):
            raise ParseError(f"{path}: expected {len(columns)} fields, got {len(parts)}", n)
        rows.append(parts)
    return rows
