"""Small text-output helpers shared by the report writers and the CLI."""

from __future__ import annotations

import io


def fmt(x) -> str:
    """Render a float with 17 significant digits (round-trips exactly)."""
    return format(float(x), ".17g")


def write_csv(target, header, rows) -> None:
    """Write rows of already-stringified cells; target is a path or file."""
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w", encoding="utf-8", newline="\n") if own else target
    try:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    finally:
        if own:
            fh.close()


def write_keyvalues(target, pairs) -> None:
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w", encoding="utf-8", newline="\n") if own else target
    try:
        for k, v in pairs:
            fh.write(f"{k} = {v}\n")
    finally:
        if own:
            fh.close()


def render_keyvalues(pairs) -> str:
    buf = io.StringIO()
    write_keyvalues(buf, pairs)
    return buf.getvalue()
