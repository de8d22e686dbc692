"""Atomic file output: interrupted runs never leave partial files."""

from __future__ import annotations

import os
import tempfile


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def csv_text(header, rows) -> str:
    """Render rows as CRLF-terminated CSV text (all cells pre-formatted)."""
    lines = [",".join(map(str, header))]
    lines.extend(",".join(map(str, row)) for row in rows)
    return "\r\n".join(lines) + "\r\n"
