"""Atomic file writes and number formatting shared by the CSV/JSON writers."""

from __future__ import annotations

import contextlib
import os
import tempfile
from pathlib import Path


def fmt(x: float) -> str:
    """17 significant digits: lossless round trip of a double."""
    return format(float(x), ".17g")


@contextlib.contextmanager
def atomic_open(path, mode: str = "w", newline: str | None = "\n"):
    """Write to a temp file in the target directory, rename on success."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        kwargs = {} if "b" in mode else {"newline": newline, "encoding": "utf-8"}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise
