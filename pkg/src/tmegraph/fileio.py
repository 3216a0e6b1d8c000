"""Small helpers for the text artifact formats: comment headers and atomic writes."""

import os
import tempfile
from pathlib import Path

from . import __version__


class FormatError(ValueError):
    """Malformed artifact file. ``line`` is 1-based, or None when not line-specific."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def comment_header(subcommand, config=None):
    lines = [f"# tmegraph {__version__} {subcommand}"]
    for key, value in sorted((config or {}).items()):
        lines.append(f"# {key}={value}")
    return "\n".join(lines) + "\n"


def split_comments(text):
    """Yield (lineno, line) for the non-comment lines of ``text``.

    Leading ``#`` lines are provenance headers written by the CLI.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.startswith("#"):
            continue
        yield lineno, line


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
