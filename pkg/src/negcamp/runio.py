"""Deterministic file output and digest helpers for reproducible runs."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path


def stable_json_dumps(obj: object, indent: int | None = None) -> str:
    """JSON with sorted keys and UTF-8 text, stable across runs."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=indent)


def write_text(path: str | Path, content: str) -> None:
    """Atomic UTF-8 write with LF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, obj: object) -> None:
    write_text(path, stable_json_dumps(obj, indent=2) + "\n")


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
