"""Versioned, checksummed text files.

Layout::

    ma4bdi <kind> v<version>
    <json body, sorted keys>
    sha256 <hex digest of the body>

Serialisation is deterministic, so the same value always produces the same
bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .domain import PipelineError

FORMAT_VERSION = 1


class StorageError(PipelineError):
    pass


def dumps(kind: str, body) -> str:
    text = json.dumps(body, sort_keys=True, indent=1, ensure_ascii=True, allow_nan=False)
    digest = hashlib.sha256(text.encode("ascii")).hexdigest()
    return f"ma4bdi {kind} v{FORMAT_VERSION}\n{text}\nsha256 {digest}\n"


def loads(kind: str, data: str, origin: str = "<string>"):
    lines = data.split("\n")
    if len(lines) < 4 or lines[-1] != "":
        raise StorageError("corrupt-views", f"{origin}: truncated or empty file")
    header, body, trailer = lines[0], "\n".join(lines[1:-2]), lines[-2]
    if header != f"ma4bdi {kind} v{FORMAT_VERSION}":
        raise StorageError("corrupt-views", f"{origin}: unexpected header {header!r}")
    if not trailer.startswith("sha256 "):
        raise StorageError("corrupt-views", f"{origin}: missing checksum")
    if hashlib.sha256(body.encode("ascii")).hexdigest() != trailer[7:]:
        raise StorageError("corrupt-views", f"{origin}: checksum mismatch")
    return json.loads(body)


def write(path, kind: str, body) -> None:
    path = Path(path)
    data = dumps(kind, body)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w", encoding="ascii", newline="\n") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError("io-failure", f"cannot write {path}: {exc}") from exc


def read(path, kind: str):
    path = Path(path)
    try:
        with open(path, encoding="ascii", newline="\n") as fh:
            data = fh.read()
    except FileNotFoundError as exc:
        raise StorageError("io-failure", f"missing file {path}") from exc
    except UnicodeDecodeError as exc:
        raise StorageError("corrupt-views", f"{path}: not an ascii text file") from exc
    except OSError as exc:
        raise StorageError("io-failure", f"cannot read {path}: {exc}") from exc
    return loads(kind, data, str(path))
