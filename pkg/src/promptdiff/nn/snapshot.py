"""Versioned binary parameter snapshots.

Layout: a magic line, one JSON header line, then the row-major float64
payload of every array in header order. Header keys are sorted and floats
are stored as raw little-endian bytes, so saving the same values twice
yields identical files and loading is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from promptdiff.errors import LoadError

MAGIC = b"PROMPTDIFF-SNAPSHOT\n"
FORMAT_VERSION = 1


def save_snapshot(path, sections: dict[str, dict[str, np.ndarray]], meta: dict | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for section, arrays in sections.items():
        for name, a in arrays.items():
            a = np.asarray(a, dtype="<f8")
            entries.append({"section": section, "name": name,
                            "shape": list(a.shape), "offset": offset})
            data = a.tobytes(order="C")
            chunks.append(data)
            offset += len(data)
    header = {"format_version": FORMAT_VERSION, "entries": entries, "meta": meta or {}}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for data in chunks:
            fh.write(data)
    tmp.replace(path)


def load_snapshot(path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read snapshot {path}: {exc}") from exc
    if not raw.startswith(MAGIC):
        raise LoadError(f"{path} is not a parameter snapshot")
    body = raw[len(MAGIC):]
    nl = body.find(b"\n")
    if nl < 0:
        raise LoadError(f"{path}: truncated header")
    try:
        header = json.loads(body[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: malformed header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise LoadError(f"{path}: unsupported snapshot version {header.get('format_version')!r}")
    payload = body[nl + 1:]
    sections: dict[str, dict[str, np.ndarray]] = {}
    for e in header["entries"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start, stop = e["offset"], e["offset"] + 8 * count
        if stop > len(payload):
            raise LoadError(f"{path}: payload truncated at {e['section']}/{e['name']}")
        a = np.frombuffer(payload[start:stop], dtype="<f8").astype(np.float64).reshape(e["shape"])
        sections.setdefault(e["section"], {})[e["name"]] = a
    return sections, header["meta"]
