"""Named-tensor checkpoints.

A tensor set ``<stem>`` is two files:

``<stem>.manifest``  text; header ``mmgat-tensors 1``, then one line per tensor
                     ``<name> <shape as d0xd1...> <byte offset> <byte count>``
``<stem>.bin``       raw little-endian float64 payloads concatenated in
                     manifest order, each row-major.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

HEADER = "mmgat-tensors 1"


def _shape_str(shape: tuple[int, ...]) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "scalar" else tuple(int(d) for d in text.split("x"))


def save_tensors(tensors: Mapping[str, np.ndarray], stem: str | Path) -> None:
    stem = Path(stem)
    lines = [HEADER]
    chunks = []
    offset = 0
    for name in sorted(tensors):
        if any(c.isspace() for c in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        data = np.ascontiguousarray(tensors[name], dtype="<f8").tobytes()
        lines.append(f"{name} {_shape_str(np.shape(tensors[name]))} {offset} {len(data)}")
        chunks.append(data)
        offset += len(data)
    stem.with_suffix(".manifest").write_text("\n".join(lines) + "\n")
    stem.with_suffix(".bin").write_bytes(b"".join(chunks))


def load_tensors(stem: str | Path) -> dict[str, np.ndarray]:
    stem = Path(stem)
    lines = stem.with_suffix(".manifest").read_text().splitlines()
    if not lines or lines[0] != HEADER:
        raise ValueError(f"{stem}.manifest is not a tensor manifest")
    payload = stem.with_suffix(".bin").read_bytes()
    out = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        name, shape, offset, nbytes = line.split()
        offset, nbytes = int(offset), int(nbytes)
        shape = _parse_shape(shape)
        if offset + nbytes > len(payload) or nbytes != 8 * int(np.prod(shape, dtype=int)):
            raise ValueError(f"manifest entry {name} does not fit the payload")
        out[name] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8,
                                  offset=offset).reshape(shape).astype(np.float64)
    return out
