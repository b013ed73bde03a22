"""Parameter checkpoints: a text manifest followed by raw float64 data.

Layout: a magic line, one "name<TAB>dims<TAB>byte-offset" line per tensor
(dims comma-separated, offset into the data section), an "end" line, then
every array's little-endian float64 bytes back to back.  Saving the same
parameters twice produces byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .tensor import Tensor

MAGIC = "text2table-checkpoint v1"
_END = "end"


def save_params(params: Mapping[str, Union[Tensor, np.ndarray]], path: str | Path) -> None:
    lines = [MAGIC]
    blobs: list[bytes] = []
    offset = 0
    for name, p in params.items():
        data = np.ascontiguousarray(p.data if isinstance(p, Tensor) else p, dtype="<f8")
        if "\t" in name or "\n" in name:
            raise ValueError(f"parameter name {name!r} contains manifest delimiters")
        dims = ",".join(str(n) for n in data.shape)
        lines.append(f"{name}\t{dims}\t{offset}")
        blob = data.tobytes()
        blobs.append(blob)
        offset += len(blob)
    manifest = "\n".join(lines + [_END, ""]).encode("utf-8")
    Path(path).write_bytes(manifest + b"".join(blobs))


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    marker = f"\n{_END}\n".encode("utf-8")
    head, sep, data = raw.partition(marker)
    if not sep:
        raise ValueError(f"{path}: not a parameter checkpoint (missing end marker)")
    lines = head.decode("utf-8").split("\n")
    if lines[0] != MAGIC:
        raise ValueError(f"{path}: bad magic line {lines[0]!r}")
    out: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        name, dims_text, offset_text = line.split("\t")
        shape = tuple(int(n) for n in dims_text.split(",")) if dims_text else ()
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        offset = int(offset_text)
        end = offset + 8 * count
        if end > len(data):
            raise ValueError(f"{path}: tensor {name!r} runs past end of file")
        out[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
    return out
