"""Parameter checkpoint container.

Layout (``PDNF1``)::

    PDNF1\\n
    meta <n>\\n
    <key>=<value>\\n            (n lines)
    params <m>\\n
    <name> f8 <ndim> <d0> ... \\n  followed by prod(d) little-endian float64
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT_VERSION = "PDNF1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> None:
    meta = dict(meta or {})
    with open(path, "wb") as fh:
        fh.write(f"{FORMAT_VERSION}\n".encode())
        fh.write(f"meta {len(meta)}\n".encode())
        for k, v in meta.items():
            if "\n" in f"{k}{v}" or "=" in k:
                raise CheckpointError(f"bad meta entry {k!r}")
            fh.write(f"{k}={v}\n".encode())
        fh.write(f"params {len(params)}\n".encode())
        for name, arr in params.items():
            arr = np.asarray(arr, dtype="<f8")
            if " " in name:
                raise CheckpointError(f"parameter name may not contain spaces: {name!r}")
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"{name} f8 {arr.ndim} {dims}".rstrip().encode() + b"\n")
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    raw = Path(path).read_bytes()
    pos = 0

    def line() -> str:
        nonlocal pos
        end = raw.index(b"\n", pos)
        text = raw[pos:end].decode()
        pos = end + 1
        return text

    try:
        if line() != FORMAT_VERSION:
            raise CheckpointError(f"{path}: not a {FORMAT_VERSION} checkpoint")
        tag, n = line().split()
        if tag != "meta":
            raise CheckpointError(f"{path}: missing meta section")
        meta = dict(line().split("=", 1) for _ in range(int(n)))
        tag, n = line().split()
        if tag != "params":
            raise CheckpointError(f"{path}: missing params section")
        params: dict[str, np.ndarray] = {}
        for _ in range(int(n)):
            name, dtype, ndim, *dims = line().split()
            if dtype != "f8" or len(dims) != int(ndim):
                raise CheckpointError(f"{path}: bad header for {name}")
            shape = tuple(int(d) for d in dims)
            count = int(np.prod(shape)) if shape else 1
            nbytes = 8 * count
            if pos + nbytes > len(raw):
                raise CheckpointError(f"{path}: truncated data for {name}")
            params[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += nbytes
    except (ValueError, IndexError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    return params, meta
