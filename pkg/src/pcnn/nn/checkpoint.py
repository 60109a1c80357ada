"""PCNNCKPT1 checkpoints.

Layout: an ASCII header ``PCNNCKPT1 <arch> <record-count>`` and a newline,
then records of ``u32 name length, name, u32 rank, u32 dims..., f32 data``
(all little endian). Network parameters use their plain names; other state
lives under reserved prefixes:

    bn/<name>        batch-norm running statistics
    adam.m/<name>    Adam first moments
    adam.v/<name>    Adam second moments
    adam/step        Adam step count
    meta/hyper       architecture hyperparameters, JSON bytes stored one per f32
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import Network
from .optim import Adam

MAGIC = "PCNNCKPT1"


def _pack(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_checkpoint(path, net: Network, optimizer: Adam | None = None) -> None:
    records: list[tuple[str, np.ndarray]] = list(net.named_params().items())
    records += [(f"bn/{n}", v) for n, v in net.named_state().items()]
    meta = json.dumps({"hyper": net.hyper_dict(), "precision": net.precision}, sort_keys=True).encode()
    records.append(("meta/hyper", np.frombuffer(meta, dtype=np.uint8).astype(np.float32)))
    if optimizer is not None:
        records += [(f"adam.m/{n}", v) for n, v in optimizer.m.items()]
        records += [(f"adam.v/{n}", v) for n, v in optimizer.v.items()]
        records.append(("adam/step", np.array(optimizer.t, dtype=np.float32)))
    body = b"".join(_pack(n, v) for n, v in records)
    header = f"{MAGIC} {net.arch} {len(records)}\n".encode("ascii")
    try:
        Path(path).write_bytes(header + body)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def read_records(path) -> tuple[str, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    fields = raw[:nl].decode("ascii", errors="replace").split()
    if nl < 0 or len(fields) != 3 or fields[0] != MAGIC:
        raise ValueError(f"{path}: not a {MAGIC} checkpoint")
    arch, count = fields[1], int(fields[2])
    pos = nl + 1
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", raw, pos) if rank else ()
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
        out[name] = arr.astype(np.float32)
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return arch, out


def load_checkpoint(path, optimizer: Adam | None = None) -> Network:
    arch, recs = read_records(path)
    meta = json.loads(recs.pop("meta/hyper").astype(np.uint8).tobytes().decode())
    net = Network(arch, meta["hyper"], precision=meta["precision"])
    state = {}
    params = net.named_params()
    for name, arr in recs.items():
        if name.startswith("bn/"):
            state[name[3:]] = arr
        elif name.startswith("adam"):
            if optimizer is None:
                continue
            if name == "adam/step":
                optimizer.t = int(arr)
            elif name.startswith("adam.m/"):
                optimizer.m[name[7:]] = arr.astype(np.float64)
            else:
                optimizer.v[name[7:]] = arr.astype(np.float64)
        elif name in params:
            net.set_param(name, arr)
        else:
            raise ValueError(f"{path}: unexpected record {name!r}")
    net.load_named_state(state)
    return net
