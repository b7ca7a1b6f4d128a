"""On-disk formats: the GIFS dataset container, checkpoints, tables and PGM dumps.

GIFS layout (little-endian)::

    0   4s   magic b"GIFS"
    4   u16  format version (1)
    6   u16  flags (bit 0: normalization statistics present)
    8   u32  nx
    12  u32  ny
    16  u32  channel count (4)
    20  u64  sample count
    28  4xf64 per-channel mean
    60  4xf64 per-channel std
    92  payload: float32, sample-major, channel-major within sample,
        row-major within channel

A JSON manifest sits next to the file as ``<name>.manifest.json``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, ShapeError
from .grid import Normalization

GIFS_MAGIC = b"GIFS"
GIFS_VERSION = 1
_GIFS_HEADER = struct.Struct("<4sHHIIIQ4d4d")
FLAG_NORMALIZATION = 1

CKPT_MAGIC = b"GICK"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHHQ")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
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


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


@dataclass
class Dataset:
    nx: int
    ny: int
    samples: np.ndarray  # (n, 4, ny, nx) float32, physical units
    normalization: Normalization | None
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.samples.shape[0]


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def encode_dataset(samples: np.ndarray, normalization: Normalization | None) -> bytes:
    samples = np.asarray(samples)
    if samples.ndim != 4 or samples.shape[1] != 4:
        raise ShapeError(f"dataset samples must be (n, 4, ny, nx), got {samples.shape}")
    n, c, ny, nx = samples.shape
    if normalization is None:
        flags, mean, std = 0, (0.0,) * 4, (0.0,) * 4
    else:
        flags, mean, std = FLAG_NORMALIZATION, normalization.mean, normalization.std
    header = _GIFS_HEADER.pack(GIFS_MAGIC, GIFS_VERSION, flags, nx, ny, c, n, *mean, *std)
    payload = np.ascontiguousarray(samples, dtype="<f4").tobytes()
    return header + payload


def decode_dataset(blob: bytes) -> Dataset:
    if len(blob) < _GIFS_HEADER.size:
        raise ShapeError("dataset file shorter than its header")
    magic, version, flags, nx, ny, c, n, *stats = _GIFS_HEADER.unpack_from(blob)
    if magic != GIFS_MAGIC:
        raise ShapeError(f"bad dataset magic {magic!r}")
    if version != GIFS_VERSION:
        raise ShapeError(f"unsupported dataset version {version}")
    if c != 4:
        raise ShapeError(f"dataset declares {c} channels, expected 4")
    expected = _GIFS_HEADER.size + n * c * ny * nx * 4
    if len(blob) != expected:
        raise ShapeError(f"dataset payload is {len(blob)} bytes, header implies {expected}")
    samples = np.frombuffer(blob, dtype="<f4", offset=_GIFS_HEADER.size).reshape(n, c, ny, nx).astype(np.float32)
    norm = Normalization(tuple(stats[:4]), tuple(stats[4:])) if flags & FLAG_NORMALIZATION else None
    return Dataset(nx, ny, samples, norm)


def write_dataset(path, samples: np.ndarray, normalization: Normalization | None, manifest: dict | None = None) -> None:
    atomic_write_bytes(path, encode_dataset(samples, normalization))
    if manifest is not None:
        atomic_write_text(manifest_path(path), canonical_json(manifest))


def read_dataset(path) -> Dataset:
    ds = decode_dataset(Path(path).read_bytes())
    mp = manifest_path(path)
    if mp.exists():
        ds.manifest = json.loads(mp.read_text())
    return ds


# -- checkpoints ------------------------------------------------------------


def _flatten_optimizer(prefix: str, opt: torch.optim.Optimizer) -> tuple[dict, dict[str, torch.Tensor]]:
    sd = opt.state_dict()
    tensors = {}
    for pid, state in sorted(sd["state"].items()):
        for key, value in sorted(state.items()):
            tensors[f"{prefix}.{pid}.{key}"] = value if isinstance(value, torch.Tensor) else torch.tensor(value)
    return {"param_groups": sd["param_groups"]}, tensors


def _restore_optimizer(prefix: str, meta: dict, tensors: dict[str, torch.Tensor], opt: torch.optim.Optimizer) -> None:
    state: dict[int, dict] = {}
    for name, value in tensors.items():
        if not name.startswith(prefix + "."):
            continue
        _, pid, key = name.split(".", 2)
        state.setdefault(int(pid), {})[key] = value
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def encode_checkpoint(meta: dict, tensors: dict[str, torch.Tensor]) -> bytes:
    index = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy()
        # astype keeps 0-d arrays 0-d (ascontiguousarray would promote them to 1-d)
        arr = arr.astype(arr.dtype.newbyteorder("<"), order="C")
        raw = arr.tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, 0, len(header)) + header + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> tuple[dict, dict[str, torch.Tensor]]:
    magic, version, _, hlen = _CKPT_HEADER.unpack_from(blob)
    if magic != CKPT_MAGIC:
        raise ShapeError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {version}")
    start = _CKPT_HEADER.size
    header = json.loads(blob[start : start + hlen].decode("utf-8"))
    base = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        lo = base + entry["offset"]
        arr = np.frombuffer(blob[lo : lo + entry["nbytes"]], dtype=np.dtype(entry["dtype"]))
        tensors[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    if base + sum(e["nbytes"] for e in header["tensors"]) != len(blob):
        raise ShapeError("checkpoint payload length does not match its index")
    return header["meta"], tensors


@dataclass
class Checkpoint:
    meta: dict  # network/train configs, normalization, iteration, grid
    generator_state: dict[str, torch.Tensor]
    discriminator_state: dict[str, torch.Tensor]
    optimizer_meta: dict = field(default_factory=dict)
    optimizer_tensors: dict[str, torch.Tensor] = field(default_factory=dict)


def checkpoint_from_training(meta: dict, g, d, opt_g=None, opt_d=None) -> Checkpoint:
    opt_meta, opt_tensors = {}, {}
    for prefix, opt in (("opt_g", opt_g), ("opt_d", opt_d)):
        if opt is not None:
            m, t = _flatten_optimizer(prefix, opt)
            opt_meta[prefix] = m
            opt_tensors.update(t)
    return Checkpoint(meta, dict(g.state_dict()), dict(d.state_dict()), opt_meta, opt_tensors)


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = {f"g.{k}": v for k, v in ckpt.generator_state.items()}
    tensors.update({f"d.{k}": v for k, v in ckpt.discriminator_state.items()})
    tensors.update(ckpt.optimizer_tensors)
    meta = dict(ckpt.meta)
    meta["optimizers"] = ckpt.optimizer_meta
    atomic_write_bytes(path, encode_checkpoint(meta, tensors))


def read_checkpoint(path) -> Checkpoint:
    meta, tensors = decode_checkpoint(Path(path).read_bytes())
    opt_meta = meta.pop("optimizers", {})
    g = {k[2:]: v for k, v in tensors.items() if k.startswith("g.")}
    d = {k[2:]: v for k, v in tensors.items() if k.startswith("d.")}
    o = {k: v for k, v in tensors.items() if k.startswith("opt_")}
    return Checkpoint(meta, g, d, opt_meta, o)


def restore_optimizers(ckpt: Checkpoint, opt_g, opt_d) -> None:
    if "opt_g" in ckpt.optimizer_meta:
        _restore_optimizer("opt_g", ckpt.optimizer_meta["opt_g"], ckpt.optimizer_tensors, opt_g)
    if "opt_d" in ckpt.optimizer_meta:
        _restore_optimizer("opt_d", ckpt.optimizer_meta["opt_d"], ckpt.optimizer_tensors, opt_d)


# -- reports ----------------------------------------------------------------


def write_table(path, rows: list[dict], columns: list[str] | None = None) -> None:
    """Tab-separated table with a header row."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, delimiter="\t", lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    atomic_write_text(path, buf.getvalue())


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_pgm(path, field2d: np.ndarray, vmin: float | None = None, vmax: float | None = None) -> None:
    """8-bit binary graymap; row 0 of the field (bottom) is written last so the image is upright."""
    f = np.asarray(field2d, dtype=float)
    lo = f.min() if vmin is None else vmin
    hi = f.max() if vmax is None else vmax
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.clip(np.round((f - lo) * scale), 0, 255).astype(np.uint8)[::-1]
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + img.tobytes())


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
