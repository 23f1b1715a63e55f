"""Readers and writers for GTSR tensors, Netpbm images and parameter directories.

GTSR layout: ``b"GTSR"``, u32 ndim, ndim x u32 dims, then float32 payload,
all little-endian. Values are down-converted to float32 on write.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .exceptions import DataError

GTSR_MAGIC = b"GTSR"


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def encode_gtsr(array) -> bytes:
    a = np.asarray(array)
    if a.ndim == 0:
        a = a.reshape(1)
    header = GTSR_MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_gtsr(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != GTSR_MAGIC:
        raise DataError("not a GTSR file (bad magic)")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    head = 8 + 4 * ndim
    if len(buf) < head:
        raise DataError("truncated GTSR header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    count = int(np.prod(dims)) if ndim else 1
    if len(buf) - head != 4 * count:
        raise DataError(f"GTSR payload is {len(buf) - head} bytes, expected {4 * count} for dims {dims}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=head)
    return data.astype(np.float64).reshape(dims)


def write_gtsr(path, array) -> None:
    _atomic_write(path, encode_gtsr(array))


def read_gtsr(path) -> np.ndarray:
    return decode_gtsr(Path(path).read_bytes())


# --- Netpbm -------------------------------------------------------------------


def _read_header(buf: bytes, magic: bytes):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError("truncated Netpbm header")
        tokens.append(buf[start:pos])
    if tokens[0] != magic:
        raise DataError(f"expected Netpbm magic {magic.decode()}, got {tokens[0][:8]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataError("non-integer Netpbm header field") from None
    if maxval != 255:
        raise DataError(f"only maxval 255 is supported, got {maxval}")
    # exactly one whitespace byte separates header from payload
    return width, height, pos + 1


def _decode_netpbm(buf: bytes, magic: bytes, channels: int) -> np.ndarray:
    width, height, start = _read_header(buf, magic)
    expected = width * height * channels
    if len(buf) - start != expected:
        raise DataError(
            f"Netpbm payload is {len(buf) - start} bytes, header says {width}x{height}x{channels}"
        )
    data = np.frombuffer(buf, dtype=np.uint8, offset=start)
    return data.reshape((height, width, channels) if channels > 1 else (height, width)).copy()


def encode_pgm(labels) -> bytes:
    a = np.asarray(labels)
    if a.ndim != 2:
        raise DataError(f"PGM needs a 2-D array, got shape {a.shape}")
    if a.size and (a.min() < 0 or a.max() > 255):
        raise DataError("PGM values must lie in [0, 255]")
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode() + a.astype(np.uint8).tobytes()


def encode_ppm(rgb) -> bytes:
    a = np.asarray(rgb)
    if a.ndim != 3 or a.shape[2] != 3:
        raise DataError(f"PPM needs an HxWx3 array, got shape {a.shape}")
    if a.size and (a.min() < 0 or a.max() > 255):
        raise DataError("PPM values must lie in [0, 255]")
    h, w, _ = a.shape
    return f"P6\n{w} {h}\n255\n".encode() + a.astype(np.uint8).tobytes()


def read_pgm(path) -> np.ndarray:
    return _decode_netpbm(Path(path).read_bytes(), b"P5", 1)


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM as an HxWx3 uint8 array."""
    return _decode_netpbm(Path(path).read_bytes(), b"P6", 3)


def write_pgm(path, labels) -> None:
    _atomic_write(path, encode_pgm(labels))


def write_ppm(path, rgb) -> None:
    _atomic_write(path, encode_ppm(rgb))


def image_to_chw(rgb: np.ndarray) -> np.ndarray:
    """uint8 HxWx3 -> float64 3xHxW in [0, 1]."""
    return np.ascontiguousarray(rgb.transpose(2, 0, 1), dtype=np.float64) / 255.0


def chw_to_image(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


# --- parameter directories -------------------------------------------------------------


def save_tensor_dir(directory, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write each tensor as ``<name>.gtsr`` plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, arr in tensors.items():
        fname = f"{name}.gtsr"
        write_gtsr(directory / fname, arr)
        index[name] = {"file": fname, "dims": list(np.shape(arr))}
    manifest = dict(meta)
    manifest["tensors"] = index
    _atomic_write(directory / "manifest.json", json.dumps(manifest, indent=2).encode())


def load_tensor_dir(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise DataError(f"no manifest.json in {directory}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest.json in {directory}: {exc}") from None
    tensors = {}
    for name, entry in manifest.get("tensors", {}).items():
        arr = read_gtsr(directory / entry["file"])
        if list(arr.shape) != list(entry["dims"]):
            raise DataError(f"tensor {name}: file dims {arr.shape} != manifest {entry['dims']}")
        tensors[name] = arr
    return tensors, manifest
