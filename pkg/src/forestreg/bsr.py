"""BSR (band-stack raster) file format and the in-memory raster type.

File layout, bit-exact:

    magic   4 bytes ASCII ``BSRF``
    hlen    4 bytes little-endian unsigned header length
    header  UTF-8 JSON: {"width": int, "height": int, "bands": int,
            "dtype": "f32", "nodata": float, "pixel_size": float}
    data    bands * height * width float32 little-endian,
            band-major, row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BsrFormatError, BsrTruncationError

MAGIC = b"BSRF"


@dataclass(frozen=True)
class RasterStack:
    """Multi-band float32 raster with an explicit nodata sentinel.

    ``values`` has shape (bands, height, width). All bands share the grid;
    values are finite everywhere except cells equal to ``nodata``.
    """

    values: np.ndarray
    nodata: float = -9999.0
    pixel_size: float = 20.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise ValueError(f"values must be (bands, height, width), got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def nodata_mask(self) -> np.ndarray:
        """Boolean (bands, height, width) mask of nodata cells."""
        return self.values == np.float32(self.nodata)


def write_raster(stack: RasterStack, path: str | Path) -> None:
    path = Path(path)
    header = {
        "width": stack.width,
        "height": stack.height,
        "bands": stack.bands,
        "dtype": "f32",
        "nodata": float(stack.nodata),
        "pixel_size": float(stack.pixel_size),
    }
    header_bytes = json.dumps(header).encode("utf-8")
    payload = np.ascontiguousarray(stack.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def read_raster(path: str | Path) -> RasterStack:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise BsrFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise BsrTruncationError(f"{path}: file shorter than fixed header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise BsrTruncationError(f"{path}: declared header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BsrFormatError(f"{path}: unparseable JSON header: {exc}") from exc
    for key in ("width", "height", "bands", "dtype", "nodata", "pixel_size"):
        if key not in header:
            raise BsrFormatError(f"{path}: header missing field {key!r}")
    if header["dtype"] != "f32":
        raise BsrFormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    bands, height, width = int(header["bands"]), int(header["height"]), int(header["width"])
    if bands < 1 or height < 1 or width < 1:
        raise BsrFormatError(f"{path}: non-positive dimensions in header")
    n_expected = bands * height * width * 4
    payload = raw[8 + hlen :]
    if len(payload) < n_expected:
        raise BsrTruncationError(
            f"{path}: payload holds {len(payload)} bytes, header declares {n_expected}"
        )
    values = np.frombuffer(payload[:n_expected], dtype="<f4").reshape(bands, height, width)
    return RasterStack(
        values=values.copy(),
        nodata=float(header["nodata"]),
        pixel_size=float(header["pixel_size"]),
    )
