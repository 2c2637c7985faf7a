"""Simulated IMX219-style sensor and the MIPI RAW10 bit-packing codec.

RAW10 packs four 10-bit samples into five bytes: bytes 0..3 hold the high
8 bits of pixels 0..3, byte 4 holds the low 2 bits of pixel ``i`` at bit
positions ``2i..2i+1``.
"""

from __future__ import annotations

import dataclasses
import enum
from pathlib import Path

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numpy fallback is exercised in tests
    numba = None

from .errors import DimensionError, MalformedError

MAX_SAMPLE = 1023


class BayerOrder(str, enum.Enum):
    RGGB = "RGGB"
    BGGR = "BGGR"
    GRBG = "GRBG"
    GBRG = "GBRG"


@dataclasses.dataclass(frozen=True, eq=False)
class RawFrame:
    """One Bayer RAW10 frame. ``samples`` is a (height, width) uint16 array."""

    width: int
    height: int
    samples: np.ndarray
    frame_counter: int
    bayer_order: BayerOrder = BayerOrder.RGGB

    def __post_init__(self):
        if self.samples.shape != (self.height, self.width):
            raise DimensionError(
                f"samples shape {self.samples.shape} != ({self.height}, {self.width})"
            )
        if self.samples.size and int(self.samples.max()) > MAX_SAMPLE:
            raise ValueError("RAW10 sample exceeds 1023")
        if not 0 <= self.frame_counter < 2**64:
            raise ValueError("frame_counter must fit in 64 bits")

    def __eq__(self, other):
        if not isinstance(other, RawFrame):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.frame_counter == other.frame_counter
            and self.bayer_order == other.bayer_order
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None

    def packed(self) -> bytes:
        return pack_raw10(self.samples.reshape(-1))

    def with_counter(self, counter: int) -> "RawFrame":
        return dataclasses.replace(self, frame_counter=counter)


def check_packing(width: int, height: int) -> None:
    if width <= 0 or height <= 0:
        raise DimensionError(f"dimensions must be positive, got {width}x{height}")
    if width % 4:
        raise DimensionError(f"width {width} is not a multiple of 4 (RAW10 packing)")


def check_dimensions(width: int, height: int) -> None:
    """Packing constraints plus Bayer-quad alignment."""
    check_packing(width, height)
    if width < 2 or height < 2 or width % 2 or height % 2:
        raise DimensionError(f"{width}x{height} is not Bayer-quad aligned")


def generate_frame(seed, width, height, counter, bayer_order=BayerOrder.RGGB) -> RawFrame:
    """Deterministic pseudorandom Bayer field for ``(seed, counter)``."""
    check_dimensions(width, height)
    rng = np.random.default_rng([seed & (2**64 - 1), counter & (2**64 - 1)])
    samples = rng.integers(0, MAX_SAMPLE + 1, size=(height, width), dtype=np.uint16)
    return RawFrame(width, height, samples, counter, BayerOrder(bayer_order))


def _pack_numpy(q: np.ndarray) -> bytes:
    q = q.reshape(-1, 4)
    out = np.empty((q.shape[0], 5), dtype=np.uint8)
    out[:, :4] = q >> 2
    lo = (q & 3).astype(np.uint8)
    out[:, 4] = lo[:, 0] | (lo[:, 1] << 2) | (lo[:, 2] << 4) | (lo[:, 3] << 6)
    return out.tobytes()


def _unpack_numpy(a: np.ndarray) -> np.ndarray:
    a = a.reshape(-1, 5)
    q = a[:, :4].astype(np.uint16) << 2
    lo = a[:, 4]
    for i in range(4):
        q[:, i] |= (lo >> (2 * i)) & 3
    return q.reshape(-1)


if numba is not None:
    @numba.njit(cache=True, nogil=True)
    def _pack_kernel(q, out):
        for i in range(q.size // 4):
            a, b, c, d = q[4 * i], q[4 * i + 1], q[4 * i + 2], q[4 * i + 3]
            out[5 * i] = a >> 2
            out[5 * i + 1] = b >> 2
            out[5 * i + 2] = c >> 2
            out[5 * i + 3] = d >> 2
            out[5 * i + 4] = (a & 3) | ((b & 3) << 2) | ((c & 3) << 4) | ((d & 3) << 6)

    @numba.njit(cache=True, nogil=True)
    def _unpack_kernel(a, q):
        for i in range(a.size // 5):
            lo = a[5 * i + 4]
            q[4 * i] = (np.uint16(a[5 * i]) << 2) | (lo & 3)
            q[4 * i + 1] = (np.uint16(a[5 * i + 1]) << 2) | ((lo >> 2) & 3)
            q[4 * i + 2] = (np.uint16(a[5 * i + 2]) << 2) | ((lo >> 4) & 3)
            q[4 * i + 3] = (np.uint16(a[5 * i + 3]) << 2) | ((lo >> 6) & 3)


def pack_raw10(samples) -> bytes:
    q = np.ascontiguousarray(samples, dtype=np.uint16).reshape(-1)
    if q.size % 4:
        raise DimensionError(f"RAW10 packing needs a multiple of 4 samples, got {q.size}")
    if q.size and int(q.max()) > MAX_SAMPLE:
        raise ValueError("RAW10 sample exceeds 1023")
    if numba is None:
        return _pack_numpy(q)
    out = np.empty(q.size // 4 * 5, dtype=np.uint8)
    _pack_kernel(q, out)
    return out.tobytes()


def unpack_raw10(data) -> np.ndarray:
    """Inverse of :func:`pack_raw10`; returns a flat uint16 array."""
    if len(data) % 5:
        raise MalformedError(f"RAW10 byte length {len(data)} is not a multiple of 5")
    a = np.frombuffer(data, dtype=np.uint8)
    if numba is None:
        return _unpack_numpy(a)
    q = np.empty(a.size // 5 * 4, dtype=np.uint16)
    _unpack_kernel(a, q)
    return q


def frame_from_packed(data, width, height, counter, bayer_order=BayerOrder.RGGB) -> RawFrame:
    check_packing(width, height)
    if len(data) != width * height * 10 // 8:
        raise MalformedError(
            f"{len(data)} packed bytes do not match a {width}x{height} RAW10 frame"
        )
    samples = unpack_raw10(data).reshape(height, width)
    return RawFrame(width, height, samples, counter, BayerOrder(bayer_order))


# Replay of real captures: <name>.raw holds packed RAW10, <name>.txt the header.

def save_raw(frame: RawFrame, path) -> Path:
    path = Path(path)
    path.write_bytes(frame.packed())
    path.with_suffix(".txt").write_text(
        f"width={frame.width}\nheight={frame.height}\n"
        f"bayer_order={frame.bayer_order.value}\ncounter={frame.frame_counter}\n"
    )
    return path


def load_raw(path) -> RawFrame:
    path = Path(path)
    header = {}
    for line in path.with_suffix(".txt").read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        header[key.strip()] = value.strip()
    try:
        width = int(header["width"])
        height = int(header["height"])
        counter = int(header.get("counter", "0"))
        order = BayerOrder(header.get("bayer_order", "RGGB"))
    except (KeyError, ValueError) as exc:
        raise MalformedError(f"bad RAW header for {path}: {exc}") from exc
    return frame_from_packed(path.read_bytes(), width, height, counter, order)
