"""Hit, photon and pair records plus the PHL1 binary / CSV codecs.

Bulk data lives in numpy structured arrays (``HIT_DTYPE``, ``EVENT_DTYPE``,
``PAIR_DTYPE``); the frozen dataclasses are the scalar views used at API
edges and in tests.
"""
from __future__ import annotations

import enum
import io
import struct
import warnings
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

import numpy as np

SENSOR_SIZE = 256
HALF_BOUNDARY = 128.0

MAGIC = b"PHL1"
VERSION = 1
HEADER = struct.Struct("<4sIQQ")
HEADER_SIZE = HEADER.size  # 24

# packed little-endian, 14 bytes per record
HIT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("toa_ps", "<u8"), ("tot", "<u2")])
RECORD_SIZE = HIT_DTYPE.itemsize

EVENT_DTYPE = np.dtype([
    ("cx", "f8"), ("cy", "f8"), ("t_ps", "i8"),
    ("n_pixels", "i4"), ("sum_tot", "i8"), ("max_tot", "i4"),
    ("half", "i1"), ("seed_hit", "i8"),
])

PAIR_DTYPE = np.dtype([
    ("cx1", "f8"), ("cy1", "f8"), ("t1_ps", "i8"),
    ("cx2", "f8"), ("cy2", "f8"), ("t2_ps", "i8"),
    ("dt_ps", "i8"), ("ia", "i8"), ("ib", "i8"),
])

CSV_HEADER = "x,y,toa_ps,tot"


class Basis(str, enum.Enum):
    NF = "NF"
    FF = "FF"


class Half(enum.IntEnum):
    LEFT = 0
    RIGHT = 1


def half_of(cx) -> Half | np.ndarray:
    """Left if the centroid x is below 128.0, else Right."""
    if np.ndim(cx) == 0:
        return Half.LEFT if cx < HALF_BOUNDARY else Half.RIGHT
    return (np.asarray(cx) >= HALF_BOUNDARY).astype(np.int8)


class EventStreamError(ValueError):
    """Base class for malformed hit streams."""


class OrderingError(EventStreamError):
    """Input was not sorted by time."""


class FormatError(EventStreamError):
    """Bad magic bytes or unreadable header."""


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    def __init__(self, offset: int, message: str | None = None):
        self.offset = offset
        super().__init__(message or f"truncated record at byte offset {offset}")


@dataclass(frozen=True)
class PixelHit:
    x: int
    y: int
    toa_ps: int
    tot: int

    def __post_init__(self):
        if not (0 <= self.x < SENSOR_SIZE and 0 <= self.y < SENSOR_SIZE):
            raise ValueError(f"pixel ({self.x}, {self.y}) outside 256x256 sensor")
        if self.toa_ps < 0:
            raise ValueError("toa_ps must be >= 0")
        if self.tot < 1:
            raise ValueError("tot must be >= 1")


@dataclass(frozen=True)
class PhotonEvent:
    cx: float
    cy: float
    t_ps: int
    n_pixels: int
    sum_tot: int
    max_tot: int

    @property
    def half(self) -> Half:
        return half_of(self.cx)

    @classmethod
    def from_record(cls, rec) -> "PhotonEvent":
        return cls(float(rec["cx"]), float(rec["cy"]), int(rec["t_ps"]),
                   int(rec["n_pixels"]), int(rec["sum_tot"]), int(rec["max_tot"]))


@dataclass(frozen=True)
class CoincidencePair:
    a: PhotonEvent
    b: PhotonEvent

    @property
    def dt_ps(self) -> int:
        return abs(self.a.t_ps - self.b.t_ps)


@dataclass(frozen=True)
class OpticsConfig:
    """Camera/optics constants used for pixel <-> physical conversion."""

    basis: Basis = Basis.NF
    pixel_pitch_m: float = 55e-6
    magnification_nf: float = 10.0
    f_eff_m: float = 0.075
    wavelength_m: float = 810e-9

    def __post_init__(self):
        object.__setattr__(self, "basis", Basis(self.basis))
        for name in ("pixel_pitch_m", "magnification_nf", "f_eff_m", "wavelength_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def scale(self) -> float:
        """Physical size of one pixel: metres (NF) or inverse metres (FF)."""
        if self.basis is Basis.NF:
            return self.pixel_pitch_m / self.magnification_nf
        return 2 * np.pi * self.pixel_pitch_m / (self.wavelength_m * self.f_eff_m)

    def with_basis(self, basis) -> "OpticsConfig":
        return OpticsConfig(Basis(basis), self.pixel_pitch_m, self.magnification_nf,
                            self.f_eff_m, self.wavelength_m)

    def to_dict(self) -> dict:
        return {"basis": self.basis.value, "pixel_pitch_m": self.pixel_pitch_m,
                "magnification_nf": self.magnification_nf, "f_eff_m": self.f_eff_m,
                "wavelength_m": self.wavelength_m}


# -- conversions ------------------------------------------------------------

def as_hit_array(hits) -> np.ndarray:
    """Coerce a sequence of PixelHit (or a structured array) to HIT_DTYPE."""
    if isinstance(hits, np.ndarray):
        if hits.dtype == HIT_DTYPE:
            return hits
        out = np.empty(len(hits), HIT_DTYPE)
        for name in HIT_DTYPE.names:
            out[name] = hits[name]
        return out
    hits = list(hits)
    out = np.empty(len(hits), HIT_DTYPE)
    if hits:
        out["x"] = [h.x for h in hits]
        out["y"] = [h.y for h in hits]
        out["toa_ps"] = [h.toa_ps for h in hits]
        out["tot"] = [h.tot for h in hits]
    return out


def hits_to_list(arr: np.ndarray) -> list[PixelHit]:
    return [PixelHit(int(r["x"]), int(r["y"]), int(r["toa_ps"]), int(r["tot"])) for r in arr]


def check_sorted(t: np.ndarray, what: str = "hits") -> None:
    t = np.asarray(t)
    if t.size > 1:
        bad = np.flatnonzero(np.diff(t.astype(np.int64)) < 0)
        if bad.size:
            i = int(bad[0])
            raise OrderingError(f"{what} not sorted by time at index {i + 1} "
                                f"({int(t[i + 1])} < {int(t[i])})")


# -- PHL1 ---------------------------------------------------------------------

def encode_hits(hits, acquisition_duration_ps: int = 0) -> bytes:
    """Serialize time-sorted hits to PHL1 bytes."""
    buf = io.BytesIO()
    write_hits(buf, hits, acquisition_duration_ps)
    return buf.getvalue()


def write_hits(fh: BinaryIO, hits, acquisition_duration_ps: int = 0) -> int:
    arr = as_hit_array(hits)
    check_sorted(arr["toa_ps"])
    fh.write(HEADER.pack(MAGIC, VERSION, len(arr), int(acquisition_duration_ps)))
    fh.write(arr.tobytes())
    return len(arr)


def read_header(fh: BinaryIO) -> tuple[int, int]:
    """Return (record count, acquisition duration in ps)."""
    head = fh.read(HEADER_SIZE)
    if len(head) < 4 or head[:4] != MAGIC:
        raise FormatError(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
    if len(head) < HEADER_SIZE:
        raise TruncatedError(len(head), f"truncated header at byte offset {len(head)}")
    _, version, count, duration = HEADER.unpack(head)
    if version != VERSION:
        raise VersionError(f"unsupported PHL1 version {version}")
    return count, duration


def iter_hits(fh: BinaryIO, chunk_records: int = 1 << 20) -> Iterator[np.ndarray]:
    """Stream a PHL1 file as successive HIT_DTYPE arrays."""
    count, _ = read_header(fh)
    done = 0
    while done < count:
        want = min(chunk_records, count - done)
        data = fh.read(want * RECORD_SIZE)
        if len(data) < want * RECORD_SIZE:
            offset = HEADER_SIZE + done * RECORD_SIZE + (len(data) // RECORD_SIZE) * RECORD_SIZE
            raise TruncatedError(offset)
        yield np.frombuffer(data, dtype=HIT_DTYPE).copy()
        done += want


def decode_hits(data: bytes) -> np.ndarray:
    chunks = list(iter_hits(io.BytesIO(data)))
    return np.concatenate(chunks) if chunks else np.empty(0, HIT_DTYPE)


def read_phl1(path) -> tuple[np.ndarray, int]:
    """Read a whole PHL1 file; returns (hits, acquisition_duration_ps)."""
    with open(path, "rb") as fh:
        count, duration = read_header(fh)
        fh.seek(0)
        chunks = list(iter_hits(fh))
    hits = np.concatenate(chunks) if chunks else np.empty(0, HIT_DTYPE)
    return hits, duration


def write_phl1(path, hits, acquisition_duration_ps: int = 0) -> int:
    with open(path, "wb") as fh:
        return write_hits(fh, hits, acquisition_duration_ps)


class PHL1Writer:
    """Incremental PHL1 writer; the header count is patched on close."""

    def __init__(self, path, acquisition_duration_ps: int = 0):
        self._fh = open(path, "wb")
        self.count = 0
        self.acquisition_duration_ps = int(acquisition_duration_ps)
        self._last_toa = -1
        self._fh.write(HEADER.pack(MAGIC, VERSION, 0, self.acquisition_duration_ps))

    def write(self, hits) -> None:
        arr = as_hit_array(hits)
        if not len(arr):
            return
        check_sorted(arr["toa_ps"])
        if int(arr["toa_ps"][0]) < self._last_toa:
            raise OrderingError("chunk starts before the end of the previous chunk")
        self._fh.write(arr.tobytes())
        self.count += len(arr)
        self._last_toa = int(arr["toa_ps"][-1])

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(HEADER.pack(MAGIC, VERSION, self.count, self.acquisition_duration_ps))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# -- CSV ----------------------------------------------------------------------

def hits_to_csv(hits) -> str:
    arr = as_hit_array(hits)
    lines = [CSV_HEADER]
    lines.extend(f"{r['x']},{r['y']},{r['toa_ps']},{r['tot']}" for r in arr)
    return "\n".join(lines) + "\n"


def hits_from_csv(text: str | Iterable[str]) -> np.ndarray:
    lines = text.splitlines() if isinstance(text, str) else list(text)
    if not lines or lines[0].strip() != CSV_HEADER:
        raise FormatError(f"expected CSV header {CSV_HEADER!r}")
    rows = [tuple(int(v) for v in ln.split(",")) for ln in lines[1:] if ln.strip()]
    out = np.empty(len(rows), HIT_DTYPE)
    for i, name in enumerate(HIT_DTYPE.names):
        out[name] = [r[i] for r in rows]
    return out


def empty_events() -> np.ndarray:
    return np.empty(0, EVENT_DTYPE)


def empty_pairs() -> np.ndarray:
    return np.empty(0, PAIR_DTYPE)


PAIRS_CSV_HEADER = "cx1,cy1,t1_ps,cx2,cy2,t2_ps,dt_ps"


def pairs_to_csv(path, pairs: np.ndarray, header: bool = True) -> None:
    cols = [pairs[n] for n in PAIRS_CSV_HEADER.split(",")]
    fmt = ["%.6f", "%.6f", "%d", "%.6f", "%.6f", "%d", "%d"]
    np.savetxt(path, np.column_stack(cols) if len(pairs) else np.empty((0, 7)),
               fmt=fmt, delimiter=",", header=PAIRS_CSV_HEADER if header else "", comments="")


def pairs_from_csv(path) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # header-only file
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.size == 0:
        return empty_pairs()
    out = np.zeros(len(raw), PAIR_DTYPE)
    for i, name in enumerate(PAIRS_CSV_HEADER.split(",")):
        out[name] = raw[:, i]
    out["ia"] = out["ib"] = -1
    return out

