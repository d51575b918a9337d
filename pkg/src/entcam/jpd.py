"""Sparse 4D coincidence histogram and its 2D projections.

Bins are keyed by the packed pixel pair ``((px1*256 + py1)*256 + px2)*256 + py2``
with the Left-half pixel first. Only occupied bins are stored; the dense
objects produced here are the 2D projections.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .events import Basis, Half, OpticsConfig, SENSOR_SIZE, half_of

N = SENSOR_SIZE
SPAN = 2 * N - 1  # 511 cells for minus/sum grids


class JpdError(ValueError):
    pass


class EmptyConditionalError(JpdError):
    """Reference pixel has zero marginal counts."""


def pack(px1, py1, px2, py2) -> np.ndarray:
    px1, py1, px2, py2 = (np.asarray(a, dtype=np.uint64) for a in (px1, py1, px2, py2))
    return ((px1 * N + py1) * N + px2) * N + py2


def unpack(keys) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    k = np.asarray(keys, dtype=np.uint64)
    py2 = (k % N).astype(np.int64)
    k = k // N
    px2 = (k % N).astype(np.int64)
    k = k // N
    py1 = (k % N).astype(np.int64)
    px1 = (k // N).astype(np.int64)
    return px1, py1, px2, py2


def round_half_away(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(np.int64)


def _to_pixel(v) -> np.ndarray:
    return np.clip(round_half_away(v), 0, N - 1)


@dataclass
class Jpd:
    """Sparse joint histogram of Left/Right pixel pairs."""

    keys: np.ndarray
    counts: np.ndarray
    basis: Basis = Basis.NF
    optics: OpticsConfig = field(default_factory=OpticsConfig)
    acquisition_s: float = 0.0
    n_skipped: int = 0

    def __post_init__(self):
        self.basis = Basis(self.basis)
        self.keys = np.asarray(self.keys, dtype=np.uint64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.optics.basis is not self.basis:
            self.optics = self.optics.with_basis(self.basis)

    @classmethod
    def empty(cls, basis=Basis.NF, optics: OpticsConfig | None = None,
              acquisition_s: float = 0.0) -> "Jpd":
        optics = (optics or OpticsConfig()).with_basis(basis)
        return cls(np.empty(0, np.uint64), np.empty(0, np.int64), basis, optics, acquisition_s)

    @classmethod
    def from_bins(cls, px1, py1, px2, py2, counts=None, **meta) -> "Jpd":
        keys = pack(px1, py1, px2, py2)
        w = np.ones(keys.size, np.int64) if counts is None else np.asarray(counts, np.int64)
        return cls(*_reduce(keys, w), **meta)

    @property
    def total_pairs(self) -> int:
        return int(self.counts.sum())

    @property
    def n_bins(self) -> int:
        return int(self.keys.size)

    def coords(self):
        return unpack(self.keys)

    def with_counts(self, counts) -> "Jpd":
        """Same bins and metadata with new counts; zero bins are dropped."""
        counts = np.asarray(counts, np.int64)
        keep = counts > 0
        return replace(self, keys=self.keys[keep], counts=counts[keep])

    def swapped(self) -> "Jpd":
        """Exchange the roles of the two photons (Left <-> Right)."""
        px1, py1, px2, py2 = self.coords()
        keys, counts = _reduce(pack(px2, py2, px1, py1), self.counts)
        return replace(self, keys=keys, counts=counts)

    def meta(self) -> dict:
        return {"basis": self.basis.value, "acquisition_s": self.acquisition_s,
                "n_skipped": self.n_skipped, "total_pairs": self.total_pairs,
                "optics": self.optics.to_dict()}

    def save(self, path) -> None:
        """Write ``path`` as sparse CSV and ``path + '.json'`` as metadata."""
        path = Path(path)
        px1, py1, px2, py2 = self.coords()
        np.savetxt(path, np.column_stack([px1, py1, px2, py2, self.counts]).astype(np.int64)
                   if self.n_bins else np.empty((0, 5), np.int64),
                   fmt="%d", delimiter=",", header="px1,py1,px2,py2,count", comments="")
        Path(str(path) + ".json").write_text(json.dumps(self.meta(), indent=2))

    @classmethod
    def load(cls, path) -> "Jpd":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # header-only file
            raw = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        if raw.size == 0:
            raw = np.empty((0, 5), np.int64)
        optics = OpticsConfig(**meta["optics"])
        j = cls.from_bins(raw[:, 0], raw[:, 1], raw[:, 2], raw[:, 3], raw[:, 4],
                          basis=meta["basis"], optics=optics,
                          acquisition_s=meta["acquisition_s"])
        j.n_skipped = meta.get("n_skipped", 0)
        return j


def _reduce(keys, weights):
    if keys.size == 0:
        return np.empty(0, np.uint64), np.empty(0, np.int64)
    uniq, inv = np.unique(keys, return_inverse=True)
    return uniq, np.bincount(inv, weights=weights, minlength=uniq.size).astype(np.int64)


def accumulate(pairs: np.ndarray, basis=Basis.NF, optics: OpticsConfig | None = None,
               acquisition_s: float = 0.0, cross_halves_only: bool = True) -> Jpd:
    """Histogram coincidence pairs into a Jpd.

    Each pair lands in the bin of its rounded centroids, Left event first.
    Pairs with both events on one half are skipped (and counted) when
    ``cross_halves_only`` is set; otherwise they are stored as given.
    """
    pairs = np.asarray(pairs)
    j = Jpd.empty(basis, optics, acquisition_s)
    if pairs.size == 0:
        return j
    h1 = half_of(pairs["cx1"])
    h2 = half_of(pairs["cx2"])
    cross = h1 != h2
    if cross_halves_only:
        j.n_skipped = int((~cross).sum())
        pairs, h1 = pairs[cross], h1[cross]
    # put the Left event first
    flip = h1 == Half.RIGHT
    x1 = np.where(flip, pairs["cx2"], pairs["cx1"])
    y1 = np.where(flip, pairs["cy2"], pairs["cy1"])
    x2 = np.where(flip, pairs["cx1"], pairs["cx2"])
    y2 = np.where(flip, pairs["cy1"], pairs["cy2"])
    keys = pack(_to_pixel(x1), _to_pixel(y1), _to_pixel(x2), _to_pixel(y2))
    j.keys, j.counts = _reduce(keys, np.ones(keys.size, np.int64))
    return j


def merge(a: Jpd, b: Jpd) -> Jpd:
    if a.basis is not b.basis or a.optics != b.optics:
        raise JpdError(f"cannot merge Jpds with different metadata ({a.basis.value}/{b.basis.value})")
    keys, counts = _reduce(np.concatenate([a.keys, b.keys]), np.concatenate([a.counts, b.counts]))
    return Jpd(keys, counts, a.basis, a.optics, a.acquisition_s + b.acquisition_s,
               a.n_skipped + b.n_skipped)


@dataclass
class Projection:
    """2D histogram derived from a Jpd.

    ``grid[i, j]`` holds the value at coordinate ``(origin[0] + i, origin[1] + j)``
    in pixel units.
    """

    kind: str
    grid: np.ndarray
    origin: tuple[int, int] = (0, 0)
    ref: tuple[int, int] | None = None

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.grid.shape
        return np.arange(nx) + self.origin[0], np.arange(ny) + self.origin[1]

    def total(self) -> float:
        return float(self.grid.sum())

    def save_txt(self, path) -> None:
        header = f"kind={self.kind} origin={self.origin[0]},{self.origin[1]}"
        if self.ref is not None:
            header += f" ref={self.ref[0]},{self.ref[1]}"
        fmt = "%.8g" if self.kind == "conditional" else "%d"
        np.savetxt(path, self.grid, fmt=fmt, header=header)

    def save_pgm(self, path, log: bool = False) -> None:
        """Write an 8-bit binary PGM; rows are y, columns are x."""
        img = self.grid.T.astype(float)
        if log:
            img = np.log1p(img)
        top = img.max()
        img = np.zeros_like(img) if top <= 0 else img / top * 255.0
        data = np.ascontiguousarray(np.rint(img).astype(np.uint8))
        with open(path, "wb") as fh:
            fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
            fh.write(data.tobytes())


def _grid(ix, iy, w, shape) -> np.ndarray:
    flat = np.bincount(ix * shape[1] + iy, weights=w, minlength=shape[0] * shape[1])
    return flat.reshape(shape)


def marginal(j: Jpd, side: Half = Half.RIGHT) -> Projection:
    px1, py1, px2, py2 = j.coords()
    x, y = (px1, py1) if Half(side) is Half.LEFT else (px2, py2)
    g = _grid(x, y, j.counts, (N, N)).astype(np.int64)
    return Projection("marginal", g)


def conditional(j: Jpd, ref: tuple[int, int]) -> Projection:
    """Right-half distribution given a Left detection at ``ref``."""
    px1, py1, px2, py2 = j.coords()
    sel = (px1 == ref[0]) & (py1 == ref[1])
    norm = j.counts[sel].sum()
    if norm == 0:
        raise EmptyConditionalError(f"no counts at reference pixel {tuple(ref)}")
    g = _grid(px2[sel], py2[sel], j.counts[sel], (N, N)) / norm
    return Projection("conditional", g, ref=(int(ref[0]), int(ref[1])))


def minus_projection(j: Jpd) -> Projection:
    px1, py1, px2, py2 = j.coords()
    g = _grid(px1 - px2 + N - 1, py1 - py2 + N - 1, j.counts, (SPAN, SPAN)).astype(np.int64)
    return Projection("minus", g, origin=(-(N - 1), -(N - 1)))


def sum_projection(j: Jpd) -> Projection:
    px1, py1, px2, py2 = j.coords()
    g = _grid(px1 + px2, py1 + py2, j.counts, (SPAN, SPAN)).astype(np.int64)
    return Projection("sum", g)


def axis_histogram(j: Jpd, axis: str) -> np.ndarray:
    """Counts H[u1, u2] along one axis ('x' or 'y'), the other axis summed."""
    px1, py1, px2, py2 = j.coords()
    u1, u2 = (px1, px2) if axis.lower() == "x" else (py1, py2)
    return _grid(u1, u2, j.counts, (N, N)).astype(np.int64)


def accidental_rate(j: Jpd, left_mask: np.ndarray, right_mask: np.ndarray) -> tuple[float, float]:
    """Coincidences per pixel pair per second between two pixel regions.

    Masks are boolean 256x256 arrays indexed [x, y]. Returns (rate, sigma)
    with Poisson sigma from the raw count.
    """
    if j.acquisition_s <= 0:
        raise JpdError("acquisition time required for a rate")
    px1, py1, px2, py2 = j.coords()
    sel = left_mask[px1, py1] & right_mask[px2, py2]
    n = float(j.counts[sel].sum())
    norm = float(left_mask.sum()) * float(right_mask.sum()) * j.acquisition_s
    return n / norm, np.sqrt(n) / norm
