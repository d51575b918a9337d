"""Hit stream -> photon events -> coincidence pairs.

The operators work on numpy structured arrays (see ``events``) and follow
the acquisition chain: cluster adjacent hits, centroid each cluster, undo
the amplitude-dependent timewalk, then pair Left/Right events inside the
coincidence window.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .events import (EVENT_DTYPE, HIT_DTYPE, PAIR_DTYPE, Half, OrderingError, PhotonEvent,
                     as_hit_array, check_sorted, empty_events, empty_pairs, half_of)

log = logging.getLogger(__name__)


class TimewalkCalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterParams:
    spatial_adjacency: int = 1
    cluster_time_window_ps: int = 300_000
    min_cluster_tot: int = 1

    def __post_init__(self):
        if self.cluster_time_window_ps <= 0:
            raise ValueError("cluster_time_window_ps must be > 0")
        if self.spatial_adjacency < 1:
            raise ValueError("spatial_adjacency must be >= 1")


@dataclass(frozen=True)
class PairingParams:
    coincidence_window_ps: int = 6_000
    cross_halves_only: bool = True

    def __post_init__(self):
        if self.coincidence_window_ps <= 0:
            raise ValueError("coincidence_window_ps must be > 0")


def _sorted_hits(hits) -> tuple[np.ndarray, np.ndarray]:
    hits = as_hit_array(hits)
    check_sorted(hits["toa_ps"])
    # canonical order for equal toa, so results do not depend on input order
    order = np.lexsort((hits["y"], hits["x"], hits["toa_ps"]))
    return hits, order


def label_clusters(hits, params: ClusterParams = ClusterParams()):
    """Cluster labels for each hit, in canonical (toa, x, y) order.

    Returns ``(order, labels, n_clusters)`` where ``hits[order]`` is the
    canonical ordering and ``labels`` is aligned with it.
    """
    hits, order = _sorted_hits(hits)
    h = hits[order]
    labels, n = _kernels.cluster_labels(
        h["x"].astype(np.int64), h["y"].astype(np.int64), h["toa_ps"].astype(np.int64),
        np.int64(params.cluster_time_window_ps), np.int64(params.spatial_adjacency))
    return order, labels, n


def cluster_hits(hits, params: ClusterParams = ClusterParams()) -> list[np.ndarray]:
    """Group hits into clusters ordered by earliest hit time.

    Two hits share a cluster iff a chain of hits links them where each
    step is within ``spatial_adjacency`` (Chebyshev) and within
    ``cluster_time_window_ps``.
    """
    hits = as_hit_array(hits)
    order, labels, n = label_clusters(hits, params)
    h = hits[order]
    by_label = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[by_label], np.arange(n + 1))
    return [h[by_label[bounds[k]:bounds[k + 1]]] for k in range(n)]


def centroid(cluster) -> PhotonEvent:
    """Amplitude-weighted centroid of one cluster.

    The event time is the toa of the highest-tot hit; ties go to the
    earliest toa, then the smallest (x, y).
    """
    c = as_hit_array(cluster)
    if len(c) == 0:
        raise ValueError("empty cluster")
    tot = c["tot"].astype(np.int64)
    st = int(tot.sum())
    cx = float((tot * c["x"]).sum() / st)
    cy = float((tot * c["y"]).sum() / st)
    best = np.lexsort((c["y"], c["x"], c["toa_ps"], -tot))[0]
    return PhotonEvent(cx, cy, int(c["toa_ps"][best]), len(c), st, int(tot[best]))


def reconstruct(hits, params: ClusterParams = ClusterParams()) -> np.ndarray:
    """Cluster and centroid a hit array in one pass; returns EVENT_DTYPE."""
    hits = as_hit_array(hits)
    if len(hits) == 0:
        return empty_events()
    order, labels, n = label_clusters(hits, params)
    h = hits[order]
    cx, cy, st, npx, best = _kernels.centroids(
        h["x"].astype(np.float64), h["y"].astype(np.float64), h["toa_ps"].astype(np.int64),
        h["tot"].astype(np.int64), labels, n)
    ev = np.empty(n, EVENT_DTYPE)
    ev["cx"], ev["cy"] = cx, cy
    ev["t_ps"] = h["toa_ps"][best]
    ev["n_pixels"] = npx
    ev["sum_tot"] = st
    ev["max_tot"] = h["tot"][best]
    ev["half"] = half_of(cx)
    ev["seed_hit"] = order[best]
    if params.min_cluster_tot > 1:
        ev = ev[ev["sum_tot"] >= params.min_cluster_tot]
    return ev


def timewalk_correct(events: np.ndarray, c: float) -> np.ndarray:
    """Subtract the timewalk c / max_tot from each event and re-sort by time."""
    if c < 0:
        raise ValueError("timewalk coefficient must be >= 0")
    ev = events.copy()
    if c > 0 and len(ev):
        ev["t_ps"] -= np.rint(c / ev["max_tot"]).astype(np.int64)
    return ev[np.argsort(ev["t_ps"], kind="stable")]


def calibrate_timewalk(tot, dt, tot_ref=None, return_offset: bool = False):
    """Least-squares fit of ``dt = c / tot + offset``.

    With ``tot_ref`` the regressor becomes ``1/tot - 1/tot_ref``, which is
    the form taken by the time difference of two timewalk-shifted photons
    of the same pair.
    """
    tot = np.asarray(tot, dtype=float)
    u = 1.0 / tot
    if tot_ref is not None:
        u = u - 1.0 / np.asarray(tot_ref, dtype=float)
    c, offset = _fit_line(u, np.asarray(dt, dtype=float))
    return (c, offset) if return_offset else c


def _fit_line(u: np.ndarray, dt: np.ndarray) -> tuple[float, float]:
    if u.size < 10:
        raise TimewalkCalibrationError(f"need >= 10 samples, got {u.size}")
    if np.unique(u).size < 2:
        raise TimewalkCalibrationError("degenerate amplitude spread: all regressors equal")
    A = np.column_stack([u, np.ones_like(u)])
    (c, offset), *_ = np.linalg.lstsq(A, dt, rcond=None)
    return float(c), float(offset)


def find_coincidences(events: np.ndarray, params: PairingParams = PairingParams()):
    """Greedy forward pairing of time-sorted events.

    Each unpaired event takes the first later unpaired event within the
    window (on the opposite half when ``cross_halves_only``); the first
    one in time order is the nearest, and equal times go to the earlier
    index. Returns ``(pairs, n_same_half)`` where ``n_same_half`` counts
    consecutive same-half events inside the window.
    """
    ev = np.asarray(events)
    if len(ev) == 0:
        return empty_pairs(), 0
    check_sorted(ev["t_ps"], "events")
    ia, ib, same = _kernels.greedy_pairs(ev["t_ps"].astype(np.int64), ev["half"].astype(np.int8),
                                         np.int64(params.coincidence_window_ps),
                                         params.cross_halves_only)
    # Left event goes first when the pair straddles the halves
    swap = (ev["half"][ia] == Half.RIGHT) & (ev["half"][ib] == Half.LEFT)
    a = np.where(swap, ib, ia)
    b = np.where(swap, ia, ib)
    pairs = np.empty(len(a), PAIR_DTYPE)
    pairs["cx1"], pairs["cy1"], pairs["t1_ps"] = ev["cx"][a], ev["cy"][a], ev["t_ps"][a]
    pairs["cx2"], pairs["cy2"], pairs["t2_ps"] = ev["cx"][b], ev["cy"][b], ev["t_ps"][b]
    pairs["dt_ps"] = np.abs(pairs["t1_ps"] - pairs["t2_ps"])
    pairs["ia"], pairs["ib"] = a, b
    return pairs, int(same)


def count_window_pairs(events: np.ndarray, window_ps: int, cross_halves_only: bool = True) -> int:
    """Brute-force O(n^2) count of all event pairs inside the window."""
    return int(_kernels.brute_force_window_pairs(
        events["t_ps"].astype(np.int64), events["half"].astype(np.int8),
        np.int64(window_ps), cross_halves_only))


def estimate_timewalk(events: np.ndarray, window_ps: int = 50_000, band_ps: int = 3_000,
                      step_ps: int = 250) -> float:
    """Self-calibrate the timewalk coefficient from uncorrected events.

    Events are paired with a wide window and each pair gives a point
    ``(u, dt)`` with ``u = 1/tot_a - 1/tot_b``. True pairs lie on the line
    ``dt = c u``, accidentals are spread flat in ``dt``. The coefficient
    maximising the number of points within ``band_ps`` of the line is
    refined by least squares on those inliers.
    """
    events = timewalk_correct(events, 0.0)
    pairs, _ = find_coincidences(events, PairingParams(int(window_ps)))
    if len(pairs) < 10:
        raise TimewalkCalibrationError(f"only {len(pairs)} pairs inside {window_ps} ps")
    tot_a = events["max_tot"][pairs["ia"]].astype(float)
    tot_b = events["max_tot"][pairs["ib"]].astype(float)
    u = 1.0 / tot_a - 1.0 / tot_b
    dt = (pairs["t1_ps"] - pairs["t2_ps"]).astype(float)
    # search up to window/2 and keep pairs whose band stays inside the window
    c_max = 0.5 * window_ps
    keep = np.abs(u) * c_max + band_ps <= window_ps
    u, dt = u[keep], dt[keep]
    if u.size < 10:
        raise TimewalkCalibrationError("too few pairs with usable amplitudes")
    grid = np.arange(0.0, c_max + step_ps, step_ps)
    score = np.zeros(grid.size, np.int64)
    for lo in range(0, grid.size, 32):
        g = grid[lo:lo + 32]
        score[lo:lo + 32] = (np.abs(dt[None, :] - g[:, None] * u[None, :]) <= band_ps).sum(1)
    c = float(grid[int(np.argmax(score))])
    for _ in range(3):
        inl = np.abs(dt - c * u) <= band_ps
        try:
            c, _ = _fit_line(u[inl], dt[inl])
        except TimewalkCalibrationError:
            break
    return max(c, 0.0)


@dataclass
class PipelineStats:
    n_hits: int = 0
    n_events: int = 0
    n_left: int = 0
    n_right: int = 0
    n_pairs: int = 0
    n_same_half: int = 0

    def add(self, other: "PipelineStats") -> None:
        for k in self.__dataclass_fields__:
            setattr(self, k, getattr(self, k) + getattr(other, k))


@dataclass
class PipelineResult:
    events: np.ndarray
    pairs: np.ndarray
    stats: PipelineStats = field(default_factory=PipelineStats)


def process_hits(hits, cluster: ClusterParams = ClusterParams(),
                 pairing: PairingParams = PairingParams(),
                 timewalk_coeff_ps: float | None = 0.0) -> PipelineResult:
    """Run cluster -> centroid -> timewalk -> pairing on an in-memory stream.

    ``timewalk_coeff_ps=None`` estimates the coefficient from the data.
    """
    hits = as_hit_array(hits)
    ev = reconstruct(hits, cluster)
    if timewalk_coeff_ps is None:
        try:
            timewalk_coeff_ps = estimate_timewalk(ev)
        except TimewalkCalibrationError as exc:
            log.warning("timewalk not estimated (%s); using 0", exc)
            timewalk_coeff_ps = 0.0
    ev = timewalk_correct(ev, timewalk_coeff_ps)
    pairs, same = find_coincidences(ev, pairing)
    stats = PipelineStats(len(hits), len(ev), int((ev["half"] == 0).sum()),
                          int((ev["half"] == 1).sum()), len(pairs), same)
    return PipelineResult(ev, pairs, stats)


class StreamProcessor:
    """Incremental pipeline over successive time-sorted hit chunks.

    Cuts are placed only at time gaps wider than the relevant window, so
    the output matches a single pass over the concatenated stream.
    """

    def __init__(self, cluster: ClusterParams = ClusterParams(),
                 pairing: PairingParams = PairingParams(), timewalk_coeff_ps: float = 0.0):
        self.cluster = cluster
        self.pairing = pairing
        self.c = float(timewalk_coeff_ps)
        self.stats = PipelineStats()
        self._hits = np.empty(0, HIT_DTYPE)
        self._events = empty_events()
        self._last_toa = -1

    def feed(self, hits) -> np.ndarray:
        hits = as_hit_array(hits)
        if len(hits):
            check_sorted(hits["toa_ps"])
            if int(hits["toa_ps"][0]) < self._last_toa:
                raise OrderingError("chunk starts before the end of the previous chunk")
            self._last_toa = int(hits["toa_ps"][-1])
        self.stats.n_hits += len(hits)
        buf = np.concatenate([self._hits, hits]) if len(self._hits) else hits
        if len(buf) < 2:
            self._hits = buf
            return empty_pairs()
        t = buf["toa_ps"].astype(np.int64)
        gaps = np.flatnonzero(np.diff(t) > self.cluster.cluster_time_window_ps)
        if gaps.size == 0:
            self._hits = buf
            return empty_pairs()
        cut = int(gaps[-1]) + 1
        self._hits = buf[cut:]
        # corrected times of future events cannot precede this bound
        safe_t = int(t[cut]) - int(np.ceil(self.c)) - 1
        return self._push_events(reconstruct(buf[:cut], self.cluster), safe_t)

    def finish(self) -> np.ndarray:
        ev = reconstruct(self._hits, self.cluster)
        self._hits = np.empty(0, HIT_DTYPE)
        return self._push_events(ev, None)

    def _push_events(self, ev: np.ndarray, safe_t: int | None) -> np.ndarray:
        ev = timewalk_correct(ev, self.c)
        self.stats.n_events += len(ev)
        self.stats.n_left += int((ev["half"] == 0).sum())
        self.stats.n_right += int((ev["half"] == 1).sum())
        buf = np.concatenate([self._events, ev])
        buf = buf[np.argsort(buf["t_ps"], kind="stable")]
        if safe_t is None:
            ready, self._events = buf, empty_events()
        else:
            t = buf["t_ps"]
            final = int(np.searchsorted(t, safe_t, side="left"))
            gaps = np.flatnonzero(np.diff(t[:final]) > self.pairing.coincidence_window_ps)
            if final == 0 or gaps.size == 0:
                self._events = buf
                return empty_pairs()
            cut = int(gaps[-1]) + 1
            ready, self._events = buf[:cut], buf[cut:]
        pairs, same = find_coincidences(ready, self.pairing)
        self.stats.n_pairs += len(pairs)
        self.stats.n_same_half += same
        pairs["ia"] = pairs["ib"] = -1
        return pairs


def process_chunked(hits, chunk_ps: int, overlap_ps: int | None = None,
                    cluster: ClusterParams = ClusterParams(),
                    pairing: PairingParams = PairingParams(),
                    timewalk_coeff_ps: float = 0.0) -> np.ndarray:
    """Process overlapping time chunks independently and de-duplicate.

    Chunk k covers hits in ``[a - overlap, b + overlap)`` and keeps the
    pairs whose earlier event lies in ``[a, b)``.
    """
    hits = as_hit_array(hits)
    if overlap_ps is None:
        overlap_ps = 2 * (cluster.cluster_time_window_ps + pairing.coincidence_window_ps) \
            + int(np.ceil(timewalk_coeff_ps))
    if overlap_ps < max(cluster.cluster_time_window_ps, pairing.coincidence_window_ps):
        raise ValueError("overlap must cover both the cluster and coincidence windows")
    if len(hits) == 0:
        return empty_pairs()
    t = hits["toa_ps"].astype(np.int64)
    out = []
    for a in range(int(t[0]), int(t[-1]) + 1, chunk_ps):
        b = a + chunk_ps
        lo, hi = np.searchsorted(t, [a - overlap_ps, b + overlap_ps])
        res = process_hits(hits[lo:hi], cluster, pairing, timewalk_coeff_ps)
        first = np.minimum(res.pairs["t1_ps"], res.pairs["t2_ps"])
        out.append(res.pairs[(first >= a) & (first < b)])
    pairs = np.concatenate(out)
    pairs["ia"] = pairs["ib"] = -1
    first = np.minimum(pairs["t1_ps"], pairs["t2_ps"])
    return pairs[np.argsort(first, kind="stable")]
