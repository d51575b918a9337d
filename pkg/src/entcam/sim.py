"""Double-Gaussian photon-pair source and a parametric camera model.

Pairs are drawn in sum/difference coordinates, routed to the two sensor
halves, thinned by the quantum efficiency and turned into pixel clusters
with amplitude-dependent timewalk, timing jitter, dark hits and per-pixel
dead time. A hidden ``TruthRecord`` keeps the ground truth for checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import _kernels
from .analysis import CertificationReport
from .events import (HIT_DTYPE, PAIR_DTYPE, SENSOR_SIZE, Basis, OpticsConfig)

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
HALF_CENTERS = ((63.5, 127.5), (191.5, 127.5))  # (x, y) of Left and Right image centres

PHOTON_DTYPE = np.dtype([
    ("pair_id", "i8"), ("photon_idx", "i1"), ("u_m", "f8"), ("v_m", "f8"),
    ("t_ps", "i8"), ("half", "i1"), ("px", "f8"), ("py", "f8"), ("status", "i1"),
])
TRUTH_HEADER = "pair_id,photon_idx,u_m,v_m,t_ps,half,px,py,status"
LINKS_HEADER = "hit_index,pair_id,photon_idx"
# photon status codes
DETECTED, LOST, OUTSIDE = 0, 1, 2


def pure_state_widths(sigma_sum_m: float, sigma_diff_m: float) -> tuple[float, float]:
    """Momentum-space widths of the pure double-Gaussian two-photon state.

    For ``psi ~ exp(-s^2/4 ss^2 - d^2/4 sd^2)`` the Fourier transform has
    ``std(k1 + k2) = 1/ss`` and ``std(k1 - k2) = 1/sd``.
    """
    if sigma_sum_m <= 0 or sigma_diff_m <= 0:
        raise ValueError("widths must be > 0")
    return 1.0 / sigma_sum_m, 1.0 / sigma_diff_m


@dataclass(frozen=True)
class SourceParams:
    sigma_sum_m: float = 1.0 / 3.82e3
    sigma_diff_m: float = 1.17e-5
    kappa_sum_inv_m: float = 3.82e3
    kappa_diff_inv_m: float = 1.0 / 1.17e-5
    pair_rate_hz: float = 3.6e5
    separable: bool = False
    random_split: bool = True

    def __post_init__(self):
        for k in ("sigma_sum_m", "sigma_diff_m", "kappa_sum_inv_m", "kappa_diff_inv_m",
                  "pair_rate_hz"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be > 0")

    @classmethod
    def pure(cls, sigma_sum_m: float, sigma_diff_m: float, **kw) -> "SourceParams":
        ks, kd = pure_state_widths(sigma_sum_m, sigma_diff_m)
        return cls(sigma_sum_m, sigma_diff_m, ks, kd, **kw)

    @classmethod
    def from_eof_widths(cls, delta_minus_m: float, delta_plus_inv_m: float, **kw) -> "SourceParams":
        """Pure state whose difference (NF) and sum (FF) widths are given."""
        return cls.pure(1.0 / delta_plus_inv_m, delta_minus_m, **kw)


@dataclass(frozen=True)
class DetectorParams:
    quantum_efficiency: float = 0.20
    dead_time_ps: int = 1_000_000
    cluster_psf_sigma_px: float = 0.6
    mean_cluster_tot: float = 20.0
    gain_shape: float = 3.0
    tot_noise: float = 0.1
    tot_threshold: float = 1.0
    timewalk_coeff_ps: float = 20_000.0
    dark_rate_hz_per_px: float = 1.0
    tick_ps: float = 1562.5
    time_jitter_fwhm_ps: float = 6_000.0

    def __post_init__(self):
        if not 0 <= self.quantum_efficiency <= 1:
            raise ValueError("quantum_efficiency must be in [0, 1]")
        if self.dead_time_ps < 0:
            raise ValueError("dead_time_ps must be >= 0")
        if self.tick_ps <= 0 or self.cluster_psf_sigma_px <= 0:
            raise ValueError("tick_ps and cluster_psf_sigma_px must be > 0")

    @property
    def photon_jitter_sigma_ps(self) -> float:
        """Per-photon Gaussian sigma such that a pair's time difference has the configured FWHM."""
        return self.time_jitter_fwhm_ps / FWHM_PER_SIGMA / math.sqrt(2.0)


@dataclass
class TruthRecord:
    photons: np.ndarray = field(default_factory=lambda: np.empty(0, PHOTON_DTYPE))
    hit_photon: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    @property
    def n_pairs(self) -> int:
        return int(self.photons.size // 2)

    @staticmethod
    def concat(parts: list["TruthRecord"]) -> "TruthRecord":
        if not parts:
            return TruthRecord()
        return TruthRecord(np.concatenate([p.photons for p in parts]),
                           np.concatenate([p.hit_photon for p in parts]))

    def photon_uid(self) -> np.ndarray:
        return 2 * self.photons["pair_id"] + self.photons["photon_idx"]

    def save(self, photons, links, hit_offset: int = 0, header: bool = True) -> None:
        """Write the photon table and the hit link table (paths or open text files)."""
        p = self.photons
        np.savetxt(photons, np.column_stack([p["pair_id"], p["photon_idx"], p["u_m"],
                                             p["v_m"], p["t_ps"], p["half"], p["px"],
                                             p["py"], p["status"]]).reshape(-1, 9),
                   fmt=["%d", "%d", "%.9e", "%.9e", "%d", "%d", "%.6f", "%.6f", "%d"],
                   delimiter=",", comments="", header=TRUTH_HEADER if header else "")
        uid = self.hit_photon
        pair = np.where(uid >= 0, uid // 2, -1)
        idx = np.where(uid >= 0, uid % 2, -1)
        np.savetxt(links, np.column_stack([np.arange(uid.size) + hit_offset, pair, idx]),
                   fmt="%d", delimiter=",", comments="",
                   header=LINKS_HEADER if header else "")


@dataclass
class SimStats:
    pairs_emitted: int = 0
    photons_outside: int = 0
    photons_detected: int = 0
    dark_hits: int = 0
    dead_time_dropped: int = 0
    hits_written: int = 0

    def add(self, other: "SimStats") -> None:
        for k in self.__dataclass_fields__:
            setattr(self, k, getattr(self, k) + getattr(other, k))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_pairs(params: SourceParams, basis, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` pairs as an array ``[pair, photon, axis]`` in physical units.

    NF samples positions with std ``sigma_sum_m`` for ``u1 + u2`` and
    ``sigma_diff_m`` for ``u1 - u2``; FF uses the kappa widths on
    ``k1 + k2`` and ``k1 - k2``. With ``separable`` each photon is drawn
    independently from the same single-photon marginal.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = _rng(seed)
    if Basis(basis) is Basis.NF:
        ws, wd = params.sigma_sum_m, params.sigma_diff_m
    else:
        ws, wd = params.kappa_sum_inv_m, params.kappa_diff_inv_m
    out = np.empty((n, 2, 2))
    if params.separable:
        out[:] = rng.normal(0.0, 0.5 * math.hypot(ws, wd), size=(n, 2, 2))
        return out
    s = rng.normal(0.0, ws, size=(n, 2))
    d = rng.normal(0.0, wd, size=(n, 2))
    out[:, 0, :] = 0.5 * (s + d)
    out[:, 1, :] = 0.5 * (s - d)
    return out


def emission_times(rate_hz: float, t0_s: float, t1_s: float, rng) -> np.ndarray:
    """Homogeneous Poisson arrival times in integer ps on ``[t0, t1)``."""
    n = rng.poisson(rate_hz * (t1_s - t0_s))
    t = np.sort(rng.uniform(t0_s, t1_s, n)) * 1e12
    return np.floor(t).astype(np.int64)


def _quantize(t_ps: np.ndarray, tick_ps: float) -> np.ndarray:
    t = np.floor(np.clip(t_ps, 0, None) / tick_ps) * tick_ps
    return np.floor(t).astype(np.int64)


def _stencil(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    dx, dy = np.meshgrid(r, r, indexing="ij")
    off = np.column_stack([dx.ravel(), dy.ravel()])
    # nearest pixel first so it is always kept
    return off[np.argsort(np.abs(off).sum(1), kind="stable")]


def _clusters(px, py, gain, t_ps, det: DetectorParams, rng):
    """Pixel clusters for detected photons; returns hit arrays and the owner index."""
    sig = det.cluster_psf_sigma_px
    off = _stencil(max(1, int(math.ceil(3 * sig))))
    cx = np.rint(px).astype(np.int64)
    cy = np.rint(py).astype(np.int64)
    X = cx[:, None] + off[None, :, 0]
    Y = cy[:, None] + off[None, :, 1]
    w = np.exp(-((X - px[:, None]) ** 2 + (Y - py[:, None]) ** 2) / (2 * sig ** 2))
    expected = gain[:, None] * det.mean_cluster_tot * w
    noise = rng.standard_normal(expected.shape)
    keep = expected >= det.tot_threshold
    keep[:, 0] = True
    keep &= (X >= 0) & (X < SENSOR_SIZE) & (Y >= 0) & (Y < SENSOR_SIZE)
    tot = np.maximum(1, np.rint(expected * (1 + det.tot_noise * noise))).astype(np.int64)
    tot = np.minimum(tot, np.iinfo(np.uint16).max)
    owner = np.broadcast_to(np.arange(px.size)[:, None], X.shape)
    t = t_ps[:, None] + det.timewalk_coeff_ps / tot
    return X[keep], Y[keep], t[keep], tot[keep], owner[keep]


def detector_response(pairs: np.ndarray, emission_ps: np.ndarray, optics: OpticsConfig,
                      det: DetectorParams, seed=None, pair_id_offset: int = 0,
                      random_split: bool = True, dark_interval_s: tuple[float, float] | None = None,
                      apply_dead_time: bool = True):
    """Turn emitted pairs into a time-sorted hit stream.

    Parameters
    ----------
    pairs : array (n, 2, 2)
        Physical coordinates from ``sample_pairs``.
    emission_ps : array (n,)
        Pair emission times.
    dark_interval_s : (t0, t1), optional
        Interval over which dark hits are generated; none if omitted.
    apply_dead_time : bool
        Set False when the caller applies dead time across chunks.

    Returns
    -------
    hits, truth, stats
    """
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    r_route, r_det, r_time, r_clu, r_dark = (np.random.default_rng(s) for s in ss.spawn(5))
    n = len(pairs)
    photons = np.empty(2 * n, PHOTON_DTYPE)
    photons["pair_id"] = np.repeat(np.arange(n) + pair_id_offset, 2)
    photons["photon_idx"] = np.tile([0, 1], n)
    photons["u_m"] = pairs[:, :, 0].ravel()
    photons["v_m"] = pairs[:, :, 1].ravel()
    photons["t_ps"] = np.repeat(emission_ps, 2)
    if random_split:
        half = r_route.integers(0, 2, 2 * n).astype(np.int8)
    else:
        half = photons["photon_idx"].astype(np.int8)
    photons["half"] = half
    centers = np.array(HALF_CENTERS)
    photons["px"] = centers[half, 0] + photons["u_m"] / optics.scale
    photons["py"] = centers[half, 1] + photons["v_m"] / optics.scale
    lo_x = np.where(half == 0, -0.5, 127.5)
    inside = ((photons["px"] >= lo_x) & (photons["px"] < lo_x + 128)
              & (photons["py"] >= -0.5) & (photons["py"] < SENSOR_SIZE - 0.5))
    # thinning: the same uniforms decide detection for every efficiency
    detected = (r_det.uniform(size=2 * n) < det.quantum_efficiency) & inside
    photons["status"] = np.where(~inside, OUTSIDE, np.where(detected, DETECTED, LOST))
    stats = SimStats(pairs_emitted=n, photons_outside=int((~inside).sum()),
                     photons_detected=int(detected.sum()))

    jitter = r_time.normal(0.0, det.photon_jitter_sigma_ps, 2 * n)
    gain = r_time.gamma(det.gain_shape, 1.0 / det.gain_shape, 2 * n)
    idx = np.flatnonzero(detected)
    X, Y, T, TOT, own = _clusters(photons["px"][idx], photons["py"][idx], gain[idx],
                                  photons["t_ps"][idx] + jitter[idx], det, r_clu)
    uid = 2 * photons["pair_id"][idx][own] + photons["photon_idx"][idx][own]

    if dark_interval_s is not None and det.dark_rate_hz_per_px > 0:
        t0, t1 = dark_interval_s
        nd = r_dark.poisson(det.dark_rate_hz_per_px * SENSOR_SIZE ** 2 * (t1 - t0))
        dx = r_dark.integers(0, SENSOR_SIZE, nd)
        dy = r_dark.integers(0, SENSOR_SIZE, nd)
        dg = r_dark.gamma(det.gain_shape, 1.0 / det.gain_shape, nd)
        dtot = np.clip(np.rint(dg * det.mean_cluster_tot), 1, np.iinfo(np.uint16).max).astype(np.int64)
        dt = r_dark.uniform(t0, t1, nd) * 1e12 + det.timewalk_coeff_ps / dtot
        X = np.concatenate([X, dx])
        Y = np.concatenate([Y, dy])
        T = np.concatenate([T, dt])
        TOT = np.concatenate([TOT, dtot])
        uid = np.concatenate([uid, np.full(nd, -1, np.int64)])
        stats.dark_hits = int(nd)

    toa = _quantize(T, det.tick_ps)
    order = np.lexsort((Y, X, toa))
    hits = np.empty(order.size, HIT_DTYPE)
    hits["x"], hits["y"] = X[order], Y[order]
    hits["toa_ps"], hits["tot"] = toa[order], TOT[order]
    uid = uid[order]
    if apply_dead_time:
        keep = dead_time_filter(hits, det.dead_time_ps)
        stats.dead_time_dropped = int((~keep).sum())
        hits, uid = hits[keep], uid[keep]
    stats.hits_written = len(hits)
    return hits, TruthRecord(photons, uid), stats


def dead_time_filter(hits: np.ndarray, dead_time_ps: int, state: np.ndarray | None = None):
    """Boolean keep-mask enforcing non-paralysable per-pixel dead time."""
    if state is None:
        state = np.full(SENSOR_SIZE ** 2, -1, np.int64)
    pix = hits["x"].astype(np.int64) * SENSOR_SIZE + hits["y"].astype(np.int64)
    return _kernels.dead_time_mask(pix, hits["toa_ps"].astype(np.int64),
                                   np.int64(dead_time_ps), state)


def simulate_stream(source: SourceParams, det: DetectorParams, optics: OpticsConfig,
                    duration_s: float, seed: int = 0, chunk_s: float = 0.5
                    ) -> Iterator[tuple[np.ndarray, TruthRecord, SimStats]]:
    """Generate an acquisition chunk by chunk, in global time order.

    Chunk ``k`` draws its randomness from ``SeedSequence([seed, k])``.
    Hits that could still be preceded by hits of the next chunk are held
    back, and dead time is carried across chunk boundaries, so the
    concatenated output is one valid stream for this chunking.
    """
    basis = optics.basis
    n_chunks = max(1, int(math.ceil(duration_s / chunk_s - 1e-9)))
    margin_ps = int(8 * det.photon_jitter_sigma_ps + 2 * det.tick_ps) + 1
    state = np.full(SENSOR_SIZE ** 2, -1, np.int64)
    pend_hits = np.empty(0, HIT_DTYPE)
    pend_uid = np.empty(0, np.int64)
    next_pair = 0
    for k in range(n_chunks):
        t0 = k * chunk_s
        t1 = min(duration_s, (k + 1) * chunk_s)
        ss = np.random.SeedSequence([seed, k])
        s_src, s_det = ss.spawn(2)
        r_src = np.random.default_rng(s_src)
        t_emit = emission_times(source.pair_rate_hz, t0, t1, r_src)
        pairs = sample_pairs(source, basis, t_emit.size, r_src)
        hits, truth, stats = detector_response(pairs, t_emit, optics, det, s_det, next_pair,
                                               source.random_split, (t0, t1),
                                               apply_dead_time=False)
        next_pair += t_emit.size
        hits = np.concatenate([pend_hits, hits])
        uid = np.concatenate([pend_uid, truth.hit_photon])
        order = np.lexsort((hits["y"], hits["x"], hits["toa_ps"]))
        hits, uid = hits[order], uid[order]
        if k < n_chunks - 1:
            cut = int(np.searchsorted(hits["toa_ps"], int(t1 * 1e12) - margin_ps))
        else:
            cut = len(hits)
        out, out_uid = hits[:cut], uid[:cut]
        pend_hits, pend_uid = hits[cut:], uid[cut:]
        keep = dead_time_filter(out, det.dead_time_ps, state)
        stats.dead_time_dropped = int((~keep).sum())
        out, out_uid = out[keep], out_uid[keep]
        stats.hits_written = len(out)
        yield out, TruthRecord(truth.photons, out_uid), stats


def simulate(source: SourceParams, det: DetectorParams, optics: OpticsConfig,
             duration_s: float, seed: int = 0, chunk_s: float = 0.5):
    """Whole acquisition in memory; returns (hits, truth, stats)."""
    hs, ts, total = [], [], SimStats()
    for h, t, s in simulate_stream(source, det, optics, duration_s, seed, chunk_s):
        hs.append(h)
        ts.append(t)
        total.add(s)
    hits = np.concatenate(hs) if hs else np.empty(0, HIT_DTYPE)
    return hits, TruthRecord.concat(ts), total


def truth_pairs(truth: TruthRecord) -> np.ndarray:
    """Pairs with both photons detected, at their true landing positions."""
    p = truth.photons
    a, b = p[0::2], p[1::2]
    ok = (a["status"] == DETECTED) & (b["status"] == DETECTED)
    a, b = a[ok], b[ok]
    out = np.empty(a.size, PAIR_DTYPE)
    out["cx1"], out["cy1"], out["t1_ps"] = a["px"], a["py"], a["t_ps"]
    out["cx2"], out["cy2"], out["t2_ps"] = b["px"], b["py"], b["t_ps"]
    out["dt_ps"] = 0
    out["ia"], out["ib"] = 2 * a["pair_id"], 2 * b["pair_id"] + 1
    return out


def link_pairs(pairs: np.ndarray, events: np.ndarray, truth: TruthRecord) -> np.ndarray:
    """True where both events of a found pair come from the same emitted pair."""
    ua = truth.hit_photon[events["seed_hit"][pairs["ia"]]]
    ub = truth.hit_photon[events["seed_hit"][pairs["ib"]]]
    return (ua >= 0) & (ub >= 0) & (ua // 2 == ub // 2) & (ua != ub)


# -- analytic expectations --------------------------------------------------------------

def conditional_width(w_sum: float, w_diff: float) -> float:
    """std of one coordinate given the other, for independent sum/difference widths."""
    return w_sum * w_diff / math.hypot(w_sum, w_diff)


def theory_widths(params: SourceParams) -> dict[str, float]:
    """Widths implied by the Gaussian source model, keyed as in the report."""
    ss, sd = params.sigma_sum_m, params.sigma_diff_m
    ks, kd = params.kappa_sum_inv_m, params.kappa_diff_inv_m
    if params.separable:
        a, b = 0.5 * math.hypot(ss, sd), 0.5 * math.hypot(ks, kd)
        cond_x, cond_k, minus, plus = a, b, math.sqrt(2) * a, math.sqrt(2) * b
    else:
        cond_x, cond_k = conditional_width(ss, sd), conditional_width(ks, kd)
        minus, plus = sd, ks
    w = {}
    for ax in ("x", "y"):
        w[f"cond_{ax}"] = w[f"min_{ax}"] = cond_x
        w[f"cond_k{ax}"] = w[f"min_k{ax}"] = cond_k
        w[f"minus_{ax}"] = minus
        w[f"plus_k{ax}"] = plus
    return w


def theory_report(params: SourceParams) -> CertificationReport:
    return CertificationReport.from_widths(theory_widths(params), info={"source": "theory"})


# -- rate bookkeeping -------------------------------------------------------------------------

def window_efficiency(det: DetectorParams, window_ps: float) -> float:
    """Probability that a true pair's jitter-limited time difference fits the window."""
    sigma = det.time_jitter_fwhm_ps / FWHM_PER_SIGMA
    return math.erf(window_ps / (sigma * math.sqrt(2)))


def expected_coincidences(source: SourceParams, det: DetectorParams, duration_s: float,
                          window_ps: float = 6_000, acceptance: float = 1.0) -> float:
    """Expected cross-half true coincidences (accidentals and losses to competition ignored)."""
    split = 0.5 if source.random_split else 1.0
    return (source.pair_rate_hz * duration_s * det.quantum_efficiency ** 2 * split
            * window_efficiency(det, window_ps) * acceptance)


def tune_pair_rate(target: float, det: DetectorParams, duration_s: float,
                   window_ps: float = 6_000, random_split: bool = True,
                   acceptance: float = 1.0) -> float:
    """Pair rate that yields ``target`` cross-half coincidences."""
    probe = SourceParams(pair_rate_hz=1.0, random_split=random_split)
    return target / expected_coincidences(probe, det, duration_s, window_ps, acceptance)


def accidental_rate_per_pixel_pair(dark_rate_hz_per_px: float, window_ps: float,
                                   left_rate_hz: float, right_rate_hz: float) -> float:
    """Dark-dark coincidences per Left/Right pixel pair per second under greedy pairing.

    Two independent Poisson pixels meet within +-window at rate
    ``2 r^2 window``; the greedy scan loses a fraction of them to earlier
    claimants and nearer competitors. ``left_rate_hz``/``right_rate_hz``
    are the total event rates on each half.
    """
    r = dark_rate_hz_per_px
    w = window_ps * 1e-12
    total = 0.0
    for rate in (left_rate_hz, right_rate_hz):
        x = rate * w
        total += w * math.exp(-x) * (-math.expm1(-x)) / x if x > 0 else w
    return r * r * total


def dark_rate_for_accidentals(target: float, window_ps: float, signal_rate_per_half_hz: float = 0.0
                              ) -> float:
    """Per-pixel dark rate giving ``target`` accidentals per pixel pair per second."""
    half_px = SENSOR_SIZE ** 2 / 2
    r = math.sqrt(target / (2 * window_ps * 1e-12))
    for _ in range(50):
        rate = r * half_px + signal_rate_per_half_hz
        per = accidental_rate_per_pixel_pair(1.0, window_ps, rate, rate)
        r = math.sqrt(target / per)
    return r
