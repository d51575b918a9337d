"""Width estimation and entanglement figures of merit.

Widths are fitted on pixel grids and converted to physical units at the
end (metres in the near field, inverse metres in the far field).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .events import Basis, Half, OpticsConfig
from .jpd import (Jpd, Projection, axis_histogram, conditional, marginal, minus_projection,
                  sum_projection)

log = logging.getLogger(__name__)

EPR_BOUND = 0.5
MAX_ITER = 200


class AnalysisError(RuntimeError):
    pass


class FitError(AnalysisError):
    pass


class MonteCarloError(AnalysisError):
    pass


def pixel_to_physical(optics: OpticsConfig, pixels):
    """Pixels -> metres (NF) or inverse metres (FF)."""
    v = np.asarray(pixels, dtype=float) * optics.scale
    return float(v) if v.ndim == 0 else v


# -- Gaussian fits --------------------------------------------------------------

@dataclass
class GaussianFit:
    amplitude: float
    center: tuple[float, float]
    widths: tuple[float, float]
    offset: float
    residual: float
    converged: bool


@dataclass
class GaussianFit1D:
    amplitude: float
    center: float
    width: float
    offset: float
    residual: float
    converged: bool

    @property
    def content(self) -> float:
        """Counts under the peak above the offset."""
        return self.amplitude * abs(self.width) * math.sqrt(2 * math.pi)


def _window(n, c, half):
    lo = max(int(math.floor(c - half)), 0)
    hi = min(int(math.ceil(c + half)) + 1, n)
    return lo, hi


def _moments_1d(u, p):
    w = np.clip(p, 0, None)
    s = w.sum()
    if s <= 0:
        return float(u[np.argmax(p)]), 0.5
    m = float((w * u).sum() / s)
    sd = float(np.sqrt((w * (u - m) ** 2).sum() / s))
    return m, max(sd, 0.3)


def fit_gaussian1d(profile, origin: float = 0.0, min_nonzero: int = 4,
                   crop: float = 6.0) -> GaussianFit1D:
    """Least-squares fit of ``A exp(-(u-u0)^2 / 2 s^2) + B`` to a 1D profile."""
    p = np.asarray(profile, dtype=float)
    if not np.any(p):
        raise FitError("all-zero profile")
    n = p.size
    peak = int(np.argmax(p))
    lo, hi = _window(n, peak, 8)
    u = np.arange(n, dtype=float)
    b0 = float(np.median(p[max(0, lo - 4):hi + 4])) if n > 20 else 0.0
    m, s = _moments_1d(u[lo:hi], p[lo:hi] - b0)
    lo, hi = _window(n, m, max(crop * s, 6.0))
    uu, pp = u[lo:hi], p[lo:hi]
    x0 = np.array([p[peak] - b0, m, s, b0])
    moments = GaussianFit1D(x0[0], m + origin, s, b0, float("nan"), False)
    if np.count_nonzero(pp) < min_nonzero or uu.size < 5:
        return moments

    def resid(q):
        return q[0] * np.exp(-(uu - q[1]) ** 2 / (2 * q[2] ** 2)) + q[3] - pp

    def jac(q):
        e = np.exp(-(uu - q[1]) ** 2 / (2 * q[2] ** 2))
        return np.column_stack([e, q[0] * e * (uu - q[1]) / q[2] ** 2,
                                q[0] * e * (uu - q[1]) ** 2 / q[2] ** 3, np.ones_like(uu)])

    try:
        r = least_squares(resid, x0, jac=jac, method="lm", max_nfev=MAX_ITER,
                          xtol=1e-12, ftol=1e-12, gtol=1e-12)
    except (ValueError, np.linalg.LinAlgError):
        return moments
    A, c, w, B = r.x
    ok = r.status > 0 and np.all(np.isfinite(r.x)) and lo <= c < hi and abs(w) < n
    if not ok:
        return moments
    return GaussianFit1D(float(A), float(c + origin), float(abs(w)), float(B),
                         float(np.sqrt(np.mean(r.fun ** 2))), True)


def _moments_2d(g):
    w = np.clip(g, 0, None)
    s = w.sum()
    ii, jj = np.indices(g.shape)
    mi = (w * ii).sum() / s
    mj = (w * jj).sum() / s
    si = np.sqrt((w * (ii - mi) ** 2).sum() / s)
    sj = np.sqrt((w * (jj - mj) ** 2).sum() / s)
    return mi, mj, max(si, 0.3), max(sj, 0.3)


def fit_gaussian2d(grid, min_nonzero: int = 8, crop: float = 6.0) -> GaussianFit:
    """Fit ``A exp(-(u-u0)^2/2su^2 - (v-v0)^2/2sv^2) + B`` by Levenberg-Marquardt.

    Parameters
    ----------
    grid : Projection or 2D array
        Values indexed [u, v]. For a Projection, the returned center is in
        its coordinate system (origin applied).
    min_nonzero : int
        Below this many nonzero cells the moment estimates are returned
        with ``converged=False``.
    crop : float
        The fit runs on a window of ``crop`` moment widths around the peak.

    Returns
    -------
    GaussianFit
        Moment estimates with ``converged=False`` if the iteration does not
        converge within 200 steps.
    """
    origin = (0, 0)
    if isinstance(grid, Projection):
        origin = grid.origin
        grid = grid.grid
    g = np.asarray(grid, dtype=float)
    if not np.any(g):
        raise FitError("all-zero grid")
    pi, pj = np.unravel_index(np.argmax(g), g.shape)
    i0, i1 = _window(g.shape[0], pi, 8)
    j0, j1 = _window(g.shape[1], pj, 8)
    sub = g[i0:i1, j0:j1]
    big = g.size > sub.size
    b0 = float(np.median(g[max(0, i0 - 4):i1 + 4, max(0, j0 - 4):j1 + 4])) if big else 0.0
    mi, mj, si, sj = _moments_2d(sub - b0)
    mi += i0
    mj += j0
    i0, i1 = _window(g.shape[0], mi, max(crop * si, 6.0))
    j0, j1 = _window(g.shape[1], mj, max(crop * sj, 6.0))
    sub = g[i0:i1, j0:j1]
    moments = GaussianFit(float(g[pi, pj] - b0), (mi + origin[0], mj + origin[1]),
                          (si, sj), b0, float("nan"), False)
    if np.count_nonzero(sub) < min_nonzero:
        return moments
    U, V = np.meshgrid(np.arange(i0, i1, dtype=float), np.arange(j0, j1, dtype=float),
                       indexing="ij")
    U, V, D = U.ravel(), V.ravel(), sub.ravel()

    def model_e(q):
        return np.exp(-(U - q[1]) ** 2 / (2 * q[3] ** 2) - (V - q[2]) ** 2 / (2 * q[4] ** 2))

    def resid(q):
        return q[0] * model_e(q) + q[5] - D

    def jac(q):
        e = model_e(q)
        ae = q[0] * e
        return np.column_stack([e, ae * (U - q[1]) / q[3] ** 2, ae * (V - q[2]) / q[4] ** 2,
                                ae * (U - q[1]) ** 2 / q[3] ** 3, ae * (V - q[2]) ** 2 / q[4] ** 3,
                                np.ones_like(U)])

    x0 = np.array([g[pi, pj] - b0, mi, mj, si, sj, b0])
    try:
        r = least_squares(resid, x0, jac=jac, method="lm", max_nfev=MAX_ITER,
                          xtol=1e-12, ftol=1e-12, gtol=1e-12)
    except (ValueError, np.linalg.LinAlgError):
        return moments
    A, cu, cv, su, sv, B = r.x
    ok = (r.status > 0 and np.all(np.isfinite(r.x)) and i0 <= cu < i1 and j0 <= cv < j1
          and su != 0 and sv != 0)
    if not ok:
        return moments
    return GaussianFit(float(A), (float(cu + origin[0]), float(cv + origin[1])),
                       (float(abs(su)), float(abs(sv))), float(B),
                       float(np.sqrt(np.mean(r.fun ** 2))), True)


def gaussian_grid(shape, amplitude, center, widths, offset=0.0) -> np.ndarray:
    """Render the 2D model on an integer grid (used by fit self-checks)."""
    U, V = np.indices(shape, dtype=float)
    return amplitude * np.exp(-(U - center[0]) ** 2 / (2 * widths[0] ** 2)
                              - (V - center[1]) ** 2 / (2 * widths[1] ** 2)) + offset


# -- pixelisation -----------------------------------------------------------------

def correlation_slope(j: Jpd, axis: str) -> float:
    """Regression slope of the Right coordinate on the Left one."""
    H = axis_histogram(j, axis).astype(float)
    u = np.arange(H.shape[0], dtype=float)
    n = H.sum()
    if n == 0:
        return 0.0
    m1 = (H.sum(1) * u).sum() / n
    m2 = (H.sum(0) * u).sum() / n
    v1 = (H.sum(1) * (u - m1) ** 2).sum() / n
    cov = (H * np.outer(u - m1, u - m2)).sum() / n
    return float(cov / v1) if v1 > 0 else 0.0


def unbin_width(width_px: float, n_roundings: float) -> float:
    """Remove the variance added by rounding coordinates to pixel centres.

    Each independent rounding adds 1/12 px^2. Returns NaN if the fitted
    width is narrower than the rounding floor.
    """
    v = width_px ** 2 - n_roundings / 12.0
    return math.sqrt(v) if v > 0 else float("nan")


# -- EPR-Reid, EoF and dimension arithmetic ------------------------------------------

def epr_reid_product(delta_min_u: float, delta_min_ku: float) -> tuple[float, bool]:
    """Product of inferred uncertainties and whether it violates the 1/2 bound."""
    if delta_min_u <= 0 or delta_min_ku <= 0:
        raise ValueError("uncertainties must be > 0")
    p = delta_min_u * delta_min_ku
    return p, p < EPR_BOUND


def eof_lower_bound(delta_minus_u: float, delta_plus_ku: float) -> float:
    """Entanglement-of-formation lower bound, ``-log2(e * dx_minus * dk_plus)``."""
    if delta_minus_u <= 0 or delta_plus_ku <= 0:
        raise ValueError("uncertainties must be > 0")
    return -math.log2(math.e * delta_minus_u * delta_plus_ku)


def dimension_bound(eof: float) -> float:
    return 2.0 ** eof


# -- minimum inferred uncertainty --------------------------------------------------------

@dataclass
class ColumnFit:
    ref: int
    weight: float
    width_px: float
    included: bool


@dataclass
class DeltaMin:
    value: float
    value_px: float
    columns: list[ColumnFit] = field(default_factory=list)
    roi: tuple[float, float] | None = None  # reference-column range in pixels

    @property
    def n_included(self) -> int:
        return sum(c.included for c in self.columns)


def delta_min(j: Jpd, axis: str, optics: OpticsConfig | None = None, min_counts: int = 100,
              binning_correction: bool = False, significance: float = 5.0,
              roi_sigma: float | None = 2.0) -> DeltaMin:
    """Marginal-weighted quadratic mean of conditional widths along one axis.

    The Jpd is collapsed to counts ``H[u1, u2]`` (other axis summed); each
    Left column ``u1`` is a reference and the Right profile ``H[u1, :]`` is
    fitted with a 1D Gaussian. A column enters when its fitted peak holds at
    least ``min_counts`` counts and stands ``significance`` sigma above the
    fitted offset; weights are the column totals, renormalised over the
    included columns.

    With ``roi_sigma`` set, reference columns are further limited to the
    illuminated region, ``roi_sigma`` fitted widths around the centre of
    the Left marginal. Columns outside it hold only uncorrelated
    coincidences when the sensor has uniform dark counts.
    """
    optics = optics or j.optics
    H = axis_histogram(j, axis)
    totals = H.sum(axis=1)
    roi = None
    if roi_sigma is not None and totals.any():
        m = fit_gaussian1d(totals)
        if m.converged:
            roi = (m.center - roi_sigma * m.width, m.center + roi_sigma * m.width)
    cols = []
    for u1 in np.flatnonzero(totals >= min_counts):
        try:
            f = fit_gaussian1d(H[u1])
        except FitError:
            continue
        ok = (f.converged and f.content >= min_counts
              and f.amplitude > significance * math.sqrt(max(f.offset, 1.0)))
        if roi is not None:
            ok = ok and roi[0] <= u1 <= roi[1]
        cols.append(ColumnFit(int(u1), float(totals[u1]), f.width, bool(ok)))
    inc = [c for c in cols if c.included]
    if not inc:
        raise AnalysisError(f"no {axis}-column with >= {min_counts} counts and a resolved peak")
    w = np.array([c.weight for c in inc])
    s2 = np.array([c.width_px ** 2 for c in inc])
    var = float((w * s2).sum() / w.sum())
    width = math.sqrt(var)
    if binning_correction:
        rho = correlation_slope(j, axis)
        width = unbin_width(width, 1.0 + rho ** 2)
    return DeltaMin(float(pixel_to_physical(optics, width)), width, cols, roi)


# -- reports -------------------------------------------------------------------------

# (key, label, unit) in the order of the published table
QUANTITIES = [
    ("cond_kx", "Delta[k_x2|k_x1]", "1/m"),
    ("cond_ky", "Delta[k_y2|k_y1]", "1/m"),
    ("cond_x", "Delta[x2|x1]", "m"),
    ("cond_y", "Delta[y2|y1]", "m"),
    ("min_kx", "Delta_min[k_x]", "1/m"),
    ("min_x", "Delta_min[x]", "m"),
    ("min_ky", "Delta_min[k_y]", "1/m"),
    ("min_y", "Delta_min[y]", "m"),
    ("plus_kx", "Delta[k_x2+k_x1]", "1/m"),
    ("minus_x", "Delta[x2-x1]", "m"),
    ("plus_ky", "Delta[k_y2+k_y1]", "1/m"),
    ("minus_y", "Delta[y2-y1]", "m"),
    ("product_x", "Delta_min[x]*Delta_min[k_x]", ""),
    ("product_y", "Delta_min[y]*Delta_min[k_y]", ""),
    ("eof_x", "Lower bound E_x", "ebit"),
    ("eof_y", "Lower bound E_y", "ebit"),
    ("dim_x", "Lower bound d_x", ""),
    ("dim_y", "Lower bound d_y", ""),
    ("dim_x_floor", "Conservative d_x (floor)", ""),
    ("dim_y_floor", "Conservative d_y (floor)", ""),
    ("dim_total", "d_x + d_y", ""),
    ("dim_total_floor", "floor(d_x) + floor(d_y)", ""),
]
WIDTH_KEYS = [k for k, _, _ in QUANTITIES[:12]]
FLAG_KEYS = ["violated_x", "violated_y", "certified_x", "certified_y"]
DIM_RULE = "total dimension reported as d_x + d_y, and as floor(d_x) + floor(d_y)"

# published widths (m, 1/m)
TABLE1_WIDTHS = {
    "cond_kx": 3.5e3, "cond_ky": 3.1e3, "cond_x": 1.0e-5, "cond_y": 9.7e-6,
    "min_kx": 3.217e3, "min_x": 1.03e-5, "min_ky": 3.351e3, "min_y": 1.09e-5,
    "plus_kx": 3.82e3, "minus_x": 1.17e-5, "plus_ky": 4.07e3, "minus_y": 1.28e-5,
}


def derived_quantities(w: Mapping[str, float]) -> dict[str, float]:
    """Products, EoF and dimension bounds from the twelve widths."""
    out = {}
    for ax in ("x", "y"):
        out[f"product_{ax}"] = w[f"min_{ax}"] * w[f"min_k{ax}"]
        e = eof_lower_bound(w[f"minus_{ax}"], w[f"plus_k{ax}"])
        out[f"eof_{ax}"] = e
        out[f"dim_{ax}"] = dimension_bound(e)
        out[f"dim_{ax}_floor"] = float(math.floor(out[f"dim_{ax}"]))
    out["dim_total"] = out["dim_x"] + out["dim_y"]
    out["dim_total_floor"] = out["dim_x_floor"] + out["dim_y_floor"]
    return out


@dataclass
class CertificationReport:
    """Widths, EPR products, EoF and dimension bounds with 5-sigma errors."""

    values: dict[str, float]
    errors: dict[str, float] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)
    info: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_widths(cls, widths: Mapping[str, float], errors: Mapping[str, float] | None = None,
                    info: Mapping[str, str] | None = None) -> "CertificationReport":
        values = {k: float(widths.get(k, float("nan"))) for k in WIDTH_KEYS}
        values.update(derived_quantities(values))
        flags = {}
        for ax in ("x", "y"):
            flags[f"violated_{ax}"] = bool(values[f"product_{ax}"] < EPR_BOUND)
            flags[f"certified_{ax}"] = bool(values[f"eof_{ax}"] > 0)
        info = dict(info or {})
        info.setdefault("dimension_rule", DIM_RULE)
        return cls(values, dict(errors or {}), flags, info)

    def __getitem__(self, key):
        return self.values[key]

    # flat key-value form
    def to_flat(self) -> dict:
        flat: dict = {}
        for k, _, _ in QUANTITIES:
            flat[k] = self.values.get(k, float("nan"))
            if k in self.errors:
                flat[f"{k}.err5"] = self.errors[k]
        for k in FLAG_KEYS:
            if k in self.flags:
                flat[k] = self.flags[k]
        for k, v in self.flags.items():
            if k not in FLAG_KEYS:
                flat[k] = v
        for k, v in self.info.items():
            flat[f"info.{k}"] = v
        return flat

    @classmethod
    def from_flat(cls, flat: Mapping) -> "CertificationReport":
        known = {k for k, _, _ in QUANTITIES}
        values, errors, flags, info = {}, {}, {}, {}
        for k, v in flat.items():
            if k in known:
                values[k] = float(v)
            elif k.endswith(".err5") and k[:-5] in known:
                errors[k[:-5]] = float(v)
            elif k.startswith("info."):
                info[k[5:]] = str(v)
            elif isinstance(v, bool):
                flags[k] = v
            else:
                log.warning("unknown report key %r ignored", k)
        return cls(values, errors, flags, info)

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_flat(), fh, indent=1)

    @classmethod
    def load_json(cls, path) -> "CertificationReport":
        with open(path) as fh:
            return cls.from_flat(json.load(fh))

    def to_text(self) -> str:
        """Human-readable report; ``parse_report_text`` inverts it."""
        lines = ["# entanglement quantification report",
                 "# errors are 5 sigma from Monte-Carlo resampling"]
        for k, label, unit in QUANTITIES:
            v = self.values.get(k, float("nan"))
            e = self.errors.get(k)
            shown = _paren(v, e)
            lines.append(f"{k} = {v!r}" + (f" +- {e!r}" if e is not None else "")
                         + f"    # {label}: {shown} {unit}".rstrip())
        for k, v in self.flags.items():
            lines.append(f"{k} = {v}")
        for k, v in self.info.items():
            lines.append(f"info.{k} = {json.dumps(v)}")
        return "\n".join(lines) + "\n"


def _paren(v: float, e: float | None) -> str:
    """Format like 3.03(2): the error applies to the last digit shown."""
    if not np.isfinite(v):
        return "nan"
    if e is None or not np.isfinite(e) or e <= 0:
        return f"{v:.4g}"
    exp = math.floor(math.log10(e))
    digits = max(-exp, 0)
    err_digit = int(round(e / 10 ** exp))
    if err_digit == 10:
        exp += 1
        digits = max(-exp, 0)
        err_digit = 1
    if abs(v) >= 1e4 or (abs(v) < 1e-2 and v != 0):
        scale = 10 ** math.floor(math.log10(abs(v)))
        return f"{_paren(v / scale, e / scale)}e{int(math.log10(scale))}"
    if exp > 0:
        # error above the units digit: round the value and spell the error out
        return f"{round(v / 10 ** exp) * 10 ** exp:.0f}({err_digit * 10 ** exp})"
    return f"{v:.{digits}f}({err_digit})"


def parse_report_text(text: str) -> CertificationReport:
    flat: dict = {}
    for raw in text.splitlines():
        line = raw.split("    #", 1)[0].strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition(" = ")
        key, val = key.strip(), val.strip()
        if key.startswith("info."):
            flat[key] = json.loads(val)
        elif val in ("True", "False"):
            flat[key] = val == "True"
        elif " +- " in val:
            v, e = val.split(" +- ")
            flat[key] = float(v)
            flat[f"{key}.err5"] = float(e)
        else:
            try:
                flat[key] = float(val)
            except ValueError:
                log.warning("unparseable report line %r ignored", raw)
    return CertificationReport.from_flat(flat)


# -- Monte-Carlo errors -------------------------------------------------------------

@dataclass
class MonteCarloResult:
    sigma: dict[str, float]
    samples: dict[str, np.ndarray]
    n_failed: dict[str, int]

    @property
    def five_sigma(self) -> dict[str, float]:
        return {k: 5.0 * v for k, v in self.sigma.items()}


def poisson_resample(j: Jpd, rng: np.random.Generator) -> Jpd:
    return j.with_counts(rng.poisson(j.counts))


def monte_carlo_errors(jpds: Jpd | Sequence[Jpd], estimator: Callable[..., Mapping[str, float]],
                       n_trials: int = 100, seed: int = 0, resample: bool = True,
                       max_failure_frac: float = 0.2) -> MonteCarloResult:
    """Parametric bootstrap: redraw every bin as Poisson(count) and re-estimate.

    Parameters
    ----------
    jpds : Jpd or sequence of Jpd
        Passed positionally to ``estimator`` after resampling.
    estimator : callable
        Returns a mapping of named estimates; exceptions or NaN count as
        failures for that trial.
    n_trials : int
        Number of resampled experiments, at least 2.
    seed : int
        Trial ``i`` uses a generator spawned from ``SeedSequence(seed)``.

    Returns
    -------
    MonteCarloResult
        ``sigma`` is the sample standard deviation across trials.
    """
    if n_trials < 2:
        raise ValueError("n_trials must be >= 2")
    if isinstance(jpds, Jpd):
        jpds = [jpds]
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_trials)]
    rows: list[Mapping[str, float] | None] = []
    for rng in rngs:
        trial = [poisson_resample(j, rng) if resample else j for j in jpds]
        try:
            rows.append(dict(estimator(*trial)))
        except (AnalysisError, ValueError, FloatingPointError) as exc:
            log.debug("monte-carlo trial failed: %s", exc)
            rows.append(None)
    keys = sorted({k for r in rows if r for k in r})
    if not keys:
        raise MonteCarloError("estimator failed in every trial")
    sigma, samples, failed = {}, {}, {}
    for k in keys:
        vals = np.array([r.get(k, np.nan) if r else np.nan for r in rows], dtype=float)
        good = vals[np.isfinite(vals)]
        failed[k] = int(n_trials - good.size)
        if failed[k] > max_failure_frac * n_trials:
            raise MonteCarloError(f"estimator {k!r} failed in {failed[k]}/{n_trials} trials")
        samples[k] = good
        # shifted so identical trials give exactly zero
        sigma[k] = float(np.std(good - good[0], ddof=1)) if good.size > 1 else 0.0
    return MonteCarloResult(sigma, samples, failed)


# -- certification ----------------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisParams:
    min_counts: int = 100
    n_trials: int = 100
    seed: int = 0
    binning_correction: bool = True
    roi_sigma: float | None = 2.0
    cond_ref: tuple[int, int] | None = None  # Left pixel; None -> marginal peak


def _projection_widths(p: Projection, n_roundings: float, correct: bool):
    f = fit_gaussian2d(p)
    if not f.converged:
        raise AnalysisError(f"{p.kind} projection fit did not converge")
    if not correct:
        return f.widths
    return tuple(unbin_width(s, n_roundings) for s in f.widths)


def measure_widths(jpd_nf: Jpd, jpd_ff: Jpd, params: AnalysisParams = AnalysisParams()
                   ) -> dict[str, float]:
    """All twelve widths in physical units, plus derived quantities."""
    out: dict[str, float] = {}
    corr = params.binning_correction
    for j, pre in ((jpd_nf, ""), (jpd_ff, "k")):
        scale = j.optics.scale
        for ax in ("x", "y"):
            out[f"min_{pre}{ax}"] = delta_min(j, ax, min_counts=params.min_counts,
                                              binning_correction=corr,
                                              roi_sigma=params.roi_sigma).value
        ref = params.cond_ref
        if ref is None:
            m = marginal(j, Half.LEFT).grid
            ref = np.unravel_index(int(np.argmax(m)), m.shape)
        try:
            f = fit_gaussian2d(conditional(j, ref))
            rho = [correlation_slope(j, "x"), correlation_slope(j, "y")] if corr else [0, 0]
            for i, ax in enumerate(("x", "y")):
                s = unbin_width(f.widths[i], 1 + rho[i] ** 2) if corr else f.widths[i]
                out[f"cond_{pre}{ax}"] = s * scale if f.converged else float("nan")
        except AnalysisError:
            for ax in ("x", "y"):
                out[f"cond_{pre}{ax}"] = float("nan")
        if j.basis is Basis.NF:
            wx, wy = _projection_widths(minus_projection(j), 2, corr)
            out["minus_x"], out["minus_y"] = wx * scale, wy * scale
        else:
            wx, wy = _projection_widths(sum_projection(j), 2, corr)
            out["plus_kx"], out["plus_ky"] = wx * scale, wy * scale
    out.update(derived_quantities(out))
    return out


def certify(jpd_nf: Jpd, jpd_ff: Jpd, params: AnalysisParams = AnalysisParams(),
            provenance: Mapping[str, str] | None = None) -> CertificationReport:
    """Measure all widths on a near-field and a far-field Jpd and assemble the report."""
    if jpd_nf.basis is not Basis.NF or jpd_ff.basis is not Basis.FF:
        raise AnalysisError("certify needs one NF and one FF Jpd")
    try:
        widths = measure_widths(jpd_nf, jpd_ff, params)
    except AnalysisError as exc:
        raise AnalysisError(f"width measurement failed: {exc}") from exc
    errors = {}
    if params.n_trials >= 2:
        # quantities that already failed on the data carry no error bar
        finite = [k for k, v in widths.items() if np.isfinite(v)]

        def estimator(a, b):
            w = measure_widths(a, b, params)
            return {k: w[k] for k in finite}
        mc = monte_carlo_errors([jpd_nf, jpd_ff], estimator,
                                n_trials=params.n_trials, seed=params.seed)
        # floored dimensions are step functions of E; their spread is not an error bar
        errors = {k: v for k, v in mc.five_sigma.items() if not k.endswith("_floor")}
    info = dict(provenance or {})
    info["nf_total_pairs"] = str(jpd_nf.total_pairs)
    info["ff_total_pairs"] = str(jpd_ff.total_pairs)
    rep = CertificationReport.from_widths(widths, errors, info)
    for j, pre in ((jpd_nf, ""), (jpd_ff, "k")):
        for ax in ("x", "y"):
            for kind in ("min", "cond"):
                v = widths.get(f"{kind}_{pre}{ax}", float("nan"))
                rep.flags[f"subpixel_{kind}_{pre}{ax}"] = bool(v < j.optics.scale)
    return rep


def table1_report() -> CertificationReport:
    """Report built directly from the published widths (no fitting)."""
    return CertificationReport.from_widths(TABLE1_WIDTHS, info={"source": "published-widths"})
