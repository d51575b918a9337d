"""Flat dotted-key run configuration.

Precedence, highest first: explicit overrides (command-line flags), the
JSON config file, ``ENTCAM_*`` environment variables, built-in defaults.
The environment name of ``detector.dark_rate_hz_per_px`` is
``ENTCAM_DETECTOR__DARK_RATE_HZ_PER_PX``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Mapping

from .analysis import AnalysisParams
from .events import Basis, OpticsConfig
from .pipeline import ClusterParams, PairingParams
from .sim import DetectorParams, SourceParams

ENV_PREFIX = "ENTCAM_"


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class RunParams:
    seed: int = 0
    basis: Basis = Basis.FF
    duration_s: float = 1.0
    chunk_s: float = 0.5
    # "estimate" or a coefficient in ps
    timewalk: str = "estimate"
    binary_chunk_records: int = 1 << 20
    # records read before processing starts, for the timewalk estimate
    timewalk_sample_records: int = 4_000_000
    write_truth: bool = True


SECTIONS: dict[str, type] = {
    "source": SourceParams,
    "detector": DetectorParams,
    "optics": OpticsConfig,
    "cluster": ClusterParams,
    "pairing": PairingParams,
    "analysis": AnalysisParams,
    "run": RunParams,
}

NOTES = {
    "source.sigma_sum_m": "std of x1+x2 at the crystal; default 1/3.82e3 m (pure state)",
    "source.sigma_diff_m": "std of x1-x2; default 11.7 um (published NF width)",
    "source.kappa_sum_inv_m": "std of k1+k2; default 3.82e3 1/m (published FF width)",
    "source.kappa_diff_inv_m": "std of k1-k2; default 1/11.7 um",
    "source.pair_rate_hz": "tuned for about 1.4e6 FF coincidences in 200 s",
    "detector.quantum_efficiency": "about 20 %",
    "detector.dead_time_ps": "about 1 us",
    "detector.time_jitter_fwhm_ps": "pair time-difference FWHM, about 6 ns",
    "detector.tick_ps": "1.56 ns ToA resolution",
    "optics.pixel_pitch_m": "55 um pixels",
    "optics.magnification_nf": "crystal imaged with x10",
    "optics.f_eff_m": "75 mm Fourier lens",
    "optics.wavelength_m": "810 nm degenerate photons",
    "pairing.coincidence_window_ps": "6 ns",
}


def defaults() -> dict[str, Any]:
    out = {}
    for sec, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            if sec == "optics" and f.name == "basis":
                continue  # taken from run.basis
            v = f.default
            if isinstance(v, Basis):
                v = v.value
            out[f"{sec}.{f.name}"] = v
    return out


def _coerce(key: str, value: Any, default: Any) -> Any:
    if value is None:
        return None
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if isinstance(default, float):
            return float(value)
        if default is None or isinstance(default, tuple):
            if isinstance(value, str):
                value = json.loads(value)
            return None if value is None else tuple(int(v) for v in value)
        return str(value)
    except (TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    known = {k.upper().replace(".", "__"): k for k in defaults()}
    out = {}
    for name, v in environ.items():
        if name.startswith(ENV_PREFIX):
            key = known.get(name[len(ENV_PREFIX):])
            if key is None:
                raise ConfigError(f"unknown environment override {name}")
            out[key] = v
    return out


def load_file(path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a flat JSON object")
    return data


@dataclasses.dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any]

    @classmethod
    def build(cls, file: Mapping[str, Any] | None = None,
              overrides: Mapping[str, Any] | None = None,
              environ: Mapping[str, str] | None = None) -> "RunConfig":
        base = defaults()
        merged = dict(base)
        for layer in (env_overrides(environ), file or {}, overrides or {}):
            for k, v in layer.items():
                if k not in base:
                    raise ConfigError(f"unknown config key {k!r}")
                merged[k] = _coerce(k, v, base[k])
        cfg = cls(merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_sources(cls, path=None, overrides=None, environ=None) -> "RunConfig":
        return cls.build(load_file(path) if path else None, overrides, environ)

    def section(self, name: str) -> dict[str, Any]:
        pre = name + "."
        return {k[len(pre):]: v for k, v in self.values.items() if k.startswith(pre)}

    def validate(self) -> None:
        for name in SECTIONS:
            try:
                self.build_section(name)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {name} parameters: {exc}") from exc
        tw = self.values["run.timewalk"]
        if tw != "estimate":
            try:
                float(tw)
            except ValueError as exc:
                raise ConfigError("run.timewalk must be 'estimate' or a number") from exc

    def build_section(self, name: str):
        kw = self.section(name)
        if name == "run":
            kw["basis"] = Basis(kw["basis"])
        if name == "optics":
            kw["basis"] = Basis(self.values["run.basis"])
        return SECTIONS[name](**kw)

    @property
    def source(self) -> SourceParams:
        return self.build_section("source")

    @property
    def detector(self) -> DetectorParams:
        return self.build_section("detector")

    @property
    def optics(self) -> OpticsConfig:
        return self.build_section("optics")

    @property
    def cluster(self) -> ClusterParams:
        return self.build_section("cluster")

    @property
    def pairing(self) -> PairingParams:
        return self.build_section("pairing")

    @property
    def analysis(self) -> AnalysisParams:
        return self.build_section("analysis")

    @property
    def run(self) -> RunParams:
        return self.build_section("run")

    def to_json(self) -> str:
        return json.dumps(dict(sorted(self.values.items())), indent=2, sort_keys=True)

    def hash(self) -> str:
        canon = json.dumps(dict(sorted(self.values.items())), sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def describe_defaults() -> str:
    lines = []
    for k, v in defaults().items():
        note = NOTES.get(k)
        lines.append(f"  {k} = {v!r}" + (f"  ({note})" if note else ""))
    return "\n".join(lines)
