import numpy as np
import pytest

from entcam.events import HIT_DTYPE, PAIR_DTYPE, Basis, OpticsConfig
from entcam.sim import HALF_CENTERS, DetectorParams, SourceParams, sample_pairs

# detector with every photon detected and no dark counts
IDEAL = DetectorParams(quantum_efficiency=1.0, dark_rate_hz_per_px=0.0)


def truth_level_pairs(src: SourceParams, basis, n: int, seed=0) -> np.ndarray:
    """Pairs placed at their exact landing positions, Left photon first."""
    opt = OpticsConfig(Basis(basis))
    uv = sample_pairs(src, basis, n, seed) / opt.scale
    p = np.zeros(n, PAIR_DTYPE)
    p["cx1"] = HALF_CENTERS[0][0] + uv[:, 0, 0]
    p["cy1"] = HALF_CENTERS[0][1] + uv[:, 0, 1]
    p["cx2"] = HALF_CENTERS[1][0] + uv[:, 1, 0]
    p["cy2"] = HALF_CENTERS[1][1] + uv[:, 1, 1]
    return p


def make_hits(rows) -> np.ndarray:
    rows = sorted(rows, key=lambda r: r[2])
    h = np.empty(len(rows), HIT_DTYPE)
    for i, name in enumerate(HIT_DTYPE.names):
        h[name] = [r[i] for r in rows]
    return h


# acceptance verdicts, printed after the run
VERDICTS: dict[str, tuple[bool, str]] = {}


def record(key: str, ok: bool, detail: str) -> None:
    VERDICTS[key] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS):
        ok, detail = VERDICTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")


@pytest.fixture(scope="session")
def table1_source():
    return SourceParams.from_eof_widths(1.17e-5, 3.82e3)
