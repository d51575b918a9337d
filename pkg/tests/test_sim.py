import math

import numpy as np
import pytest

from conftest import IDEAL
from entcam.events import SENSOR_SIZE, Basis, OpticsConfig
from entcam.pipeline import find_coincidences, reconstruct, timewalk_correct
from entcam.sim import (DetectorParams, SourceParams, accidental_rate_per_pixel_pair,
                        conditional_width, dark_rate_for_accidentals, detector_response,
                        expected_coincidences, pure_state_widths, sample_pairs, simulate,
                        simulate_stream, theory_report, theory_widths, tune_pair_rate)

NF, FF = OpticsConfig(Basis.NF), OpticsConfig(Basis.FF)


def fft_oracle_widths(sigma_sum, sigma_diff, n=2048):
    """Momentum widths std(k1 + k2), std(k1 - k2) of a sampled double-Gaussian wavefunction."""
    L = 8 * max(sigma_sum, sigma_diff)
    x = (np.arange(n) - n // 2) * (L / n)
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    psi = np.exp(-(x1 + x2) ** 2 / (4 * sigma_sum ** 2) - (x1 - x2) ** 2 / (4 * sigma_diff ** 2))
    p = np.abs(np.fft.fft2(psi)) ** 2
    k = 2 * np.pi * np.fft.fftfreq(n, L / n)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    p /= p.sum()
    ks, kd = k1 + k2, k1 - k2
    return (math.sqrt((p * ks ** 2).sum() - (p * ks).sum() ** 2),
            math.sqrt((p * kd ** 2).sum() - (p * kd).sum() ** 2))


# -- source --------------------------------------------------------------------------

def test_sample_zero_pairs():
    assert sample_pairs(SourceParams(), Basis.NF, 0, 1).shape == (0, 2, 2)


def test_sample_negative_rejected():
    with pytest.raises(ValueError):
        sample_pairs(SourceParams(), Basis.NF, -1)


def test_sample_moments():
    src = SourceParams.pure(1e-3, 1e-5)
    u = sample_pairs(src, Basis.NF, 10 ** 5, seed=1)
    for ax in (0, 1):
        assert np.std(u[:, 0, ax] + u[:, 1, ax]) == pytest.approx(1e-3, rel=0.01)
        assert np.std(u[:, 0, ax] - u[:, 1, ax]) == pytest.approx(1e-5, rel=0.01)


def test_sample_moments_within_three_standard_errors():
    src = SourceParams()
    n = 10 ** 5
    k = sample_pairs(src, Basis.FF, n, seed=2)
    se = 1 / math.sqrt(2 * n)  # relative standard error of a sample std
    assert abs(np.std(k[:, 0, 0] + k[:, 1, 0]) / src.kappa_sum_inv_m - 1) < 3 * se
    assert abs(np.std(k[:, 0, 1] - k[:, 1, 1]) / src.kappa_diff_inv_m - 1) < 3 * se


def test_conditional_std_covariance_oracle():
    ss, sd = 1e-3, 1e-5
    u = sample_pairs(SourceParams.pure(ss, sd), Basis.NF, 10 ** 5, seed=3)
    a, b = u[:, 0, 0], u[:, 1, 0]
    c = np.cov(a, b)
    resid = a - c[0, 1] / c[1, 1] * b
    want = ss * sd / math.sqrt(ss ** 2 + sd ** 2)
    assert np.std(resid) == pytest.approx(want, rel=0.02)
    assert conditional_width(ss, sd) == pytest.approx(want, rel=1e-12)


def test_separable_has_no_correlation():
    u = sample_pairs(SourceParams(separable=True), Basis.NF, 50_000, seed=4)
    assert abs(np.corrcoef(u[:, 0, 0], u[:, 1, 0])[0, 1]) < 0.02


def test_pure_state_symmetry_and_equality():
    a, b = pure_state_widths(2e-4, 3e-6)
    assert pure_state_widths(3e-6, 2e-4) == (b, a)
    ks, kd = pure_state_widths(5e-5, 5e-5)
    assert ks == kd


def test_pure_state_fft_oracle():
    ks, kd = fft_oracle_widths(1e-3, 1e-5)
    want = pure_state_widths(1e-3, 1e-5)
    assert ks == pytest.approx(want[0], rel=0.02)
    assert kd == pytest.approx(want[1], rel=0.02)


def test_pure_state_rejects_nonpositive():
    with pytest.raises(ValueError):
        pure_state_widths(0.0, 1e-5)


def test_params_validation():
    with pytest.raises(ValueError):
        DetectorParams(quantum_efficiency=1.2)
    with pytest.raises(ValueError):
        DetectorParams(dead_time_ps=-1)
    with pytest.raises(ValueError):
        SourceParams(pair_rate_hz=0)


# -- detector ------------------------------------------------------------------------

def one_pair_response(det):
    return detector_response(np.zeros((1, 2, 2)), np.array([10 ** 6]), NF, det, seed=1,
                             random_split=False)


def test_single_pair_gives_two_linked_clusters():
    det = DetectorParams(quantum_efficiency=1.0, dark_rate_hz_per_px=0.0, time_jitter_fwhm_ps=0.0)
    hits, truth, stats = one_pair_response(det)
    ev = reconstruct(hits)
    assert len(ev) == 2 and stats.photons_detected == 2
    uid = truth.hit_photon[ev["seed_hit"]]
    assert sorted(uid.tolist()) == [0, 1]
    assert sorted(ev["half"].tolist()) == [0, 1]


def test_zero_efficiency_gives_only_dark_hits():
    det = DetectorParams(quantum_efficiency=0.0, dark_rate_hz_per_px=50.0)
    hits, truth, stats = simulate(SourceParams(pair_rate_hz=1e5), det, FF, 0.01, seed=2)
    assert stats.photons_detected == 0 and len(hits) > 0
    assert np.all(truth.hit_photon == -1)
    assert stats.dark_hits == pytest.approx(50 * SENSOR_SIZE ** 2 * 0.01, rel=0.05)


def test_determinism():
    det = DetectorParams(dark_rate_hz_per_px=5.0)
    a = simulate(SourceParams(pair_rate_hz=1e5), det, NF, 0.02, seed=7, chunk_s=0.007)
    b = simulate(SourceParams(pair_rate_hz=1e5), det, NF, 0.02, seed=7, chunk_s=0.007)
    assert a[0].tobytes() == b[0].tobytes()
    assert np.array_equal(a[1].hit_photon, b[1].hit_photon)
    c = simulate(SourceParams(pair_rate_hz=1e5), det, NF, 0.02, seed=8, chunk_s=0.007)
    assert a[0].tobytes() != c[0].tobytes()


def test_stream_output_is_time_sorted_across_chunks():
    det = DetectorParams(dark_rate_hz_per_px=5.0)
    hits, _, _ = simulate(SourceParams(pair_rate_hz=2e5), det, NF, 0.03, seed=3, chunk_s=0.004)
    assert np.all(np.diff(hits["toa_ps"].astype(np.int64)) >= 0)


def test_quantum_efficiency_monotone():
    src = SourceParams(pair_rate_hz=2e5)
    detected = []
    for qe in (1.0, 0.6, 0.2, 0.0):
        det = DetectorParams(quantum_efficiency=qe, dark_rate_hz_per_px=0.0)
        _, truth, stats = simulate(src, det, FF, 0.01, seed=4)
        detected.append(set(np.flatnonzero(truth.photons["status"] == 0).tolist()))
    for hi, lo in zip(detected, detected[1:]):
        assert lo <= hi


def test_dead_time_respected():
    det = DetectorParams(dark_rate_hz_per_px=2000.0, dead_time_ps=1_000_000)
    hits, _, stats = simulate(SourceParams(pair_rate_hz=5e5), det, NF, 0.01, seed=5,
                              chunk_s=0.003)
    pix = hits["x"].astype(np.int64) * SENSOR_SIZE + hits["y"]
    order = np.lexsort((hits["toa_ps"], pix))
    p, t = pix[order], hits["toa_ps"][order].astype(np.int64)
    same = p[1:] == p[:-1]
    assert stats.dead_time_dropped > 0
    assert np.all(np.diff(t)[same] >= det.dead_time_ps)


def test_truth_links_bounded():
    hits, truth, stats = simulate(SourceParams(), DetectorParams(), FF, 0.02, seed=6)
    linked = np.unique(truth.hit_photon[truth.hit_photon >= 0])
    assert linked.size <= 2 * stats.pairs_emitted
    assert truth.n_pairs == stats.pairs_emitted
    assert stats.hits_written == len(hits) == truth.hit_photon.size


def test_truth_save_format(tmp_path):
    _, truth, _ = one_pair_response(IDEAL)
    truth.save(tmp_path / "t.csv", tmp_path / "l.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("pair_id,photon_idx,u_m,v_m,t_ps")
    assert len(lines) == 3
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "hit_index,pair_id,photon_idx"


def test_chunking_policy_keeps_truth_ids_global():
    chunks = list(simulate_stream(SourceParams(pair_rate_hz=1e5), IDEAL, NF, 0.01, seed=1,
                                  chunk_s=0.004))
    assert len(chunks) == 3
    ids = np.concatenate([t.photons["pair_id"] for _, t, _ in chunks])
    assert np.array_equal(ids, np.repeat(np.arange(ids.size // 2), 2))


# -- analytic expectations -----------------------------------------------------------

def test_theory_separable_not_entangled():
    rep = theory_report(SourceParams(separable=True))
    for ax in ("x", "y"):
        assert rep[f"product_{ax}"] >= 0.5
        assert rep[f"eof_{ax}"] <= 0


def test_theory_table_widths_give_eof():
    rep = theory_report(SourceParams.from_eof_widths(1.17e-5, 3.82e3))
    want = -math.log2(math.e * 1.17e-5 * 3.82e3)
    assert rep["eof_x"] == pytest.approx(want, rel=1e-12)
    assert rep["eof_x"] == pytest.approx(3.04, abs=0.005)


def test_theory_scaling_adds_two_ebits():
    base = SourceParams.pure(1e-3, 1e-5)
    wide = SourceParams.pure(2e-3, 0.5e-5)
    assert theory_report(wide)["eof_x"] - theory_report(base)["eof_x"] == pytest.approx(2.0)


def test_theory_entangled_state_beats_epr_bound():
    w = theory_widths(SourceParams())
    assert w["min_x"] * w["min_kx"] < 0.5


def test_expected_coincidences_and_tuning():
    det = DetectorParams()
    rate = tune_pair_rate(1.4e6, det, 200.0)
    src = SourceParams(pair_rate_hz=rate)
    assert expected_coincidences(src, det, 200.0) == pytest.approx(1.4e6)


def test_accidental_rate_low_rate_limit():
    # without competition the rate is 2 r^2 window
    got = accidental_rate_per_pixel_pair(10.0, 6000, 0.0, 0.0)
    assert got == pytest.approx(2 * 100 * 6e-9)


def test_dark_rate_inversion():
    r = dark_rate_for_accidentals(1.4e-4, 6000)
    rate = r * SENSOR_SIZE ** 2 / 2
    assert accidental_rate_per_pixel_pair(r, 6000, rate, rate) == pytest.approx(1.4e-4, rel=1e-9)


def test_greedy_accidentals_match_model_on_dark_only_stream():
    # dark hits only: every coincidence is accidental
    r = 200.0
    det = DetectorParams(quantum_efficiency=0.0, dark_rate_hz_per_px=r, tick_ps=1.0,
                         dead_time_ps=0)
    hits, _, _ = simulate(SourceParams(pair_rate_hz=1.0), det, NF, 0.05, seed=9)
    ev = timewalk_correct(reconstruct(hits), det.timewalk_coeff_ps)
    pairs, _ = find_coincidences(ev)
    rate_half = r * SENSOR_SIZE ** 2 / 2
    # clusters of adjacent dark hits are rare at this rate
    per = accidental_rate_per_pixel_pair(r, 6000, rate_half, rate_half)
    want = per * (SENSOR_SIZE ** 2 / 2) ** 2 * 0.05
    assert abs(len(pairs) - want) < 4 * math.sqrt(want)
