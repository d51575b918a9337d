import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import truth_level_pairs
from entcam.analysis import fit_gaussian2d, unbin_width, correlation_slope
from entcam.events import PAIR_DTYPE, Basis, Half, OpticsConfig
from entcam.jpd import (EmptyConditionalError, Jpd, JpdError, accidental_rate, accumulate,
                        axis_histogram, conditional, marginal, merge, minus_projection, pack,
                        round_half_away, sum_projection, unpack)
from entcam.sim import SourceParams, theory_widths


def pairs_at(*rows):
    p = np.zeros(len(rows), PAIR_DTYPE)
    for i, (x1, y1, x2, y2) in enumerate(rows):
        p[i]["cx1"], p[i]["cy1"], p[i]["cx2"], p[i]["cy2"] = x1, y1, x2, y2
    return p


def random_jpd(seed, n=200, basis=Basis.NF):
    rng = np.random.default_rng(seed)
    return Jpd.from_bins(rng.integers(0, 128, n), rng.integers(0, 256, n),
                         rng.integers(128, 256, n), rng.integers(0, 256, n),
                         rng.integers(1, 5, n), basis=basis)


def same(a: Jpd, b: Jpd) -> bool:
    return (np.array_equal(a.keys, b.keys) and np.array_equal(a.counts, b.counts)
            and a.basis is b.basis)


def test_pack_round_trip():
    k = pack([0, 255, 3], [1, 255, 4], [2, 255, 5], [3, 255, 6])
    assert k.dtype == np.uint64
    assert [list(a) for a in unpack(k)] == [[0, 255, 3], [1, 255, 4], [2, 255, 5], [3, 255, 6]]


def test_round_half_away_from_zero():
    assert list(round_half_away([0.5, 1.5, 2.5, -0.5, 10.2, 200.7])) == [1, 2, 3, -1, 10, 201]


def test_empty_stream():
    j = accumulate(np.zeros(0, PAIR_DTYPE))
    assert j.total_pairs == 0 and j.n_bins == 0


def test_single_pair_rounding():
    j = accumulate(pairs_at((10.2, 20.0, 200.7, 30.0)))
    assert j.n_bins == 1 and j.total_pairs == 1
    assert [int(a[0]) for a in j.coords()] == [10, 20, 201, 30]


def test_left_event_goes_first():
    j = accumulate(pairs_at((200.7, 30.0, 10.2, 20.0)))
    assert [int(a[0]) for a in j.coords()] == [10, 20, 201, 30]


def test_same_half_skipped_and_counted():
    j = accumulate(pairs_at((10, 10, 20, 20), (10, 10, 200, 20)))
    assert j.total_pairs == 1 and j.n_skipped == 1
    k = accumulate(pairs_at((10, 10, 20, 20)), cross_halves_only=False)
    assert k.total_pairs == 1 and k.n_skipped == 0


def test_counts_positive_and_total():
    j = random_jpd(1)
    assert np.all(j.counts >= 1)
    assert j.total_pairs == j.counts.sum()


def test_merge_identity():
    j = random_jpd(2)
    assert same(merge(j, Jpd.empty(Basis.NF)), j)


@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
@settings(max_examples=30, deadline=None)
def test_merge_commutative_associative(s1, s2, s3):
    a, b, c = random_jpd(s1, 50), random_jpd(s2, 50), random_jpd(s3, 50)
    assert same(merge(a, b), merge(b, a))
    assert same(merge(merge(a, b), c), merge(a, merge(b, c)))


def test_merge_metadata_mismatch():
    with pytest.raises(JpdError):
        merge(random_jpd(1), random_jpd(2, basis=Basis.FF))


def test_chunked_accumulate_equals_single_pass():
    p = truth_level_pairs(SourceParams(), Basis.NF, 5000, seed=3)
    whole = accumulate(p)
    parts = [accumulate(q) for q in np.array_split(p, 7)]
    m = parts[0]
    for q in parts[1:]:
        m = merge(m, q)
    assert same(m, whole)


def test_marginal_single_bin():
    j = Jpd.from_bins([5], [6], [200], [7], [4])
    g = marginal(j, Half.RIGHT).grid
    assert g[200, 7] == 4 and np.count_nonzero(g) == 1
    assert marginal(j, Half.LEFT).grid[5, 6] == 4


def test_projection_conservation():
    j = random_jpd(4, 500)
    for p in (marginal(j, Half.LEFT), marginal(j, Half.RIGHT), minus_projection(j),
              sum_projection(j)):
        assert p.grid.sum() == j.total_pairs
        assert p.grid.dtype.kind == "i"


def test_minus_and_sum_single_pair():
    j = Jpd.from_bins([10], [20], [12], [25])
    mp = minus_projection(j)
    ux, uy = mp.axes()
    i, k = np.argwhere(mp.grid)[0]
    assert (ux[i], uy[k]) == (-2, -5)
    assert mp.grid.shape == (511, 511) and ux[0] == -255 and ux[-1] == 255
    sp = sum_projection(j)
    sx, sy = sp.axes()
    i, k = np.argwhere(sp.grid)[0]
    assert (sx[i], sy[k]) == (22, 45)
    assert sx[0] == 0 and sx[-1] == 510


def test_swap_symmetry():
    j = random_jpd(5, 300)
    s = j.swapped()
    assert np.array_equal(minus_projection(s).grid, minus_projection(j).grid[::-1, ::-1])
    assert np.array_equal(sum_projection(s).grid, sum_projection(j).grid)


def test_conditional_single_target():
    j = Jpd.from_bins([10], [10], [150], [140], [7])
    c = conditional(j, (10, 10))
    assert c.grid[150, 140] == 1.0 and c.grid.sum() == 1.0


def test_conditional_normalised():
    j = random_jpd(6, 2000)
    px1, py1, *_ = j.coords()
    ref = (int(px1[0]), int(py1[0]))
    c = conditional(j, ref)
    assert c.grid.sum() == pytest.approx(1.0)
    assert c.ref == ref


def test_conditional_empty_ref():
    with pytest.raises(EmptyConditionalError):
        conditional(Jpd.from_bins([1], [1], [200], [1]), (2, 2))


def test_save_load_round_trip(tmp_path):
    j = random_jpd(7)
    j.acquisition_s = 12.5
    j.save(tmp_path / "j.csv")
    k = Jpd.load(tmp_path / "j.csv")
    assert same(j, k) and k.acquisition_s == 12.5 and k.optics == j.optics
    assert (tmp_path / "j.csv").read_text().splitlines()[0] == "px1,py1,px2,py2,count"


def test_save_empty(tmp_path):
    Jpd.empty(Basis.FF).save(tmp_path / "e.csv")
    k = Jpd.load(tmp_path / "e.csv")
    assert k.total_pairs == 0 and k.basis is Basis.FF


def test_projection_exports(tmp_path):
    j = random_jpd(8)
    p = minus_projection(j)
    p.save_txt(tmp_path / "m.txt")
    assert np.array_equal(np.loadtxt(tmp_path / "m.txt"), p.grid)
    p.save_pgm(tmp_path / "m.pgm")
    data = (tmp_path / "m.pgm").read_bytes()
    assert data.startswith(b"P5\n511 511\n255\n")
    assert len(data) == len(b"P5\n511 511\n255\n") + 511 * 511


def test_sparse_storage_scales_with_occupancy():
    j = random_jpd(9, 1000)
    assert j.keys.size <= 1000


def test_accidental_rate_counts_region():
    j = Jpd.from_bins([0, 1, 60], [0, 0, 0], [250, 251, 190], [0, 0, 0], [3, 1, 9],
                      acquisition_s=2.0)
    L = np.zeros((256, 256), bool)
    R = np.zeros((256, 256), bool)
    L[:16] = True
    R[240:] = True
    rate, sig = accidental_rate(j, L, R)
    assert rate == pytest.approx(4 / (L.sum() * R.sum() * 2.0))
    assert sig == pytest.approx(2 / (L.sum() * R.sum() * 2.0))


def test_axis_histogram_sums():
    j = random_jpd(10)
    assert axis_histogram(j, "x").sum() == j.total_pairs


@pytest.fixture(scope="module")
def nf_truth_jpd(table1_source):
    p = truth_level_pairs(table1_source, Basis.NF, 2_000_000, seed=11)
    return accumulate(p, Basis.NF, OpticsConfig(Basis.NF))


def test_nf_minus_width_matches_theory(nf_truth_jpd, table1_source):
    f = fit_gaussian2d(minus_projection(nf_truth_jpd))
    scale = nf_truth_jpd.optics.scale
    want = theory_widths(table1_source)["minus_x"]
    for s in f.widths:
        assert unbin_width(s, 2) * scale == pytest.approx(want, rel=0.05)


def test_nf_conditional_peak_and_width(nf_truth_jpd, table1_source):
    ref = (63, 127)
    c = conditional(nf_truth_jpd, ref)
    f = fit_gaussian2d(c)
    # NF photons are correlated: the twin sits at the same offset from its half centre
    assert f.center[0] == pytest.approx(ref[0] + 128, abs=0.5)
    assert f.center[1] == pytest.approx(ref[1], abs=0.5)
    want = theory_widths(table1_source)["cond_x"]
    rho = correlation_slope(nf_truth_jpd, "x")
    got = unbin_width(f.widths[0], 1 + rho ** 2) * nf_truth_jpd.optics.scale
    assert got == pytest.approx(want, rel=0.10)


def test_ff_marginal_centred():
    src = SourceParams()
    p = truth_level_pairs(src, Basis.FF, 200_000, seed=12)
    j = accumulate(p, Basis.FF, OpticsConfig(Basis.FF))
    f = fit_gaussian2d(marginal(j, Half.RIGHT))
    assert f.center == pytest.approx((191.5, 127.5), abs=0.1)
    single = 0.5 * np.hypot(src.kappa_sum_inv_m, src.kappa_diff_inv_m) / j.optics.scale
    assert f.widths[0] == pytest.approx(np.sqrt(single ** 2 + 1 / 12), rel=0.03)
    # FF twins are anti-correlated around the half centres
    c = fit_gaussian2d(conditional(j, (58, 127)))
    assert c.center[0] == pytest.approx(191.5 + (63.5 - 58), abs=0.5)
