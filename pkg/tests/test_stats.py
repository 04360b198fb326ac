import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as hst

from depthlift import stats as st
from oracles import brute_kendall

X12 = np.array([2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 6.1, 4.0, 3.9, 2.2, 5.0])


# --- descriptive ----------------------------------------------------------------


def test_summarize_symmetric():
    s = st.summarize([-1.0, 0.0, 1.0])
    assert s.skewness == 0 and s.mean == 0 and s.n == 3
    assert s.counts.sum() == 3


def test_summarize_reference_values():
    # frozen from scipy.stats.skew / kurtosis (biased moments)
    s = st.summarize(X12)
    assert s.skewness == pytest.approx(0.27700720854064287, rel=1e-12)
    assert s.kurtosis == pytest.approx(-1.0194994009851737, rel=1e-12)


def test_summarize_errors():
    with pytest.raises(st.DegenerateSampleError):
        st.summarize([2.0, 2.0, 2.0, 2.0])
    with pytest.raises(st.SampleSizeError):
        st.summarize([1.0, 2.0])


def test_summarize_normal_moments():
    s = st.summarize(np.random.default_rng(1).standard_normal(10**6))
    assert abs(s.skewness) <= 0.01
    assert abs(s.kurtosis) <= 0.02
    assert s.counts.sum() == 10**6


# --- normality ----------------------------------------------------------------


def test_shapiro_three_linear_points():
    w, p = st.shapiro_wilk([1.0, 2.0, 3.0])
    assert w == pytest.approx(1.0, abs=1e-6)
    assert p == pytest.approx(1.0, abs=1e-6)


def test_shapiro_reference_value():
    # frozen from scipy.stats.shapiro (single-precision Fortran, hence the tolerance)
    w, p = st.shapiro_wilk(X12)
    assert w == pytest.approx(0.9545621842754632, abs=1e-6)
    assert p == pytest.approx(0.7043090214330969, abs=1e-5)


def test_shapiro_range_errors():
    with pytest.raises(st.SampleSizeError):
        st.shapiro_wilk(np.arange(5001.0))
    with pytest.raises(st.DegenerateSampleError):
        st.shapiro_wilk(np.ones(10))


def test_shapiro_large_subsamples(caplog):
    x = np.random.default_rng(0).standard_normal(8000)
    with caplog.at_level("WARNING"):
        w, p = st.shapiro_wilk_large(x, seed=1)
    assert "subsampling" in caplog.text
    assert (w, p) == st.shapiro_wilk_large(x, seed=1)
    assert 0 < w <= 1


def test_anderson_reference_value():
    # scipy's uncorrected A2 = 0.20070002068159631, times 1 + 0.75/12 + 2.25/144
    a2, crit = st.anderson_darling(X12)
    assert a2 == pytest.approx(0.21637970979734603, rel=1e-10)
    assert crit == 0.787


def test_anderson_needs_eight():
    with pytest.raises(st.SampleSizeError):
        st.anderson_darling(np.arange(7.0))


def test_dagostino_reference_value():
    y = np.r_[X12, X12 * 1.5]
    k2, p = st.dagostino_k2(y)
    assert k2 == pytest.approx(2.080017133164033, rel=1e-10)
    assert p == pytest.approx(0.3534516540732274, rel=1e-10)


def test_dagostino_needs_twenty():
    with pytest.raises(st.SampleSizeError):
        st.dagostino_k2(np.arange(19.0))


def bimodal(rng, n):
    return np.where(rng.uniform(size=n) < 0.5, -3.0, 3.0) + rng.standard_normal(n)


def test_bimodal_rejected():
    x = bimodal(np.random.default_rng(2), 5000)
    assert st.shapiro_wilk(x)[1] < 1e-4
    assert st.anderson_darling(x)[0] > 0.787
    assert st.dagostino_k2(x)[1] < 1e-4


def test_heavy_tails_rejected():
    x = np.random.default_rng(3).standard_t(3, size=5000)
    assert st.dagostino_k2(x)[1] < 1e-4


def test_anderson_uniform_power():
    rng = np.random.default_rng(4)
    hits = [st.anderson_darling(rng.uniform(size=5000))[0] > 0.787 for _ in range(100)]
    assert np.mean(hits) >= 0.99


def test_normality_bundle():
    r = st.normality(np.random.default_rng(5).standard_normal(300))
    assert 0 < r.shapiro[0] <= 1 and 0 <= r.shapiro[1] <= 1
    assert r.anderson[0] >= 0 and r.anderson[1] == 0.787
    assert r.dagostino[0] >= 0


# --- rank correlation -----------------------------------------------------------


def test_rank_average_ties():
    assert np.array_equal(st.rank_average([10, 20, 20, 5]), [2, 3.5, 3.5, 1])


def test_spearman_examples():
    x = np.array([3.0, 1.0, 4.0, 1.5, 9.0])
    assert st.spearman(x, x) == (1.0, 0.0)
    assert st.spearman(np.sort(x), np.sort(x)[::-1])[0] == -1.0
    assert st.spearman([1, 2, 3, 4], [1, 3, 2, 4])[0] == pytest.approx(0.8, abs=1e-15)
    rho, p = st.spearman([1, 2, 3, 4, 5, 6], [2, 1, 4, 3, 6, 5])
    assert rho == pytest.approx(0.8285714285714287, rel=1e-12)
    assert p == pytest.approx(0.04156268221574334, rel=1e-9)


def test_spearman_errors():
    with pytest.raises(st.DegenerateSampleError):
        st.spearman([1, 1, 1, 1], [1, 2, 3, 4])
    with pytest.raises(st.SampleSizeError):
        st.spearman([1, 2], [2, 1])
    with pytest.raises(ValueError):
        st.spearman([1, 2, 3], [1, 2])


def test_kendall_examples():
    assert st.kendall_tau([1, 2, 3, 4], [1, 2, 3, 4])[0] == 1.0
    c, d, *_ = st.kendall_counts([1, 2, 3, 4], [1, 3, 2, 4])
    assert (c, d) == (5, 1)
    assert st.kendall_tau([1, 2, 3, 4], [1, 3, 2, 4])[0] == pytest.approx(4 / 6, abs=1e-15)


def test_kendall_reference_with_ties():
    # frozen from scipy.stats.kendalltau(method="asymptotic")
    tau, p = st.kendall_tau([1, 2, 2, 3, 4, 4, 5], [1, 3, 2, 2, 5, 4, 4])
    assert tau == pytest.approx(0.6842105263157894, rel=1e-12)
    assert p == pytest.approx(0.041136383569940586, rel=1e-9)


def test_kendall_all_tied():
    with pytest.raises(st.DegenerateSampleError):
        st.kendall_tau([2, 2, 2, 2], [1, 2, 3, 4])


def test_count_inversions_brute_force(rng):
    for n in (0, 1, 2, 3, 7, 16, 33):
        y = rng.integers(0, 5, size=n)
        want = sum(1 for i, j in itertools.combinations(range(n), 2) if y[i] > y[j])
        assert st.count_inversions(y) == want


def test_kendall_matches_brute_force_oracle(rng):
    for _ in range(200):
        n = int(rng.integers(3, 51))
        x = rng.integers(0, max(2, n // 3), size=n)
        y = rng.integers(0, max(2, n // 4), size=n)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        c, d, tau = brute_kendall(x, y)
        got = st.kendall_counts(x, y)
        assert got[:2] == (c, d)
        assert st.kendall_tau(x, y)[0] == tau


samples = hst.lists(hst.integers(-20, 20), min_size=5, max_size=40)


@settings(max_examples=100)
@given(hst.data())
def test_rank_statistics_properties(data):
    x = np.array(data.draw(samples), dtype=float)
    y = np.array(data.draw(hst.lists(hst.integers(-20, 20), min_size=len(x), max_size=len(x))), dtype=float)
    assume(np.ptp(x) > 0 and np.ptp(y) > 0)
    rho, p = st.spearman(x, y)
    tau, q = st.kendall_tau(x, y)
    assert -1 <= rho <= 1 and 0 <= p <= 1 and -1 <= tau <= 1 and 0 <= q <= 1
    # symmetry
    assert st.spearman(y, x)[0] == pytest.approx(rho, abs=1e-12)
    assert st.kendall_tau(y, x)[0] == pytest.approx(tau, abs=1e-12)
    # invariance under strictly increasing transforms
    assert st.spearman(np.exp(x / 5), y**3)[0] == pytest.approx(rho, abs=1e-12)
    assert st.kendall_tau(np.exp(x / 5), y**3)[0] == pytest.approx(tau, abs=1e-12)
    assert st.kendall_tau(x, y)[0] == brute_kendall(x, y)[2]


# --- cells, summaries, trends -----------------------------------------------------


def test_subsample_partition(multi, cams, rng):
    from depthlift import camera as cg
    z = cg.camera_frame_poses(multi, cams)[..., 2]
    d = multi.replace(depth=z + rng.normal(0, 10, z.shape))
    seen = np.zeros(z.shape, dtype=int)
    for cam in range(1, 5):
        for act in range(1, 16):
            m = (d.cameras == cam) & (d.actions == act)
            for j in range(17):
                dep, zz = st.subsample(d, z, cam, act, j)
                assert len(dep) == m.sum()
                assert np.array_equal(zz, z[m, j])
                seen[m, j] += 1
    assert np.all(seen == 1)
    with pytest.raises(st.SelectionError):
        st.subsample(d, z, 9, 1, 0)


def report(rho, p):
    return st.CorrelationReport((rho, p), (rho, p), 10)


def test_significance_summary_all_zero_p():
    s = st.significance_summary([report(0.5, 0.0)] * 4)
    assert s["significant@0.001"] == s["significant@0.01"] == s["significant@0.05"] == 1.0
    assert s["negative"] == 0 and s["n_cells"] == 4


def test_significance_summary_fractions():
    reps = [report(0.5, 0.0005), report(-0.2, 0.005), report(0.1, 0.03), report(0.4, 0.5)]
    s = st.significance_summary(reps)
    assert (s["significant@0.001"], s["significant@0.01"], s["significant@0.05"]) == (0.25, 0.5, 0.75)
    assert s["negative"] == 0.25 and s["moderate"] == 0.5
    with pytest.raises(ValueError):
        st.significance_summary([])


@settings(max_examples=50)
@given(hst.lists(hst.tuples(hst.floats(-1, 1), hst.floats(0, 1)), min_size=1, max_size=30))
def test_significance_summary_monotone(pairs):
    s = st.significance_summary([report(r, p) for r, p in pairs])
    assert s["significant@0.001"] <= s["significant@0.01"] <= s["significant@0.05"]
    assert all(0 <= v <= 1 for k, v in s.items() if k not in ("n_cells", "mean_spearman"))


def test_simulator_cells_significant():
    from depthlift import depth as dp
    rng = np.random.default_rng(8)
    reps = []
    for k in range(10):
        z = rng.uniform(2000, 6000, size=5000)
        d = dp.simulate_from_z(z, dp.DepthModelConfig(target_spearman=0.6, seed=k))
        reps.append(st.correlate(d, z))
    assert st.significance_summary(reps)["significant@0.05"] >= 0.99


def test_trend_fit_examples():
    x = np.linspace(0, 1, 6)
    f = st.trend_fit(np.c_[x, -3 * x + 10])
    assert f.slope == pytest.approx(-3) and f.intercept == pytest.approx(10) and f.r == pytest.approx(-1)
    f = st.trend_fit([(0, 2), (1, 1), (2, 0)])
    assert (f.slope, f.intercept) == (-1.0, 2.0)
    with pytest.raises(st.DegenerateSampleError):
        st.trend_fit([(1, 2), (1, 3), (1, 4)])
    with pytest.raises(st.SampleSizeError):
        st.trend_fit([(0, 1), (1, 2)])


def test_trend_fit_swapped_axes_sign(rng):
    pts = np.c_[rng.uniform(size=20), rng.uniform(size=20)]
    a, b = st.trend_fit(pts), st.trend_fit(pts[:, ::-1])
    assert np.sign(a.slope) == np.sign(b.slope)
    assert a.r == pytest.approx(b.r)
