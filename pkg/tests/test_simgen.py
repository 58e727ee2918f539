"""Data-generating mechanisms: families, calibration and dataset draws."""

import math

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from rmstpo.errors import EstimationError, ValidationError
from rmstpo.simgen import (CALIBRATION_TOL, Exponential, NoCensoring, PiecewiseExponential,
                           ScenarioConfig, Uniform, Weibull, _parse_registry, calibrate_scenario,
                           crossing_points, default_registry, expand_grid, is_arm_estimable,
                           load_registry, make_dataset, make_dist, parse_cell, sample_event_times,
                           true_rmst)
from rmstpo.survival import ExtensionPolicy, km_fit, rmst

T_STAR = 10.0


def registry_with(**overrides):
    raw = yaml.safe_load(yaml.safe_dump(default_registry().raw))
    for path, value in overrides.items():
        node = raw
        keys = path.split("__")
        for key in keys[:-1]:
            node = node[key]
        node[keys[-1]] = value
    return _parse_registry(yaml.safe_dump(raw), "<test>")


def trapezoid_rmst(dist, t_star, points=1_000_001):
    t = np.linspace(0.0, t_star, points)
    return integrate.trapezoid(dist.sf(t), t)


class TestFamilies:
    def test_exponential_rmst(self):
        assert true_rmst(Exponential(0.1), 10.0) == pytest.approx(6.321206, abs=1e-6)
        assert true_rmst(Exponential(0.1), 10.0) == pytest.approx(10 * (1 - math.exp(-1)), abs=1e-14)

    @pytest.mark.parametrize("dist", [Exponential(0.3), PiecewiseExponential((2.0,), (0.25, 0.15)),
                                      Weibull(3.0, 8.0), Weibull(0.7, 12.0)])
    def test_zero_horizon(self, dist):
        assert true_rmst(dist, 0.0) == 0.0
        assert true_rmst(dist, 1e-9) == pytest.approx(1e-9, rel=1e-6)

    @pytest.mark.parametrize("dist", [PiecewiseExponential((2.0,), (0.25, 0.15)),
                                      PiecewiseExponential((3.0, 7.0), (0.1, 0.4, 0.05))])
    def test_piecewise_against_trapezoid(self, dist):
        assert abs(true_rmst(dist, T_STAR) - trapezoid_rmst(dist, T_STAR)) <= 1e-8

    @pytest.mark.parametrize("dist", [Weibull(3.0, 8.0), Weibull(0.5, 40.0), Weibull(1.0, 12.0)])
    def test_weibull_quadrature(self, dist):
        assert abs(true_rmst(dist, T_STAR) - trapezoid_rmst(dist, T_STAR)) <= 1e-8

    def test_weibull_shape_one_is_exponential(self):
        assert true_rmst(Weibull(1.0, 5.0), T_STAR) == pytest.approx(true_rmst(Exponential(0.2), T_STAR),
                                                                      abs=1e-12)

    def test_piecewise_single_piece_is_exponential(self):
        pwe = PiecewiseExponential((4.0,), (0.2, 0.2))
        assert_allclose(pwe.sf([1.0, 4.0, 9.0]), Exponential(0.2).sf([1.0, 4.0, 9.0]), rtol=1e-14)

    def test_inverse_transform(self):
        u = np.array([0.9, 0.5, 0.01])
        assert_allclose(Exponential(0.2).from_uniform(u), -np.log(u) / 0.2)
        pwe = PiecewiseExponential((2.0, 5.0), (0.3, 0.1, 0.6))
        assert_allclose(pwe.sf(pwe.from_uniform(u)), u, rtol=1e-12)
        w = Weibull(1.5, 8.0)
        assert_allclose(w.sf(w.from_uniform(u)), u, rtol=1e-12)
        assert_allclose(Uniform(0, 25).sf(Uniform(0, 25).from_uniform(u)), u, rtol=1e-12)
        assert np.all(np.isinf(NoCensoring().from_uniform(u)))

    def test_validation(self):
        with pytest.raises(ValidationError):
            Exponential(0.0)
        with pytest.raises(ValidationError):
            PiecewiseExponential((3.0, 2.0), (0.1, 0.1, 0.1))
        with pytest.raises(ValidationError):
            PiecewiseExponential((3.0,), (0.1,))
        with pytest.raises(ValidationError):
            Weibull(-1.0, 2.0)
        with pytest.raises(ValidationError):
            Uniform(5.0, 5.0)
        with pytest.raises(ValidationError, match="unknown distribution family"):
            make_dist({"family": "gamma", "shape": 2})
        with pytest.raises(ValidationError, match="bad parameters"):
            make_dist({"family": "weibull", "rate": 2})


class TestSampling:
    @pytest.mark.parametrize("dist, cdf", [
        (Weibull(1.5, 8.0), lambda t: 1 - np.exp(-(t / 8.0) ** 1.5)),
        (Exponential(0.2), lambda t: 1 - np.exp(-0.2 * t)),
        (PiecewiseExponential((2.0,), (0.25, 0.15)), lambda t: 1 - PiecewiseExponential((2.0,), (0.25, 0.15)).sf(t)),
    ])
    def test_kolmogorov_smirnov(self, dist, cdf):
        draws = sample_event_times(dist, 100_000, np.random.default_rng(5))
        res = stats.kstest(draws, cdf)
        assert res.pvalue > 0.01
        if isinstance(dist, Weibull):
            assert res.statistic < 0.006

    def test_piecewise_survival_at_cut(self):
        dist = PiecewiseExponential((3.0,), (0.2, 0.05))
        n = 50_000
        draws = sample_event_times(dist, n, np.random.default_rng(8))
        p = float(dist.sf(3.0))
        assert abs(np.mean(draws > 3.0) - p) <= 3 * math.sqrt(p * (1 - p) / n)


class TestCalibration:
    def test_s1_null_is_identity(self):
        d0, d1 = calibrate_scenario("S1", 0.0, T_STAR)
        assert d0 == d1

    def test_s1_against_exp01_control(self):
        reg = registry_with(survival__S1__control={"family": "exponential", "rate": 0.1},
                            survival__S1__treatment={"family": "exponential", "rate": 0.1})
        d0, d1 = calibrate_scenario("S1", 1.5, T_STAR, reg)
        assert d0 == Exponential(0.1)
        r = d1.rate
        assert abs((1 - math.exp(-10 * r)) / r - 6.321206 - 1.5) <= 1e-6
        assert abs(trapezoid_rmst(d1, T_STAR) - trapezoid_rmst(d0, T_STAR) - 1.5) <= 1e-8

    @pytest.mark.parametrize("model", ["S1", "S7", "S8"])
    @pytest.mark.parametrize("delta", [0.0, 1.5])
    def test_residual(self, model, delta):
        d0, d1 = calibrate_scenario(model, delta, T_STAR)
        assert abs(true_rmst(d1, T_STAR) - true_rmst(d0, T_STAR) - delta) <= CALIBRATION_TOL

    @pytest.mark.parametrize("model", ["S7", "S8"])
    @pytest.mark.parametrize("delta", [0.0, 1.5])
    def test_crossing_curves(self, model, delta):
        d0, d1 = calibrate_scenario(model, delta, T_STAR)
        assert d0 != d1
        assert len(crossing_points(d0, d1, T_STAR)) >= 1

    def test_s1_has_no_crossing(self):
        assert len(crossing_points(*calibrate_scenario("S1", 1.5, T_STAR), T_STAR)) == 0

    def test_crossing_point_location(self):
        d0, d1 = Exponential(0.2), PiecewiseExponential((2.0,), (0.3, 0.1))
        # S1 - S0 = 0 where 0.3*2 + 0.1*(t-2) = 0.2 t  ->  t = 4
        assert_allclose(crossing_points(d0, d1, T_STAR), [4.0], atol=1e-3)

    def test_uncalibratable(self):
        with pytest.raises(EstimationError, match="uncalibratable scenario"):
            calibrate_scenario("S1", 9.0, T_STAR)

    def test_unknown_model(self):
        with pytest.raises(ValidationError, match="unknown survival model"):
            calibrate_scenario("S9", 0.0, T_STAR)


class TestRegistry:
    def test_default(self):
        reg = default_registry()
        assert reg.survival_models() == ("S1", "S7", "S8")
        assert reg.censoring_models() == ("C1", "C2", "C3")
        assert reg.t_star == 10.0
        assert len(reg.fingerprint) == 12

    def test_fingerprint_tracks_content(self):
        assert registry_with(t_star=12.0).fingerprint != default_registry().fingerprint
        assert registry_with().raw == default_registry().raw

    def test_load_from_path(self, tmp_path):
        path = tmp_path / "reg.yaml"
        path.write_text(yaml.safe_dump(default_registry().raw))
        reg = load_registry(str(path))
        assert reg.raw == default_registry().raw and reg.source == str(path)

    def test_missing_section(self):
        with pytest.raises(ValidationError, match="missing section 'censoring'"):
            _parse_registry("survival: {}\n", "<bad>")
        with pytest.raises(ValidationError, match="missing 'free'"):
            _parse_registry("survival: {X: {control: {family: none}, treatment: {family: none}}}\n"
                            "censoring: {}\n", "<bad>")


class TestScenarioConfig:
    def test_parse_cell(self):
        cfg = parse_cell("S1,C1,0,15:15,1", n_sim=10)
        assert cfg.sizes == (15, 15) and cfg.n_sim == 10
        assert cfg.cell_id == "S1,C1,0,15:15,1"
        assert parse_cell("S8, C2, 1.5, 12:18, 4").sizes == (48, 72)

    @pytest.mark.parametrize("text", ["S1,C1,0,15:15", "S1,C1,x,15:15,1", "S1,C1,0,15,1"])
    def test_parse_errors(self, text):
        with pytest.raises(ValidationError):
            parse_cell(text)

    def test_invariants(self):
        with pytest.raises(ValidationError):
            ScenarioConfig("S1", "C1", 0.0, (15, 15), k=0)
        with pytest.raises(ValidationError):
            ScenarioConfig("S1", "C1", 0.0, (15, 15), n_sim=0)
        with pytest.raises(ValidationError):
            ScenarioConfig("S1", "C1", 0.0, (15, 15), t_star=0.0)

    def test_cell_keys_distinct(self):
        keys = {c.cell_key for c in expand_grid()}
        assert len(keys) == 3 * 3 * 2 * 3 * 4 == len(expand_grid())


class TestMakeDataset:
    def test_sizes_and_determinism(self):
        cfg = parse_cell("S1,C1,0,12:18,1", master_seed=3)
        a, b = make_dataset(cfg, 5), make_dataset(cfg, 5)
        assert np.array_equal(a.sample.time, b.sample.time)
        assert np.array_equal(a.sample.status, b.sample.status)
        assert np.bincount(a.sample.group).tolist() == [12, 18]
        c = make_dataset(cfg, 6)
        assert not np.array_equal(a.sample.time, c.sample.time)

    def test_independent_of_n_sim(self):
        cfg = parse_cell("S7,C2,1.5,15:15,2", master_seed=3)
        a = make_dataset(cfg, 4)
        b = make_dataset(cfg.with_(n_sim=5000, b_resamples=2000), 4)
        assert np.array_equal(a.sample.time, b.sample.time)

    def test_always_estimable(self):
        cfg = parse_cell("S8,C1,0,12:18,1", master_seed=11)
        for r in range(300):
            s = make_dataset(cfg, r).sample
            for g in (0, 1):
                arm = s.arm(g)
                assert is_arm_estimable(arm.time, arm.status, T_STAR)
                rmst(km_fit(arm), T_STAR, ExtensionPolicy.STRICT)

    def test_no_censoring(self):
        reg = registry_with(censoring__C9={"label": "none", "both": {"family": "none"}})
        cfg = ScenarioConfig("S1", "C9", 0.0, (12, 18))
        for r in range(20):
            ds = make_dataset(cfg, r, reg)
            assert ds.n_regenerated == 0 and np.all(ds.sample.status == 1)

    def test_censoring_fraction(self):
        cfg = parse_cell("S1,C1,0,12:18,1", master_seed=21)
        reg = default_registry()
        d0, d1 = calibrate_scenario("S1", 0.0, T_STAR)
        g0, g1 = reg.censoring("C1")
        n_rep = 10_000
        cens = np.zeros(2)
        for r in range(n_rep):
            s = make_dataset(cfg, r).sample
            cens += [np.sum(s.status[s.group == g] == 0) for g in (0, 1)]
        for j, (dist, cdist, n) in enumerate([(d0, g0, 12), (d1, g1, 18)]):
            # P(C < T) = int_0^inf S_T(c) g(c) dc
            expected, _ = integrate.quad(lambda c: float(dist.sf(c)) * _density(cdist, c), 0, np.inf,
                                         limit=400)
            frac = cens[j] / (n_rep * n)
            assert abs(frac - expected) <= 3 * math.sqrt(expected * (1 - expected) / (n_rep * n))

    @pytest.mark.parametrize("model", ["S1", "S7", "S8"])
    def test_null_mean_difference(self, model):
        cfg = parse_cell(f"{model},C3,0,15:15,1", master_seed=31)
        est = np.empty(10_000)
        for r in range(est.size):
            s = make_dataset(cfg, r).sample
            est[r] = (rmst(km_fit(s.arm(1)), T_STAR).mu - rmst(km_fit(s.arm(0)), T_STAR).mu)
        assert abs(est.mean()) <= 3 * est.std(ddof=1) / math.sqrt(est.size)


def _density(dist, t):
    if isinstance(dist, Weibull):
        z = t / dist.scale
        return dist.shape / dist.scale * z ** (dist.shape - 1) * math.exp(-z ** dist.shape)
    return 1.0 / (dist.hi - dist.lo) if dist.lo <= t <= dist.hi else 0.0


@given(st.integers(0, 2 ** 31), st.integers(0, 10_000))
def test_dataset_depends_only_on_seed_and_index(seed, index):
    cfg = parse_cell("S7,C3,1.5,18:12,1", master_seed=seed)
    a, b = make_dataset(cfg, index), make_dataset(cfg.with_(n_sim=7), index)
    assert np.array_equal(a.sample.time, b.sample.time)
    assert a.n_regenerated == b.n_regenerated
