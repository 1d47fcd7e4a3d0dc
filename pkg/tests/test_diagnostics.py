"""Autocovariance estimation and autocorrelation-time diagnostics."""
import numpy as np
import pytest
from scipy.signal import lfilter

import seqpool as sp
from seqpool.errors import ConfigError, NumericalError


def direct_autocov(series, mean, max_lag):
    """O(n*K) direct-summation oracle for the biased autocovariance."""
    x = np.asarray(series, float) - mean
    n = x.shape[0]
    return np.array([np.dot(x[: n - k], x[k:]) / n for k in range(max_lag + 1)])


def ar1_series(phi, n, seed):
    rng = np.random.default_rng(seed)
    return lfilter([1.0], [1.0, -phi], rng.standard_normal(n))


class TestAutocovarianceFft:
    def test_matches_direct_sum(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.standard_normal(257) * rng.uniform(0.5, 3.0) + rng.uniform(-2, 2)
            mean = rng.uniform(-2, 2)
            fft = sp.autocovariance_fft(x, mean, 60)
            ref = direct_autocov(x, mean, 60)
            np.testing.assert_allclose(fft, ref, rtol=1e-10, atol=1e-12)

    def test_white_noise(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(100000)
        g = sp.autocovariance_fft(x, x.mean(), 50)
        np.testing.assert_allclose(g[0], 1.0, rtol=0.03)
        assert np.abs(g[1:]).max() < 0.02

    def test_constant_series_zero(self):
        g = sp.autocovariance_fft(np.full(500, 3.25), 3.25, 20)
        np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_input_validation(self):
        with pytest.raises(ConfigError):
            sp.autocovariance_fft(np.array([]), 0.0, 1)
        with pytest.raises(ConfigError):
            sp.autocovariance_fft(np.ones(5), 0.0, 5)


class TestAct:
    def test_white_noise_near_one(self):
        rng = np.random.default_rng(2)
        runs = [rng.standard_normal(50000) for _ in range(3)]
        res = sp.act(runs)
        assert 0.9 <= res.tau <= 1.1

    def test_ar1_analytic_value(self):
        """AR(1) with coefficient 0.5 has tau = (1+phi)/(1-phi) = 3."""
        res = sp.act([ar1_series(0.5, 1000000, 3)])
        np.testing.assert_allclose(res.tau, 3.0, rtol=0.10)

    @pytest.mark.parametrize("phi", [0.3, 0.6, 0.9])
    def test_ar1_family(self, phi):
        res = sp.act([ar1_series(phi, 1000000, 4)])
        np.testing.assert_allclose(res.tau, (1 + phi) / (1 - phi), rtol=0.10)

    def test_monotone_in_phi(self):
        taus = [sp.act([ar1_series(phi, 1000000, 5)]).tau for phi in (0.3, 0.6, 0.9)]
        assert taus[0] < taus[1] < taus[2]

    def test_five_identical_runs_match_single_run(self):
        x = ar1_series(0.7, 20000, 6)
        single = sp.act([x])
        five = sp.act([x] * 5)
        assert single.tau == five.tau

    def test_initial_positive_rule(self):
        res = sp.act([ar1_series(0.6, 1000000, 7)], rule="initial-positive")
        np.testing.assert_allclose(res.tau, 4.0, rtol=0.10)
        assert res.rule == "initial-positive" and res.threshold is None

    def test_burn_in_removed(self):
        """A wild transient in the first tenth must not poison the estimate."""
        x = ar1_series(0.5, 200000, 8)
        x[:20000] += 50.0
        with_burn = sp.act([x], burn_in_frac=0.10)
        np.testing.assert_allclose(with_burn.tau, 3.0, rtol=0.15)
        without = sp.act([x], burn_in_frac=0.0)
        assert without.tau > 2 * with_burn.tau

    def test_pooled_mean_captures_between_run_variance(self):
        """Runs centered at different levels: per-run autocovariance about the
        pooled mean exceeds the within-run variance."""
        rng = np.random.default_rng(9)
        a = rng.standard_normal(20000) + 2.0
        b = rng.standard_normal(20000) - 2.0
        res = sp.act([a, b], burn_in_frac=0.0)
        within = 0.5 * (a.var() + b.var())
        assert res.gamma0 > within + 3.0

    def test_constant_chain_errors(self):
        with pytest.raises(NumericalError):
            sp.act([np.full(1000, 1.5)])

    def test_unknown_rule(self):
        with pytest.raises(ConfigError):
            sp.act([np.random.default_rng(0).standard_normal(100)], rule="magic")

    def test_per_variable(self):
        rng = np.random.default_rng(10)
        runs = [
            np.column_stack([ar1_series(0.3, 30000, 11 + r), rng.standard_normal(30000)]) for r in range(2)
        ]
        taus = sp.act_per_variable(runs)
        np.testing.assert_allclose(taus[0], 1.857142857142857, rtol=0.15)
        np.testing.assert_allclose(taus[1], 1.0, atol=0.1)
        const_runs = [np.column_stack([ar1_series(0.3, 5000, 13), np.ones(5000)])]
        taus2 = sp.act_per_variable(const_runs)
        assert np.isfinite(taus2[0]) and np.isnan(taus2[1])


class TestReport:
    def test_time_adjustment_exact(self):
        rep = sp.DiagnosticsReport(
            variables=["x[1][1]", "x[1][2]"],
            act=np.array([4.0, 2.5]),
            secs_per_sample=0.125,
        )
        np.testing.assert_allclose(rep.act_time_adjusted, [0.5, 0.3125])
        d = rep.as_dict()
        assert d["act_time_adjusted"] == [0.5, 0.3125]

    def test_json_round_trip(self, tmp_path):
        import json

        rep = sp.DiagnosticsReport(
            variables=["x[1][1]"],
            act=np.array([3.0]),
            secs_per_sample=0.5,
            acceptance={"0": {"kind": "ehmm"}},
            cost={"trans": 10, "obs": 20},
        )
        rep.to_json(tmp_path / "r.json")
        rep.to_csv(tmp_path / "r.csv")
        loaded = json.loads((tmp_path / "r.json").read_text())
        assert loaded["act"] == [3.0] and loaded["cost"]["obs"] == 20
        lines = (tmp_path / "r.csv").read_text().strip().splitlines()
        assert lines[0] == "variable,act,act_time_adjusted" and len(lines) == 2
