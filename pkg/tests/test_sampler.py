"""Kernel-level sampler tests against conjugate algebra and enumeration."""

import math

import numpy as np
import pytest
from scipy import stats as sp_stats

from bisecr.linkage import AugmentedData, augment
from bisecr.oracle import enumerate_joint
from bisecr.sampler import GibbsSampler, McmcConfig, run_chain, summarize
from bisecr.simulate import ScenarioSpec, grid_array, simulate_dataset
from bisecr.types import (
    FEMALE,
    MALE,
    UNKNOWN,
    CaptureData,
    ModelParams,
    RowKind,
    StateSpace,
    TrapArray,
)


def empty_data(K, J):
    return CaptureData(J=J, left=np.zeros((0, K, J), np.uint8),
                       right=np.zeros((0, K, J), np.uint8),
                       row_kind=np.zeros(0, np.int8), sex=np.zeros(0, np.int8))


def one_detected_row(K, J, cells, sex=UNKNOWN):
    left = np.zeros((1, K, J), dtype=np.uint8)
    right = np.zeros((1, K, J), dtype=np.uint8)
    for k, t in cells:
        left[0, k, t] = 1
        right[0, k, t] = 1
    return CaptureData(J=J, left=left, right=right,
                       row_kind=np.array([RowKind.FULL], np.int8),
                       sex=np.array([sex], np.int8))


def make_sampler(data, M, traps=None, space=None, seed=0, model="identified",
                 R=2.0, **cfg_kw):
    traps = traps if traps is not None else TrapArray(coords=np.array([[0.5, 0.5]]))
    space = space if space is not None else StateSpace(0.0, 1.0, 0.0, 1.0)
    aug, L0 = augment(data, M)
    cfg = McmcConfig(iterations=10, burn_in=5, R=R, M=M, seed=seed, **cfg_kw)
    return GibbsSampler(aug, traps, space, cfg, model=model, L0=L0)


class TestConjugateUpdates:
    def test_psi_support_counts(self):
        s = make_sampler(empty_data(1, 1), M=4, seed=1)
        s.z[:] = 0
        draws = np.array([(s.update_psi(), s.params["psi"])[1] for _ in range(40000)])
        # Beta(1, 5): mean 1/6
        se = math.sqrt(draws.var() / draws.size)
        assert abs(draws.mean() - 1 / 6) < 4 * se
        s.z[:] = 1
        draws = np.array([(s.update_psi(), s.params["psi"])[1] for _ in range(40000)])
        assert abs(draws.mean() - 5 / 6) < 4 * math.sqrt(draws.var() / draws.size)

    def test_psi_moments_at_scale(self):
        s = make_sampler(empty_data(1, 1), M=400, seed=2)
        s.z[:] = 0
        s.z[:100] = 1
        n = 100000
        draws = np.empty(n)
        for i in range(n):
            s.update_psi()
            draws[i] = s.params["psi"]
        a, b = 101, 301
        mean = a / (a + b)
        sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
        assert abs(draws.mean() - mean) < 3 * sd / math.sqrt(n)

    def test_theta_counts_included_rows_only(self):
        s = make_sampler(empty_data(1, 1), M=6, seed=3)
        s.z[:] = np.array([1, 1, 1, 0, 0, 0], dtype=np.int8)
        s.x[:] = np.array([1, 1, 0, 1, 1, 1], dtype=np.int8)
        n = 50000
        draws = np.empty(n)
        for i in range(n):
            s.x[:3] = [1, 1, 0]
            s.z[:] = [1, 1, 1, 0, 0, 0]
            s.update_theta()
            draws[i] = s.params["theta"]
        a, b = 3, 2   # Beta(1 + 2 males, 1 + 1 female)
        mean = a / (a + b)
        sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
        assert abs(draws.mean() - mean) < 4 * sd / math.sqrt(n)


class TestUpdateZ:
    def test_detected_row_pinned(self):
        data = one_detected_row(1, 1, [(0, 0)])
        s = make_sampler(data, M=3, seed=4)
        for _ in range(200):
            s.sweep()
            assert s.z[0] == 1

    def test_far_row_conditional_equals_psi(self):
        # an undetected individual far from every trap has likelihood one
        space = StateSpace(0.0, 100.0, 0.0, 1.0)
        s = make_sampler(empty_data(1, 1), M=1, space=space, seed=5, R=2.0)
        s.set_state(s=np.array([[99.0, 0.5]]),
                    params=dict(psi=0.37, sigma_m=0.3, sigma_f=0.2, p0=0.5))
        hits = 0
        n = 50000
        for _ in range(n):
            s.update_z()
            hits += int(s.z[0])
        assert abs(hits / n - 0.37) < 3 * math.sqrt(0.37 * 0.63 / n)

    def test_reference_arithmetic(self):
        # single trap, J = 2, pi = 0.03, phi = 0.5, psi = 0.25
        s = make_sampler(empty_data(1, 2), M=1, seed=6)
        s.set_state(s=np.array([[0.5, 0.5]]),
                    params=dict(psi=0.25, phi=0.5, p0=0.03, sigma_m=0.5, sigma_f=0.25))
        lam = (1 - 0.03 * 0.75) ** 2
        want = 0.25 * lam / (0.25 * lam + 0.75)
        hits = 0
        n = 80000
        for _ in range(n):
            s.update_z()
            hits += int(s.z[0])
        assert abs(hits / n - want) < 3 * math.sqrt(want * (1 - want) / n)


class TestUpdateX:
    def test_equal_sigmas_reduce_to_theta(self):
        data = one_detected_row(1, 3, [(0, 0), (0, 2)])
        s = make_sampler(data, M=1, seed=7)
        s.set_state(params=dict(theta=0.73, sigma_m=0.4, sigma_f=0.4))
        s.z[0] = 1
        hits = 0
        n = 60000
        for _ in range(n):
            s.update_x()
            hits += int(s.x[0])
        assert abs(hits / n - 0.73) < 3 * math.sqrt(0.73 * 0.27 / n)

    def test_excluded_rows_draw_from_prior(self):
        s = make_sampler(empty_data(1, 1), M=1, seed=8)
        s.set_state(params=dict(theta=0.31))
        s.z[0] = 0
        hits = 0
        n = 60000
        for _ in range(n):
            s.update_x()
            hits += int(s.x[0])
        assert abs(hits / n - 0.31) < 3 * math.sqrt(0.31 * 0.69 / n)

    def test_two_term_normalisation(self):
        # one trap at distance sigma_f from the centre, sigma_m = 2 sigma_f
        data = one_detected_row(1, 1, [(0, 0)])
        traps = TrapArray(coords=np.array([[0.7, 0.5]]))
        s = make_sampler(data, M=1, traps=traps, seed=9)
        sigma_f = 0.2
        params = dict(theta=0.4, phi=0.5, p0=0.4,
                      sigma_m=2 * sigma_f, sigma_f=sigma_f)
        s.set_state(s=np.array([[0.5, 0.5]]), params=params)
        s.z[0] = 1
        p = ModelParams(psi=0.5, theta=0.4, phi=0.5, p0=0.4,
                        sigma_m=2 * sigma_f, sigma_f=sigma_f, R=2.0)
        d2 = 0.2 ** 2
        lik = {}
        for key, sig in (("m", p.sigma_m), ("f", p.sigma_f)):
            pi = p.p0 * math.exp(-d2 / (2 * sig * sig))
            lik[key] = pi * p.phi * p.phi
        want = p.theta * lik["m"] / (p.theta * lik["m"] + (1 - p.theta) * lik["f"])
        hits = 0
        n = 60000
        for _ in range(n):
            s.update_x()
            hits += int(s.x[0])
        assert abs(hits / n - want) < 3 * math.sqrt(want * (1 - want) / n)


class TestUpdateS:
    def test_excluded_rows_uniform(self):
        s = make_sampler(empty_data(1, 1), M=1, seed=10)
        s.z[0] = 0
        xs = np.empty(10000)
        ys = np.empty(10000)
        for i in range(10000):
            s.update_s()
            xs[i], ys[i] = s.s[0]
        assert sp_stats.kstest(xs, "uniform", args=(0.0, 1.0)).pvalue > 1e-4
        assert sp_stats.kstest(ys, "uniform", args=(0.0, 1.0)).pvalue > 1e-4

    def test_out_of_space_proposals_rejected(self):
        data = one_detected_row(1, 1, [(0, 0)])
        s = make_sampler(data, M=1, seed=11,
                         proposal_scales={"s": 50.0}, adapt=False)
        s.z[0] = 1
        for _ in range(500):
            s.update_s()
            assert s.space.contains(s.s).all()

    def test_posterior_concentrates_and_tracks_sigma(self):
        # grid-integrated posterior mean distance vs the chain's long-run mean
        data = one_detected_row(1, 1, [(0, 0)])
        traps = TrapArray(coords=np.array([[0.5, 0.5]]))
        means = {}
        for sigma in (0.3, 0.15):
            s = make_sampler(data, M=1, traps=traps, seed=12)
            s.set_state(s=np.array([[0.5, 0.5]]),
                        params=dict(phi=0.6, p0=0.3, sigma_m=sigma, sigma_f=sigma))
            s.z[0] = 1
            ds = np.empty(40000)
            for i in range(40000):
                s.update_s()
                ds[i] = math.hypot(s.s[0, 0] - 0.5, s.s[0, 1] - 0.5)
            grid = s.space.grid(50, 50)
            d2 = ((grid - [0.5, 0.5]) ** 2).sum(axis=1)
            pi = 0.3 * np.exp(-d2 / (2 * sigma * sigma))
            w = pi * 0.6 * 0.6   # single simultaneous detection, J = 1
            w /= w.sum()
            want = float(w @ np.sqrt(d2))
            means[sigma] = ds.mean()
            assert abs(ds.mean() - want) < 0.02
        assert means[0.15] < means[0.3]


class TestScalarUpdates:
    def test_out_of_support_proposals_rejected(self):
        data = one_detected_row(1, 2, [(0, 0)])
        s = make_sampler(data, M=2, seed=13, adapt=False,
                         proposal_scales={"phi": 50.0, "p0": 50.0,
                                          "sigma_m": 50.0, "sigma_f": 50.0})
        for _ in range(300):
            s.sweep()
            assert 0 < s.params["phi"] < 1
            assert 0 < s.params["p0"] < 1
            assert 0 < s.params["sigma_m"] < s.config.R
            assert 0 < s.params["sigma_f"] < s.config.R

    def test_zero_scale_chain_is_constant(self):
        data = one_detected_row(1, 2, [(0, 0)])
        s = make_sampler(data, M=2, seed=14, adapt=False,
                         proposal_scales={"phi": 0.0, "p0": 0.0,
                                          "sigma_m": 0.0, "sigma_f": 0.0})
        start = dict(s.params)
        for _ in range(100):
            s.sweep()
        for name in ("phi", "p0", "sigma_m", "sigma_f"):
            assert s.params[name] == start[name]


class TestUpdateL:
    def test_no_partials_is_noop(self):
        data = one_detected_row(2, 2, [(0, 0), (1, 1)])
        s = make_sampler(data, M=4, seed=15)
        for _ in range(200):
            s.sweep()
            np.testing.assert_array_equal(s.link.L, np.arange(4))

    def test_example_visits_merged_and_separate(self, example_capture_data,
                                                 example_traps, example_space):
        aug, L0 = augment(example_capture_data, 6)
        cfg = McmcConfig(iterations=10, burn_in=5, R=2.0, M=6, seed=16)
        s = GibbsSampler(aug, example_traps, example_space, cfg, L0=L0)
        seen_merged = seen_separate = False
        for _ in range(4000):
            s.sweep()
            if s.link.L[3] == 2:
                seen_merged = True
            else:
                seen_separate = True
            if seen_merged and seen_separate:
                break
        assert seen_merged and seen_separate


class TestFrozenStationarity:
    def test_two_point_grid_z_and_link_distribution(self):
        """Frozen tiny model: empirical (z, L) frequencies over a long run of
        the latent kernels match the enumerated posterior within 3 MC s.e."""
        # J = 2 so the left-only and right-only detections sit on different
        # occasions and the pair is mergeable
        K, J = 1, 2
        left = np.zeros((2, K, J), dtype=np.uint8)
        right = np.zeros((2, K, J), dtype=np.uint8)
        left[0, 0, 0] = 1
        right[1, 0, 1] = 1
        data = CaptureData(J=J, left=left, right=right,
                           row_kind=np.array([RowKind.LEFT_ONLY, RowKind.RIGHT_ONLY]),
                           sex=np.array([UNKNOWN, UNKNOWN], dtype=np.int8))
        traps = TrapArray(coords=np.array([[0.5, 0.5]]))
        space = StateSpace(0.0, 1.0, 0.0, 1.0)
        aug, L0 = augment(data, 3)
        grid = np.array([[0.4, 0.5], [0.9, 0.5]])
        params = ModelParams(psi=0.45, theta=0.5, phi=0.45, p0=0.4,
                             sigma_m=0.45, sigma_f=0.25, R=2.0)
        enum = enumerate_joint(aug, traps, params, grid)
        cfg = McmcConfig(iterations=10, burn_in=5, R=2.0, M=3, seed=17,
                         s_grid=grid, adapt=False)
        s = GibbsSampler(aug, traps, space, cfg, L0=L0)
        s.set_state(params=dict(psi=params.psi, theta=params.theta,
                                phi=params.phi, p0=params.p0,
                                sigma_m=params.sigma_m, sigma_f=params.sigma_f))
        n = 100000
        z_hits = np.zeros(3)
        merged = 0
        for _ in range(n):
            s.update_z()
            s.update_x()
            s.update_s()
            s.update_L()
            z_hits += s.z
            merged += int(s.link.L[1] == 0)
        # bound of roughly 3 MC s.e. allowing for chain autocorrelation
        np.testing.assert_allclose(z_hits / n, enum.p_z, atol=0.025)
        assert abs(merged / n - enum.p_link[1, 0]) < 0.025


class TestRunChain:
    def test_seed_determinism(self, small_grid):
        traps, space = small_grid
        spec = ScenarioSpec(n_true=12, n_male_true=5, p0=0.2, phi=0.5,
                            sigma_m=0.4, sigma_f=0.2, space=space, traps=traps,
                            J=4, seed=3)
        data, _ = simulate_dataset(spec)
        aug, L0 = augment(data, 30)
        cfg = McmcConfig(iterations=400, burn_in=100, R=1.5, M=30, seed=21,
                         snapshot_thin=5)
        a = run_chain(aug, traps, space, cfg, L0=L0)
        b = run_chain(aug, traps, space, cfg, L0=L0)
        for name, col in a.param_dict().items():
            np.testing.assert_array_equal(col, b.param_dict()[name])
        np.testing.assert_array_equal(a.s_snapshots, b.s_snapshots)

    def test_derived_counts_and_support(self, small_grid):
        traps, space = small_grid
        spec = ScenarioSpec(n_true=15, n_male_true=6, p0=0.25, phi=0.5,
                            sigma_m=0.4, sigma_f=0.2, space=space, traps=traps,
                            J=5, seed=4)
        data, _ = simulate_dataset(spec)
        aug, L0 = augment(data, 40)
        cfg = McmcConfig(iterations=600, burn_in=200, R=1.5, M=40, seed=22)
        out = run_chain(aug, traps, space, cfg, L0=L0)
        assert np.all(out.N <= 40)
        assert np.all(out.N_male <= out.N)
        for name in ("psi", "theta", "phi", "p0"):
            col = out.param_dict()[name]
            assert np.all((col > 0) & (col < 1))
        for name in ("sigma_m", "sigma_f"):
            col = out.param_dict()[name]
            assert np.all((col > 0) & (col < 1.5))

    def test_progress_lines(self, small_grid, capsys):
        import io
        traps, space = small_grid
        spec = ScenarioSpec(n_true=10, n_male_true=5, p0=0.2, phi=0.5,
                            sigma_m=0.4, sigma_f=0.2, space=space, traps=traps,
                            J=3, seed=5)
        data, _ = simulate_dataset(spec)
        aug, L0 = augment(data, 20)
        cfg = McmcConfig(iterations=60, burn_in=20, R=1.5, M=20, seed=23)
        buf = io.StringIO()
        run_chain(aug, traps, space, cfg, L0=L0, progress=buf, progress_every=20)
        lines = buf.getvalue().strip().splitlines()
        assert len(lines) == 3
        assert all("log_posterior=" in ln and "iteration=" in ln for ln in lines)


def reference_quantile(sorted_vals, q):
    """Independent linear-interpolation quantile of order statistics."""
    n = len(sorted_vals)
    h = (n - 1) * q
    lo = int(math.floor(h))
    hi = min(lo + 1, n - 1)
    return sorted_vals[lo] + (h - lo) * (sorted_vals[hi] - sorted_vals[lo])


class TestSummarize:
    def _samples(self, values):
        n = len(values)
        return_values = np.asarray(values, dtype=float)
        from bisecr.sampler import PosteriorSamples
        return PosteriorSamples(
            model="identified", psi=return_values, theta=return_values,
            sigma_m=return_values, sigma_f=return_values,
            N=np.asarray(values, dtype=np.int64) * 0 + 7,
            N_male=np.asarray(values, dtype=np.int64) * 0 + 3,
            phi=return_values, p0=return_values)

    def test_constant_chain(self):
        rows = {r.name: r for r in summarize(self._samples([2.5] * 50))}
        r = rows["phi"]
        assert (r.mean, r.sd, r.q025, r.q50, r.q975, r.ci_width) == (2.5, 0, 2.5, 2.5, 2.5, 0)

    def test_uniform_ranks_median(self):
        vals = np.arange(1, 10001, dtype=float)
        rows = {r.name: r for r in summarize(self._samples(vals))}
        assert rows["psi"].q50 == pytest.approx(5000.5)

    def test_against_reference_quantiles(self):
        rng = np.random.default_rng(30)
        vals = rng.normal(size=5001)
        rows = {r.name: r for r in summarize(self._samples(vals))}
        sv = np.sort(vals)
        for q, attr in ((0.025, "q025"), (0.5, "q50"), (0.975, "q975")):
            assert getattr(rows["phi"], attr) == pytest.approx(
                reference_quantile(sv, q), abs=1e-9)
        assert rows["phi"].sd == pytest.approx(vals.std(ddof=1), rel=1e-12)
        assert rows["N"].mean == 7

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            summarize(self._samples([]))


class TestAcceptanceAdaptation:
    def test_rates_move_into_band(self, small_grid):
        traps, space = small_grid
        spec = ScenarioSpec(n_true=25, n_male_true=10, p0=0.2, phi=0.5,
                            sigma_m=0.4, sigma_f=0.2, space=space, traps=traps,
                            J=8, seed=6)
        data, _ = simulate_dataset(spec)
        aug, L0 = augment(data, 60)
        cfg = McmcConfig(iterations=3000, burn_in=1500, R=1.5, M=60, seed=24,
                         adapt=True, adapt_window=50)
        out = run_chain(aug, traps, space, cfg, L0=L0)
        for name in ("phi", "p0", "sigma_m", "sigma_f", "s"):
            assert 0.1 <= out.acceptance[name] <= 0.6, (name, out.acceptance)
