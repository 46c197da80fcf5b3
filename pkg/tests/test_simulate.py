"""Simulator and coverage-harness tests."""

import math

import numpy as np
import pytest

from bisecr.model import cell_probs, distance, trap_entry_prob
from bisecr.sampler import McmcConfig
from bisecr.simulate import (
    CAT_FULL,
    CAT_LEFT_ONLY,
    CAT_RIGHT_ONLY,
    CAT_SPLIT,
    CAT_UNOBSERVED,
    ScenarioSpec,
    back_simulate,
    grid_array,
    simulate_dataset,
    standard_grid,
)
from bisecr.types import UNKNOWN, RowKind, StateSpace, TrapArray


def spec_with(traps, space, **kw):
    base = dict(n_true=30, n_male_true=12, p0=0.2, phi=0.5, sigma_m=0.4,
                sigma_f=0.2, space=space, traps=traps, J=5, seed=0)
    base.update(kw)
    return ScenarioSpec(**base)


class TestStandardGrid:
    def test_station_count(self):
        traps, space = standard_grid()
        assert traps.K == 160

    def test_spacings(self):
        traps, space = standard_grid()
        xs = np.unique(traps.coords[:, 0])
        ys = np.unique(traps.coords[:, 1])
        assert len(xs) == 10 and len(ys) == 16
        np.testing.assert_allclose(np.diff(xs), 0.3, atol=1e-12)
        np.testing.assert_allclose(np.diff(ys), 0.3125, atol=1e-12)

    def test_buffer_distance(self):
        traps, space = standard_grid()
        assert (space.xmax, space.ymax) == (5.0, 7.0)
        d_edge = np.minimum.reduce([
            traps.coords[:, 0] - space.xmin, space.xmax - traps.coords[:, 0],
            traps.coords[:, 1] - space.ymin, space.ymax - traps.coords[:, 1],
        ])
        assert np.all(d_edge >= 1.0)


class TestSimulateDataset:
    def test_perfect_detectors_give_only_full_rows(self, small_grid):
        traps, space = small_grid
        data, truth = simulate_dataset(spec_with(traps, space, phi=1.0, seed=1))
        assert data.n_rows > 0
        assert data.n_left_only == 0 and data.n_right_only == 0
        assert np.all(data.row_kind == RowKind.FULL)

    def test_zero_detection_rate(self, small_grid):
        traps, space = small_grid
        data, _ = simulate_dataset(spec_with(traps, space, phi=0.0, seed=2))
        assert data.n_rows == 0

    def test_zero_entry_rate(self, small_grid):
        traps, space = small_grid
        data, _ = simulate_dataset(spec_with(traps, space, p0=0.0, seed=3))
        assert data.n_rows == 0

    def test_cell_frequencies_match_model(self):
        # one animal at a known distance from a single trap, many occasions
        traps = TrapArray(coords=np.array([[0.6, 0.5]]))
        space = StateSpace(0.0, 1.0, 0.0, 1.0)
        J = 100000
        spec = spec_with(traps, space, n_true=1, n_male_true=1, J=J, seed=4,
                         p0=0.3, phi=0.55, sigma_m=0.4)
        data, truth = simulate_dataset(spec)
        d = distance(truth.s[0], traps.coords[0])
        pi = trap_entry_prob(0.3, 0.4, d)
        c = cell_probs(pi, 0.55)
        if data.n_rows == 0:
            pytest.skip("degenerate draw with no detections")
        left = np.zeros(J, dtype=int)
        right = np.zeros(J, dtype=int)
        for r in range(data.n_rows):
            left |= data.left[r, 0]
            right |= data.right[r, 0]
        counts = {
            (0, 0): np.sum((left == 0) & (right == 0)),
            (1, 0): np.sum((left == 1) & (right == 0)),
            (0, 1): np.sum((left == 0) & (right == 1)),
            (1, 1): np.sum((left == 1) & (right == 1)),
        }
        probs = {(0, 0): c.p00, (1, 0): c.p10, (0, 1): c.p01, (1, 1): c.p11}
        for cell, p in probs.items():
            se = math.sqrt(p * (1 - p) / J)
            assert abs(counts[cell] / J - p) < 3 * se + 1e-9, cell

    def test_truth_linkage_recoverable(self, small_grid):
        traps, space = small_grid
        found_split = False
        for seed in range(40):
            data, truth = simulate_dataset(
                spec_with(traps, space, phi=0.35, p0=0.35, J=4, seed=seed))
            for i in np.flatnonzero(truth.category == CAT_SPLIT):
                found_split = True
                lr, rr = truth.left_row[i], truth.right_row[i]
                assert lr >= 0 and rr >= 0 and lr != rr
                assert data.row_kind[lr] == RowKind.LEFT_ONLY
                assert data.row_kind[rr] == RowKind.RIGHT_ONLY
                assert not np.any((data.left[lr] > 0) & (data.right[rr] > 0))
            for i in np.flatnonzero(truth.category == CAT_FULL):
                assert truth.left_row[i] == truth.right_row[i] >= 0
            for i in np.flatnonzero(truth.category == CAT_UNOBSERVED):
                assert truth.left_row[i] == truth.right_row[i] == -1
            if found_split:
                break
        assert found_split

    def test_row_kinds_partition(self, small_grid):
        traps, space = small_grid
        data, truth = simulate_dataset(spec_with(traps, space, seed=5))
        n_split = int(np.sum(truth.category == CAT_SPLIT))
        assert data.n_full == int(np.sum(truth.category == CAT_FULL))
        assert data.n_left_only == n_split + int(np.sum(truth.category == CAT_LEFT_ONLY))
        assert data.n_right_only == n_split + int(np.sum(truth.category == CAT_RIGHT_ONLY))

    def test_full_count_monotone_in_phi(self, small_grid):
        traps, space = small_grid
        wins = 0
        n_pairs = 30
        for seed in range(n_pairs):
            lo, _ = simulate_dataset(spec_with(traps, space, phi=0.4, seed=seed))
            hi, _ = simulate_dataset(spec_with(traps, space, phi=0.8, seed=seed))
            wins += int(hi.n_full >= lo.n_full)
        # one-sided sign test: under no effect, wins ~ Binomial(30, ~0.5)
        assert wins >= 22

    def test_sex_masking(self, small_grid):
        traps, space = small_grid
        data, _ = simulate_dataset(spec_with(traps, space, seed=6,
                                             sex_mask_frac=1.0))
        assert np.all(data.sex == UNKNOWN)
        data, _ = simulate_dataset(spec_with(traps, space, seed=6))
        assert np.all(data.sex != UNKNOWN)

    def test_reduced_process_fires_independently(self, small_grid):
        traps, space = small_grid
        data, truth = simulate_dataset(
            spec_with(traps, space, seed=7, reduced=True, p0=0.4,
                      n_true=40, n_male_true=15))
        # with independent flanks some animals appear on one side only
        assert data.n_left_only + data.n_right_only > 0

    def test_determinism(self, small_grid):
        traps, space = small_grid
        a, _ = simulate_dataset(spec_with(traps, space, seed=8))
        b, _ = simulate_dataset(spec_with(traps, space, seed=8))
        np.testing.assert_array_equal(a.left, b.left)
        np.testing.assert_array_equal(a.right, b.right)


class TestBackSimulate:
    ESTIMATES = {"N": 25.0, "N_male": 10.0, "psi": 0.4, "theta": 0.4,
                 "phi": 0.5, "p0": 0.25, "sigma_m": 0.4, "sigma_f": 0.2}

    def test_single_replicate_coverage_is_binary(self, small_grid):
        traps, space = small_grid
        cfg = McmcConfig(iterations=400, burn_in=150, R=1.5, M=60, seed=0)
        report = back_simulate(self.ESTIMATES, 1, traps, space, J=5,
                               config=cfg, seed=11, n_jobs=1)
        assert report.n_reps == 1 and report.n_ok == 1
        for name, cov in report.coverage.items():
            assert cov in (0.0, 1.0)

    def test_failures_propagate_with_status(self, small_grid):
        traps, space = small_grid
        # M far too small to host the observed rows: augmentation fails
        cfg = McmcConfig(iterations=100, burn_in=50, R=1.5, M=2, seed=0)
        report = back_simulate(self.ESTIMATES, 2, traps, space, J=5,
                               config=cfg, seed=12, n_jobs=1)
        assert report.n_ok == 0
        assert all(r["status"].startswith("error") for r in report.replicates)
        assert math.isnan(report.coverage["N"])

    def test_parallel_matches_serial(self, small_grid):
        traps, space = small_grid
        cfg = McmcConfig(iterations=300, burn_in=100, R=1.5, M=60, seed=0)
        ser = back_simulate(self.ESTIMATES, 2, traps, space, J=5,
                            config=cfg, seed=13, n_jobs=1)
        par = back_simulate(self.ESTIMATES, 2, traps, space, J=5,
                            config=cfg, seed=13, n_jobs=2)
        for a, b in zip(ser.replicates, par.replicates):
            assert a["estimates"] == b["estimates"]
