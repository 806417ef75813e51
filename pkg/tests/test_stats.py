from datetime import date

import numpy as np
import pytest
from scipy.stats import chisquare

from triplet_aa import reports
from triplet_aa.cohort import Cohort, order_chronological, select_window
from triplet_aa.errors import ConfigurationError, InputError
from triplet_aa.experts import CA125_EXPERT, build_pool, expert_predict, power_law_prior
from triplet_aa.rng import stream
from triplet_aa.stats import (
    C7_2,
    TABLE_COLUMNS,
    ErrMode,
    GridSpec,
    Method,
    PValueReport,
    SweepConfig,
    err_window,
    expert_errors,
    min_err_grid,
    permute_labels,
    pvalue,
    rank_experts,
    window_sweep,
)
from triplet_aa.synth import generate

SMALL_GRID = GridSpec(d_values=[1.0, 1.2], eta_values=[0.65, 1.0])


def _replay(window, d, eta, pool):
    """Step-by-step categorical AA with plain weights and a bisection substitution."""
    weights = power_law_prior(pool, d)
    weights = weights / weights.sum()
    errors = 0.0
    for triplet in order_chronological(window):
        preds = np.array([expert_predict(e, triplet).probs for e in pool])
        losses = np.array([[np.sum((p - np.eye(3)[o]) ** 2) for o in range(3)] for p in preds])
        G = -np.log(weights @ np.exp(-eta * losses)) / eta
        lo, hi = G.min(), G.max() + 2
        for _ in range(200):
            mid = (lo + hi) / 2
            if np.maximum(mid - G, 0).sum() < 2:
                lo = mid
            else:
                hi = mid
        gamma = np.maximum((lo + hi) / 2 - G, 0) / 2
        strict = (gamma >= gamma.max() - 1e-12).astype(float)
        strict /= strict.sum()
        errors += np.sum((strict - np.eye(3)[triplet.outcome]) ** 2) / 2
        weights = weights * np.exp(-eta * losses[:, triplet.outcome])
        weights /= weights.sum()
    return errors


@pytest.fixture(scope="module")
def pool4():
    return build_pool(4)


@pytest.fixture(scope="module")
def window(small_cohort):
    return select_window(small_cohort, 0, 12)


class TestGridSpec:
    def test_default_grid(self):
        grid = GridSpec()
        assert len(grid.d_values) == 10
        assert len(grid.eta_values) == 19
        assert len(grid.cells()) == 190
        assert grid.d_values[0] == pytest.approx(1.1)
        assert grid.eta_values[-1] == pytest.approx(1.0)

    def test_sorted_and_deduplicated(self):
        grid = GridSpec(d_values=[1.5, 1.1, 1.5], eta_values=[1.0, 0.5])
        assert grid.cells() == [(1.1, 0.5), (1.1, 1.0), (1.5, 0.5), (1.5, 1.0)]

    @pytest.mark.parametrize("fields", [{"d_values": [0.5]}, {"eta_values": [0.0]}, {"eta_values": []}])
    def test_invalid(self, fields):
        with pytest.raises(ValueError):
            GridSpec(**fields)


class TestErrWindow:
    def test_perfect_single_expert(self, ca125_cohort):
        assert err_window(ca125_cohort, 1.2, 0.65, [CA125_EXPERT]) == 0.0

    def test_bounds(self, window, pool4):
        for eta in (0.1, 0.65, 1.0):
            assert 0 <= err_window(window, 1.2, eta, pool4) <= len(window)

    def test_matches_replay(self, small_cohort, pool4):
        five = Cohort(small_cohort.triplets[:5])
        for d, eta in [(1.2, 0.65), (1.0, 1.0), (2.0, 0.1)]:
            assert err_window(five, d, eta, pool4) == pytest.approx(
                _replay(five, d, eta, pool4), abs=1e-9
            )

    def test_per_triplet_mode(self, window, pool4):
        fresh = err_window(window, 1.2, 0.65, pool4, mode=ErrMode.PER_TRIPLET)
        single = sum(err_window(Cohort((t,)), 1.2, 0.65, pool4) for t in window)
        assert fresh == pytest.approx(single, abs=1e-9)

    def test_huge_power_law_base(self, window, pool4):
        errors = err_window(window, 1e300, 0.65, pool4)
        assert np.isfinite(errors)
        assert 0 <= errors <= len(window)
        e, _ = min_err_grid(window, GridSpec(d_values=[1e300], eta_values=[0.65]), pool4)
        assert e == errors

    def test_empty_window(self, pool4):
        with pytest.raises(InputError):
            err_window(Cohort(), 1.2, 0.65, pool4)


class TestMinErrGrid:
    def test_single_cell(self, window, pool4):
        grid = GridSpec(d_values=[1.3], eta_values=[0.4])
        e, cell = min_err_grid(window, grid, pool4)
        assert cell == (1.3, 0.4)
        assert e == pytest.approx(err_window(window, 1.3, 0.4, pool4), abs=1e-12)

    def test_default_grid_dominates_members(self, window, pool4):
        grid = GridSpec()
        e, (d, eta) = min_err_grid(window, grid, pool4)
        assert (d, eta) in grid.cells()
        assert e == pytest.approx(err_window(window, d, eta, pool4), abs=1e-9)
        assert e <= err_window(window, 1.2, 0.65, pool4) + 1e-9
        for d_, eta_ in grid.cells()[::17]:
            assert e <= err_window(window, d_, eta_, pool4) + 1e-9

    def test_ties_go_to_first_cell(self, ca125_cohort):
        e, cell = min_err_grid(ca125_cohort, SMALL_GRID, [CA125_EXPERT])
        assert e == 0.0
        assert cell == (1.0, 0.65)


class TestExpertErrors:
    def test_ca125_window(self, ca125_cohort):
        pool = build_pool(1)
        errors = expert_errors(ca125_cohort, pool)
        assert errors[pool.index(CA125_EXPERT)] == 0.0
        assert np.all((errors >= 0) & (errors <= len(ca125_cohort)))

    def test_ranking_ties(self):
        pool = build_pool(2)
        totals = np.zeros(len(pool))
        totals[:8] = 1.0
        ranked = rank_experts(pool, totals)
        assert ranked[0][0] == CA125_EXPERT
        assert ranked[1][0] == pool[8]
        assert [loss for _, loss in ranked] == sorted(totals)


class TestPermuteLabels:
    def test_uniform_positions(self, triplet_factory):
        window = Cohort((triplet_factory(),))
        rng = stream(5)
        counts = np.zeros(3)
        for _ in range(10_000):
            counts[permute_labels(window, rng).triplets[0].outcome] += 1
        assert chisquare(counts).pvalue > 0.01

    def test_features_kept_and_input_untouched(self, window):
        before = window.outcomes.copy()
        permuted = permute_labels(window, stream(1))
        np.testing.assert_array_equal(window.outcomes, before)
        for a, b in zip(window, permuted):
            assert sum(s.is_case for s in b.samples) == 1
            assert [(s.ca125, s.peaks, s.patient_id) for s in a.samples] == [
                (s.ca125, s.peaks, s.patient_id) for s in b.samples
            ]

    def test_seeded(self, window):
        a = permute_labels(window, stream(3, 7))
        b = permute_labels(window, stream(3, 7))
        np.testing.assert_array_equal(a.outcomes, b.outcomes)


class TestPValue:
    def test_formula_floor(self):
        report = PValueReport(t=0.0, window_size=5, e0=0.0, q=0, n_trials=10_000, p_value=1 / 10_001)
        assert report.p_value == pytest.approx(1 / 10_001)
        with pytest.raises(ValueError):
            PValueReport(t=0.0, window_size=5, e0=0.0, q=0, n_trials=10, p_value=0.5)

    def test_range(self, window, pool4):
        report = pvalue(window, SMALL_GRID, pool4, n_trials=40, seed=3)
        assert 1 / 41 <= report.p_value <= 1
        assert report.window_size == len(window)

    def test_featureless_window(self, triplet_factory):
        window = Cohort(
            tuple(
                triplet_factory(f"T{i}", case_position=i % 3 + 1, measured=date(2001, 1, i + 1))
                for i in range(6)
            )
        )
        report = pvalue(window, SMALL_GRID, build_pool(1), n_trials=30, seed=0)
        assert report.q == 30
        assert report.p_value == 1.0

    def test_separable_window(self, ca125_cohort):
        report = pvalue(ca125_cohort, SMALL_GRID, build_pool(1), n_trials=200, seed=4, method=Method.CA125)
        assert report.e0 == 0.0
        assert report.p_value < 0.05

    @pytest.mark.parametrize("method", list(Method))
    def test_same_result_on_any_thread_count(self, window, pool4, method):
        one = pvalue(window, SMALL_GRID, pool4, n_trials=25, seed=9, method=method, threads=1)
        many = pvalue(window, SMALL_GRID, pool4, n_trials=25, seed=9, method=method, threads=8)
        assert one == many

    def test_pool_without_method_experts(self, ca125_cohort):
        with pytest.raises(ConfigurationError):
            pvalue(ca125_cohort, SMALL_GRID, [CA125_EXPERT], n_trials=5, seed=0, method=Method.PEAK3)

    def test_needs_trials_and_data(self, window, pool4):
        with pytest.raises(ConfigurationError):
            pvalue(window, SMALL_GRID, pool4, n_trials=0, seed=0)
        with pytest.raises(InputError):
            pvalue(Cohort(), SMALL_GRID, pool4, n_trials=5, seed=0)


class TestWindowSweep:
    def test_rows_and_columns(self, small_cohort):
        rows = window_sweep(small_cohort, range(17), 6, SweepConfig(n_trials=0))
        assert len(rows) == 17
        assert reports.table_frame(rows).columns == TABLE_COLUMNS
        assert [r.t for r in rows] == [float(t) for t in range(17)]
        for row in rows:
            assert row.aa_p is None
            if row.window_size:
                assert 0 <= row.aa_e <= row.window_size
                assert row.min_e <= row.ca125_e

    def test_seventh_peak_combination(self, small_cohort):
        rows = window_sweep(small_cohort, [0], 12, SweepConfig(n_trials=0))
        assert rows[0].c7_2_e is None
        wide = generate(n_triplets=30, n_peaks=8, seed=11)
        pool = build_pool(8)
        row = window_sweep(wide, [0], 12, SweepConfig(n_trials=0), pool=pool)[0]
        errors = expert_errors(select_window(wide, 0, 12), pool)
        assert row.c7_2_e == errors[pool.index(C7_2)]

    def test_empty_windows_are_kept(self, small_cohort):
        rows = window_sweep(small_cohort, [100, 0], 6, SweepConfig(n_trials=0))
        assert rows[0].window_size == 0
        assert rows[0].aa_e is None
        assert rows[1].window_size > 0

    def test_p_values_deterministic(self, small_cohort):
        config = SweepConfig(grid=SMALL_GRID, n_trials=10, seed=2)
        rows = window_sweep(small_cohort, [0, 6], 6, config)
        threaded = window_sweep(small_cohort, [0, 6], 6, config.model_copy(update={"threads": 8}))
        assert rows == threaded
        for row in rows:
            for p in (row.ca125_p, row.aa_p, row.min_p, row.peak3_p, row.peak2_p):
                assert 1 / 11 <= p <= 1


@pytest.mark.slow
class TestCalibration:
    def test_null_p_values_are_valid(self):
        grid = GridSpec()
        p_values = []
        for rep in range(200):
            cohort = generate(n_triplets=12, n_peaks=10, signal_strength=0.0, seed=1000 + rep)
            p_values.append(
                pvalue(cohort, grid, build_pool(10), n_trials=200, seed=rep, threads=4).p_value
            )
        p_values = np.array(p_values)
        for delta in (0.05, 0.1, 0.25, 0.5):
            assert np.mean(p_values <= delta) <= delta + 0.06

    def test_planted_signal(self):
        cohort = generate(n_triplets=179, n_peaks=10, signal_strength=3.5, signal_horizon=15, seed=1)
        pool = build_pool(10)
        grid = GridSpec()
        # CA125 alone errs on roughly one triplet in twenty close to diagnosis.
        early = select_window(cohort, 0, 6)
        ca125_rate = expert_errors(early, pool)[pool.index(CA125_EXPERT)] / len(early)
        assert ca125_rate <= 0.12
        for t in range(0, 10):
            window = select_window(cohort, t, 6)
            assert pvalue(window, grid, pool, n_trials=1000, seed=t, threads=4).p_value < 0.05
        for t in (15, 16, 17, 18):
            window = select_window(cohort, t, 6)
            assert pvalue(window, grid, pool, n_trials=1000, seed=t, threads=4).p_value > 0.05
