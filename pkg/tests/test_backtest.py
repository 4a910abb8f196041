"""Rolling out-of-sample evaluation: Sharpe/alpha statistics, formation
scheduling, look-ahead hygiene, and thread invariance.

Oracles: scipy.stats.linregress for the benchmark regression, a manual
assemble-and-solve replay for the ridge convention, and prefix-mutation
panels for the no-look-ahead property.
"""

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from kernelsdf import (ArchitectureSpec, BacktestConfig, BacktestReport,
                       ChunkPlan, NormalizationSpec, PanelDataset, SynthSpec,
                       alpha_regression, assemble_is_kernel, cross_kernel_row,
                       rolling_backtest, sharpe, synth_panel)


def make_panel(T=30, N=8, d=3, seed=0):
    panel, _ = synth_panel(SynthSpec(n_periods=T, n_assets=N, n_chars=d,
                                     noise_scale=0.5), seed=seed)
    return panel


def base_config(**kw):
    args = dict(window=12, architectures=(ArchitectureSpec.flat(1, 3, "relu"),),
                ridge_grid=(0.1, 1.0), retrain_every=6, alpha=0.5,
                kernels=("ntk",))
    args.update(kw)
    return BacktestConfig(**args)


class TestSharpe:
    def test_hand_arithmetic(self):
        r = np.array([0.01, 0.03, 0.02, 0.00])
        want = r.mean() / r.std(ddof=1) * np.sqrt(12.0)
        np.testing.assert_allclose(sharpe(r), want, rtol=1e-15)

    def test_sign_follows_mean(self):
        assert sharpe([-0.02, -0.01, -0.03]) < 0
        assert sharpe([0.02, 0.01, 0.03]) > 0

    def test_needs_two_observations(self):
        with pytest.raises(ValueError, match="at least 2"):
            sharpe([0.01])

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="zero-variance"):
            sharpe([0.02, 0.02, 0.02])


class TestAlphaRegression:
    def test_exact_affine_fit(self):
        """y = 1 + 1*f exactly: alpha = 1, beta = 1, zero residual."""
        out = alpha_regression([1.0, 2.0, 3.0], [[0.0], [1.0], [2.0]])
        np.testing.assert_allclose(out.alpha, 1.0, rtol=1e-12)
        np.testing.assert_allclose(out.betas, [1.0], rtol=1e-12)
        assert out.se_alpha < 1e-12
        assert out.t_stat > 1e10

    def test_single_factor_matches_linregress(self):
        rng = np.random.default_rng(0)
        f = rng.standard_normal(40)
        y = 0.3 + 0.8 * f + 0.1 * rng.standard_normal(40)
        out = alpha_regression(y, f[:, None], ["mkt"])
        ref = stats.linregress(f, y)
        np.testing.assert_allclose(out.alpha, ref.intercept, rtol=1e-10)
        np.testing.assert_allclose(out.betas[0], ref.slope, rtol=1e-10)
        np.testing.assert_allclose(out.se_alpha, ref.intercept_stderr,
                                   rtol=1e-10)
        np.testing.assert_allclose(out.t_stat, ref.intercept / ref.intercept_stderr,
                                   rtol=1e-10)
        assert out.n_obs == 40

    def test_collinear_columns_named(self):
        rng = np.random.default_rng(1)
        f = rng.standard_normal(20)
        F = np.column_stack([f, 2.0 * f])
        with pytest.raises(ValueError, match="dup"):
            alpha_regression(rng.standard_normal(20), F, ["mkt", "dup"])

    def test_misaligned_lengths(self):
        with pytest.raises(ValueError, match="misaligned"):
            alpha_regression(np.zeros(5), np.zeros((4, 1)))

    def test_too_few_observations(self):
        with pytest.raises(ValueError, match="observations"):
            alpha_regression(np.zeros(3), np.zeros((3, 2)))


class TestRollingSchedule:
    def test_oos_coverage_and_assembly_counts(self):
        """T=30, window=12, retrain 6: formations at 12/18/24 give 18
        out-of-sample months, each training kernel assembled exactly once."""
        panel = make_panel()
        config = base_config()
        rep = rolling_backtest(panel, config)
        assert len(rep.oos_periods) == 18
        assert rep.oos_periods == panel.periods[12:]
        assert rep.window == 12
        months = sorted(int(k.rsplit("|", 1)[1]) for k in rep.assembly_counts)
        assert months == [12, 18, 24]
        assert all(v == 1 for v in rep.assembly_counts.values())
        n_groups = len(config.architectures) * len(config.kernels)
        assert len(rep.assembly_counts) == 3 * n_groups
        for cell in rep.cells:
            assert len(cell.oos_returns) == 18
            assert np.isfinite(cell.oos_returns).all()

    def test_cells_cover_grid(self):
        panel = make_panel()
        config = base_config(
            architectures=(ArchitectureSpec.flat(1, 3, "relu"),
                           ArchitectureSpec.flat(2, 3, "relu")),
            kernels=("ntk", "nngp"))
        rep = rolling_backtest(panel, config)
        assert len(rep.cells) == 2 * 2 * 2  # arch x kernel x z
        keys = {(c.arch_label, c.kernel, c.z) for c in rep.cells}
        assert len(keys) == 8
        frame = rep.to_frame()
        assert set(frame.columns) >= {"arch", "depth", "kernel", "z", "sharpe"}
        assert len(frame) == 8

    def test_panel_shorter_than_window_rejected(self):
        panel = make_panel(T=10)
        with pytest.raises(ValueError, match="window"):
            rolling_backtest(panel, base_config())


class TestRidgeConvention:
    def test_first_oos_return_replayed_by_hand(self):
        """Cell z means: weights solve (z I + K_bar) xi = 1 on the training
        window, and the OOS return is the cross-kernel row dotted with xi."""
        panel = make_panel(T=15)
        arch = ArchitectureSpec.flat(1, 3, "relu")
        z = 0.7
        config = base_config(architectures=(arch,), ridge_grid=(z,),
                             retrain_every=12)
        rep = rolling_backtest(panel, config)
        cell = rep.cells[0]
        train = panel.window(0, 12)
        norm = NormalizationSpec(alpha=0.5)
        K = assemble_is_kernel(train, arch, "ntk", norm,
                               plan=ChunkPlan.for_panel(train))
        xi = np.linalg.solve(z * np.eye(12) + K.values, np.ones(12))
        for i, mm in enumerate((12, 13, 14)):
            row = cross_kernel_row(panel.R_next[mm], panel.X[mm], train,
                                   arch, "ntk", norm)
            np.testing.assert_allclose(cell.oos_returns[i], row @ xi,
                                       rtol=1e-9)


class TestNoLookAhead:
    def test_future_mutation_leaves_earlier_months_unchanged(self):
        """Scaling the last three months' returns can only move out-of-sample
        months that consume them; months 12..26 stay bit-identical."""
        panel = make_panel(seed=3)
        mutated = PanelDataset(
            periods=panel.periods, X=panel.X,
            R_next=[r if t < 27 else 2.0 * r
                    for t, r in enumerate(panel.R_next)],
            asset_ids=panel.asset_ids, columns=panel.columns)
        config = base_config()
        rep_a = rolling_backtest(panel, config)
        rep_b = rolling_backtest(mutated, config)
        for ca, cb in zip(rep_a.cells, rep_b.cells):
            np.testing.assert_array_equal(ca.oos_returns[:15],
                                          cb.oos_returns[:15])
            assert not np.array_equal(ca.oos_returns[15:], cb.oos_returns[15:])


class TestDeterminismAndThreads:
    def test_repeat_runs_identical(self):
        panel = make_panel(seed=4)
        config = base_config()
        a = rolling_backtest(panel, config).to_json_dict()
        b = rolling_backtest(panel, config).to_json_dict()
        assert a == b

    def test_worker_count_does_not_change_report(self):
        panel = make_panel(seed=5)
        config = base_config(
            architectures=(ArchitectureSpec.flat(1, 3, "relu"),
                           ArchitectureSpec.flat(2, 3, "erf")),
            kernels=("ntk", "nngp"))
        serial = rolling_backtest(panel, config, n_workers=1)
        pooled = rolling_backtest(panel, config, n_workers=3)
        assert serial.to_json_dict() == pooled.to_json_dict()


class TestDegenerateSeries:
    def test_constant_panel_flags_sharpe(self):
        """Identical months produce a constant series; the cell carries the
        zero-variance flag instead of a ratio."""
        base = make_panel(T=15, seed=6)
        X0, r0, ids0 = base.X[0], base.R_next[0], base.asset_ids[0]
        panel = PanelDataset(periods=base.periods, X=[X0] * 15,
                             R_next=[r0] * 15, asset_ids=[ids0] * 15,
                             columns=base.columns)
        rep = rolling_backtest(panel, base_config(ridge_grid=(0.5,)))
        cell = rep.cells[0]
        assert cell.sharpe is None
        assert "zero-variance" in cell.sharpe_flag
        assert np.ptp(cell.oos_returns) < 1e-12 * max(abs(cell.oos_returns[0]), 1.0)


class TestGradientFlowMode:
    def test_smoke_and_cell_shape(self):
        panel = make_panel(T=18, seed=7)
        config = base_config(weight_mode="gradient_flow", eta=1.0, s=5.0,
                             retrain_every=6)
        rep = rolling_backtest(panel, config)
        assert len(rep.cells) == 1
        cell = rep.cells[0]
        assert cell.weight_mode == "gradient_flow"
        assert cell.z is None
        assert np.isfinite(cell.oos_returns).all()


class TestFactors:
    def _factor_frame(self, panel, seed=8):
        rng = np.random.default_rng(seed)
        return pd.DataFrame({"mkt": rng.standard_normal(panel.n_periods)},
                            index=list(panel.periods))

    def test_alpha_attached_per_cell(self):
        panel = make_panel(seed=9)
        rep = rolling_backtest(panel, base_config(),
                               factors=self._factor_frame(panel))
        for cell in rep.cells:
            assert cell.alpha_stat is not None
            assert set(cell.alpha_stat) >= {"alpha", "t_stat", "se_alpha"}
            assert cell.alpha_stat["n_obs"] == 18

    def test_missing_periods_rejected(self):
        panel = make_panel(seed=10)
        frame = self._factor_frame(panel).iloc[:-3]
        with pytest.raises(ValueError, match="missing periods"):
            rolling_backtest(panel, base_config(), factors=frame)


class TestBacktestConfig:
    def test_validation_errors(self):
        arch = (ArchitectureSpec.flat(1, 3, "relu"),)
        with pytest.raises(ValueError, match="window"):
            BacktestConfig(window=1, architectures=arch)
        with pytest.raises(ValueError, match="nonempty"):
            BacktestConfig(window=12, architectures=arch, ridge_grid=())
        with pytest.raises(ValueError, match="nonnegative"):
            BacktestConfig(window=12, architectures=arch, ridge_grid=(-0.1,))
        with pytest.raises(ValueError, match="unknown kernel"):
            BacktestConfig(window=12, architectures=arch, kernels=("rbf",))
        with pytest.raises(ValueError, match="weight_mode"):
            BacktestConfig(window=12, architectures=arch, weight_mode="sgd")
        with pytest.raises(ValueError, match="alpha"):
            BacktestConfig(window=12, architectures=arch, alpha=1.5)
        with pytest.raises(TypeError, match="ArchitectureSpec"):
            BacktestConfig(window=12, architectures=("L2-relu",))

    def test_config_hash_tracks_content(self):
        a = base_config()
        b = base_config()
        c = base_config(ridge_grid=(0.1, 2.0))
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()


class TestReportRoundTrip:
    def test_json_round_trip(self):
        panel = make_panel(T=16, seed=11)
        rep = rolling_backtest(panel, base_config(ridge_grid=(0.3,)),
                               factors=None)
        back = BacktestReport.from_json_dict(rep.to_json_dict())
        assert back.to_json_dict() == rep.to_json_dict()
        np.testing.assert_array_equal(back.cells[0].oos_returns,
                                      rep.cells[0].oos_returns)
