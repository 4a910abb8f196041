"""Report emission: file layout, deterministic bytes, float round-trip
fidelity, and JSON reload.

The float oracle reads the delimited output back with Python's exact
`float()` parser rather than pandas, so a 17-significant-digit render must
reproduce the original doubles bit for bit.
"""

import csv
import hashlib
import json

import numpy as np
import pytest

from kernelsdf import (ArchitectureSpec, BacktestCell, BacktestConfig,
                       BacktestReport, SynthSpec, emit_report,
                       read_report_json, rolling_backtest, synth_panel)


@pytest.fixture(scope="module")
def report():
    panel, _ = synth_panel(SynthSpec(n_periods=20, n_assets=6, n_chars=3),
                           seed=1)
    config = BacktestConfig(
        window=12,
        architectures=(ArchitectureSpec.flat(1, 3, "relu"),
                       ArchitectureSpec.flat(2, 3, "relu"),
                       ArchitectureSpec.flat(4, 3, "relu")),
        ridge_grid=(0.1, 1.0), kernels=("ntk",))
    return rolling_backtest(panel, config)


def _sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


class TestEmitLayout:
    def test_all_files_written(self, report, tmp_path):
        written = emit_report(report, tmp_path)
        assert set(written) == {"series", "depth_profile", "summary",
                                "sharpe_vs_depth", "cumulative_oos"}
        assert (tmp_path / "series.csv").is_file()
        assert (tmp_path / "depth_profile.csv").is_file()
        assert (tmp_path / "summary.json").is_file()
        assert (tmp_path / "figures" / "sharpe_vs_depth.png").is_file()
        assert (tmp_path / "figures" / "cumulative_oos.png").is_file()
        for name in ("sharpe_vs_depth", "cumulative_oos"):
            with open(written[name], "rb") as fh:
                assert fh.read(8) == b"\x89PNG\r\n\x1a\n"

    def test_format_subsets(self, report, tmp_path):
        only_csv = emit_report(report, tmp_path / "a", formats=("csv",))
        assert set(only_csv) == {"series", "depth_profile"}
        only_json = emit_report(report, tmp_path / "b", formats=("json",))
        assert set(only_json) == {"summary"}
        assert not (tmp_path / "b" / "figures").exists()


class TestDeterminism:
    def test_double_emission_is_byte_identical(self, report, tmp_path):
        """Same report, two directories: every file, PNGs included, hashes
        the same (no timestamps or dict-order leakage)."""
        first = emit_report(report, tmp_path / "one")
        second = emit_report(report, tmp_path / "two")
        assert set(first) == set(second)
        for name in first:
            assert _sha(first[name]) == _sha(second[name]), name


class TestFloatRoundTrip:
    def test_series_csv_reproduces_doubles_exactly(self, report, tmp_path):
        written = emit_report(report, tmp_path, formats=("csv",))
        by_key = {}
        with open(written["series"]) as fh:
            for row in csv.DictReader(fh):
                key = (row["arch"], row["kernel"], row["weight_mode"],
                       float(row["z"]))
                by_key.setdefault(key, []).append(float(row["oos_return"]))
        for cell in report.cells:
            got = np.array(by_key[cell.key()])
            np.testing.assert_array_equal(got, cell.oos_returns)

    def test_depth_profile_sharpe_round_trips(self, report, tmp_path):
        written = emit_report(report, tmp_path, formats=("csv",))
        want = {(c.kernel, c.z, c.depth): c.sharpe for c in report.cells}
        with open(written["depth_profile"]) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(report.cells)
        for row in rows:
            key = (row["kernel"], float(row["z"]), int(row["depth"]))
            assert float(row["sharpe"]) == want[key]


class TestDepthProfileShape:
    def test_one_row_per_depth_within_kernel_z(self, report, tmp_path):
        written = emit_report(report, tmp_path, formats=("csv",))
        with open(written["depth_profile"]) as fh:
            rows = list(csv.DictReader(fh))
        groups = {}
        for row in rows:
            groups.setdefault((row["kernel"], row["z"]), []).append(
                int(row["depth"]))
        assert len(groups) == 2  # one kernel x two z values
        for depths in groups.values():
            assert depths == [1, 2, 4]  # sorted, one row per architecture


class TestJsonRoundTrip:
    def test_summary_reloads_to_equal_report(self, report, tmp_path):
        written = emit_report(report, tmp_path, formats=("json",))
        back = read_report_json(written["summary"])
        assert back.to_json_dict() == report.to_json_dict()

    def test_summary_is_sorted_and_newline_terminated(self, report, tmp_path):
        written = emit_report(report, tmp_path, formats=("json",))
        with open(written["summary"]) as fh:
            text = fh.read()
        assert text.endswith("\n")
        d = json.loads(text)
        assert list(d) == sorted(d)


class TestEdgeReports:
    def _flagged_report(self):
        cell = BacktestCell(
            arch_label="L1-relu", arch_fingerprint="0" * 12, depth=1,
            kernel="ntk", weight_mode="ridge", z=0.1,
            oos_returns=np.zeros(4), sharpe=None,
            sharpe_flag="zero-variance series has no finite Sharpe ratio")
        return BacktestReport(config_hash="c" * 16, data_hash="d" * 16,
                              window=2, oos_periods=("m1", "m2", "m3", "m4"),
                              cells=[cell])

    def test_all_flagged_cells_skip_figures(self, tmp_path):
        """With no finite Sharpe anywhere there is nothing to plot; the csv
        and json outputs still emit."""
        written = emit_report(self._flagged_report(), tmp_path)
        assert "sharpe_vs_depth" not in written
        assert "cumulative_oos" not in written
        assert (tmp_path / "series.csv").is_file()
        assert (tmp_path / "summary.json").is_file()

    def test_empty_report_emits_headers(self, tmp_path):
        rep = BacktestReport(config_hash="c" * 16, data_hash="d" * 16,
                             window=2, oos_periods=(), cells=[])
        written = emit_report(rep, tmp_path)
        with open(written["series"]) as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:2] == ["arch", "depth"]
        assert len(rows) == 1
