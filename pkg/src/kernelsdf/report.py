"""Report emission: delimited series, JSON summary, and figure files.

All numeric CSVs render floats with 17 significant digits so that values
round-trip bit-exactly.  Output is deterministic for a fixed report — no
timestamps, sorted keys, fixed row order — which is what makes report
bytes comparable across reruns.  Figures are drawn straight onto Agg
canvases (no pyplot, no global backend state), so emission works the same
headless and in sessions with an interactive backend.
"""

import json
import os

import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from .backtest import BacktestReport

__all__ = ["emit_report", "read_report_json", "FLOAT_FMT"]

FLOAT_FMT = "%.17g"


def _series_frame(report: BacktestReport) -> pd.DataFrame:
    rows = []
    for cell in report.cells:
        for period, ret in zip(report.oos_periods, cell.oos_returns):
            rows.append({
                "arch": cell.arch_label, "depth": cell.depth,
                "kernel": cell.kernel, "weight_mode": cell.weight_mode,
                "z": cell.z, "period": period, "oos_return": ret,
            })
    cols = ["arch", "depth", "kernel", "weight_mode", "z", "period", "oos_return"]
    return pd.DataFrame(rows, columns=cols)


def _depth_profile_frame(report: BacktestReport) -> pd.DataFrame:
    df = report.to_frame()
    cols = ["kernel", "z", "depth", "sharpe", "alpha", "t_stat"]
    if df.empty:
        return pd.DataFrame(columns=cols)
    df = df[["kernel", "z", "depth", "sharpe", "alpha", "t_stat"]]
    return df.sort_values(["kernel", "z", "depth"], kind="mergesort").reset_index(drop=True)


def _fig_sharpe_vs_depth(report: BacktestReport, path) -> None:
    df = _depth_profile_frame(report).dropna(subset=["sharpe"])
    kernels = sorted(df["kernel"].unique()) if not df.empty else []
    if not kernels:
        return
    fig = Figure(figsize=(5.0 * len(kernels), 4.0))
    axes = fig.subplots(1, len(kernels), squeeze=False)[0]
    for ax, kern in zip(axes, kernels):
        sub = df[df["kernel"] == kern]
        zs = sorted(sub["z"].dropna().unique())
        cmap = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
        for i, z in enumerate(zs):
            line = sub[sub["z"] == z].sort_values("depth")
            ax.plot(line["depth"], line["sharpe"], marker="o",
                    color=cmap[i % len(cmap)], label=f"z={z:g}")
        nz = sub[sub["z"].isna()].sort_values("depth")
        if not nz.empty:
            ax.plot(nz["depth"], nz["sharpe"], marker="s", color="k", label="gd")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("depth (hidden layers)")
        ax.set_ylabel("annualized Sharpe")
        ax.set_title(kern)
        ax.legend(fontsize=7, ncol=2)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def _fig_cumulative(report: BacktestReport, path) -> None:
    best = {}
    for cell in report.cells:
        if cell.sharpe is None:
            continue
        cur = best.get(cell.kernel)
        if cur is None or cell.sharpe > cur.sharpe:
            best[cell.kernel] = cell
    if not best:
        return
    fig = Figure(figsize=(7.0, 4.0))
    ax = fig.subplots()
    x = np.arange(len(report.oos_periods))
    for kern in sorted(best):
        cell = best[kern]
        label = f"{kern} {cell.arch_label}" + ("" if cell.z is None else f" z={cell.z:g}")
        ax.plot(x, np.cumsum(cell.oos_returns), label=label)
    step = max(1, len(x) // 8)
    ax.set_xticks(x[::step])
    ax.set_xticklabels([report.oos_periods[i] for i in x[::step]], rotation=45, fontsize=7)
    ax.set_ylabel("cumulative SDF factor return")
    ax.set_title("best cell per kernel, out of sample")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def emit_report(report: BacktestReport, out_dir, formats=("csv", "json", "plots")) -> dict:
    """Write the report under ``out_dir``; returns {name: path} for each file."""
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    if "csv" in formats:
        p = os.path.join(out_dir, "series.csv")
        _series_frame(report).to_csv(p, index=False, float_format=FLOAT_FMT)
        written["series"] = p
        p = os.path.join(out_dir, "depth_profile.csv")
        _depth_profile_frame(report).to_csv(p, index=False, float_format=FLOAT_FMT)
        written["depth_profile"] = p
    if "json" in formats:
        p = os.path.join(out_dir, "summary.json")
        with open(p, "w") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written["summary"] = p
    if "plots" in formats:
        fig_dir = os.path.join(out_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        p = os.path.join(fig_dir, "sharpe_vs_depth.png")
        _fig_sharpe_vs_depth(report, p)
        if os.path.exists(p):
            written["sharpe_vs_depth"] = p
        p = os.path.join(fig_dir, "cumulative_oos.png")
        _fig_cumulative(report, p)
        if os.path.exists(p):
            written["cumulative_oos"] = p
    return written


def read_report_json(path) -> BacktestReport:
    """Load a summary.json back into a BacktestReport."""
    with open(path) as fh:
        return BacktestReport.from_json_dict(json.load(fh))
