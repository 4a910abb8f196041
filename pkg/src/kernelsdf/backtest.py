"""Rolling-window SDF backtests over architecture and ridge grids.

Formation months step through the panel on the retrain cadence.  At each
formation m the in-sample portfolio kernel is assembled from the trailing
window [m - window, m), factored once, and the entire ridge grid is swept
off that single factorization; every out-of-sample month until the next
retrain then costs one cross-kernel row shared by all grid points.  Weights
formed at m therefore see data through month m - 1 only — the no-look-ahead
contract is tested by mutation.

Ridge grid values are quoted in the unscaled kernel convention
(z I + Kbar)^{-1} 1; they reach the solver as z / T, which yields
identical weights (see :mod:`kernelsdf.solver`).

Performance statistics are the annualized Sharpe ratio (monthly mean over
sample std, times sqrt(12)) and the intercept t-statistic of an OLS
regression of the SDF series on user-supplied benchmark factor returns,
with classical homoskedastic standard errors.
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .kernels import ArchitectureSpec, KERNEL_CHOICES
from .panel import PanelDataset
from .ptk import ChunkPlan, NormalizationSpec, assemble_is_kernel, cross_kernel_row
from .solver import gd_weights, ridge_weights_grid, sdf_return

__all__ = [
    "BacktestConfig",
    "BacktestCell",
    "BacktestReport",
    "rolling_backtest",
    "sharpe",
    "alpha_regression",
    "AlphaStats",
    "DEFAULT_RIDGE_GRID",
]

MONTHS_PER_YEAR = 12
DEFAULT_RIDGE_GRID = tuple(float(10.0**k) for k in range(-5, 4))
DEFAULT_DEPTH_GRID = (1, 2, 4, 8, 16, 32, 64, 128)


@dataclass(frozen=True)
class BacktestConfig:
    """Everything that pins a backtest run.

    ``ridge_grid`` is interpreted in the unscaled kernel convention.  With
    ``weight_mode`` = "gradient_flow" the grid is ignored and one (eta, s)
    weight vector is used per cell.
    """

    window: int
    architectures: tuple
    ridge_grid: tuple = DEFAULT_RIDGE_GRID
    retrain_every: int = 6
    alpha: float = 0.5
    kernels: tuple = ("ntk",)
    weight_mode: str = "ridge"
    eta: float = 1.0
    s: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "architectures", tuple(self.architectures))
        object.__setattr__(self, "ridge_grid", tuple(float(z) for z in self.ridge_grid))
        object.__setattr__(self, "kernels", tuple(str(k).lower() for k in self.kernels))
        if self.window < 2:
            raise ValueError("window must be at least 2 months")
        if not self.ridge_grid:
            raise ValueError("ridge_grid must be nonempty")
        if any(z < 0 for z in self.ridge_grid):
            raise ValueError("ridge penalties must be nonnegative")
        if self.retrain_every < 1:
            raise ValueError("retrain_every must be positive")
        if not self.architectures:
            raise ValueError("need at least one architecture")
        if not all(isinstance(a, ArchitectureSpec) for a in self.architectures):
            raise TypeError("architectures must be ArchitectureSpec instances")
        for k in self.kernels:
            if k not in KERNEL_CHOICES:
                raise ValueError(f"unknown kernel {k!r}")
        if not self.kernels:
            raise ValueError("need at least one kernel")
        if self.weight_mode not in ("ridge", "gradient_flow"):
            raise ValueError("weight_mode must be 'ridge' or 'gradient_flow'")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "window": self.window,
            "architectures": [a.to_dict() for a in self.architectures],
            "ridge_grid": list(self.ridge_grid),
            "retrain_every": self.retrain_every,
            "alpha": self.alpha,
            "kernels": list(self.kernels),
            "weight_mode": self.weight_mode,
            "eta": self.eta,
            "s": self.s,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class BacktestCell:
    """One (architecture, kernel, regularization) out-of-sample series."""

    arch_label: str
    arch_fingerprint: str
    depth: int
    kernel: str
    weight_mode: str
    z: float
    oos_returns: np.ndarray
    sharpe: float = None
    sharpe_flag: str = ""
    alpha_stat: dict = None

    def key(self) -> tuple:
        return (self.arch_label, self.kernel, self.weight_mode,
                -1.0 if self.z is None else self.z)

    def to_json_dict(self) -> dict:
        return {
            "arch_label": self.arch_label,
            "arch_fingerprint": self.arch_fingerprint,
            "depth": self.depth,
            "kernel": self.kernel,
            "weight_mode": self.weight_mode,
            "z": self.z,
            "oos_returns": [float(v) for v in self.oos_returns],
            "sharpe": self.sharpe,
            "sharpe_flag": self.sharpe_flag,
            "alpha_stat": self.alpha_stat,
        }

    @classmethod
    def from_json_dict(cls, d) -> "BacktestCell":
        return cls(
            arch_label=d["arch_label"], arch_fingerprint=d["arch_fingerprint"],
            depth=d["depth"], kernel=d["kernel"], weight_mode=d["weight_mode"],
            z=d["z"], oos_returns=np.asarray(d["oos_returns"], dtype=float),
            sharpe=d["sharpe"], sharpe_flag=d["sharpe_flag"],
            alpha_stat=d["alpha_stat"],
        )


@dataclass
class BacktestReport:
    """Out-of-sample series per cell plus run provenance."""

    config_hash: str
    data_hash: str
    window: int
    oos_periods: tuple
    cells: list
    assembly_counts: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config_hash": self.config_hash,
            "data_hash": self.data_hash,
            "window": self.window,
            "oos_periods": list(self.oos_periods),
            "cells": [c.to_json_dict() for c in self.cells],
            "assembly_counts": dict(sorted(self.assembly_counts.items())),
        }

    @classmethod
    def from_json_dict(cls, d) -> "BacktestReport":
        return cls(
            config_hash=d["config_hash"], data_hash=d["data_hash"],
            window=d["window"], oos_periods=tuple(d["oos_periods"]),
            cells=[BacktestCell.from_json_dict(c) for c in d["cells"]],
            assembly_counts=dict(d["assembly_counts"]),
        )

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "arch": c.arch_label, "depth": c.depth, "kernel": c.kernel,
                "weight_mode": c.weight_mode, "z": c.z, "sharpe": c.sharpe,
                "sharpe_flag": c.sharpe_flag,
                "alpha": None if c.alpha_stat is None else c.alpha_stat["alpha"],
                "t_stat": None if c.alpha_stat is None else c.alpha_stat["t_stat"],
                "n_oos": len(c.oos_returns),
            }
            for c in self.cells
        ]
        return pd.DataFrame(rows)


def sharpe(series) -> float:
    """Annualized Sharpe ratio of a monthly return series.

    Raises ValueError for fewer than 2 observations or a zero-variance
    series (the ratio would be infinite).
    """
    r = np.asarray(series, dtype=float).ravel()
    if r.size < 2:
        raise ValueError("need at least 2 observations")
    sd = float(r.std(ddof=1))
    if sd == 0.0:
        raise ValueError("zero-variance series has no finite Sharpe ratio")
    return float(r.mean()) / sd * np.sqrt(MONTHS_PER_YEAR)


@dataclass
class AlphaStats:
    """Intercept and loadings of the benchmark regression."""

    alpha: float
    t_stat: float
    betas: np.ndarray
    se_alpha: float
    n_obs: int

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha, "t_stat": self.t_stat,
            "betas": [float(b) for b in self.betas],
            "se_alpha": self.se_alpha, "n_obs": self.n_obs,
        }


def alpha_regression(sdf_series, factor_matrix, factor_names=None) -> AlphaStats:
    """OLS of the SDF series on benchmark factors, with an intercept.

    t-statistic uses classical homoskedastic standard errors.  A
    rank-deficient design raises, naming the collinear columns.
    """
    y = np.asarray(sdf_series, dtype=float).ravel()
    F = np.atleast_2d(np.asarray(factor_matrix, dtype=float))
    if F.shape[0] != y.size:
        raise ValueError("series and factor matrix are misaligned")
    n, k = F.shape
    if n <= k + 1:
        raise ValueError(f"need more than k+1={k + 1} observations, got {n}")
    design = np.column_stack([np.ones(n), F])
    _, R = np.linalg.qr(design)
    diag = np.abs(np.diag(R))
    bad = np.flatnonzero(diag < 1e-10 * diag.max())
    if bad.size:
        names = factor_names or [f"factor_{j}" for j in range(k)]
        cols = ["intercept" if j == 0 else names[j - 1] for j in bad]
        raise ValueError(f"rank-deficient design; collinear columns: {cols}")
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = n - (k + 1)
    sigma2 = float(resid @ resid) / dof
    cov00 = sigma2 * np.linalg.inv(design.T @ design)[0, 0]
    se = float(np.sqrt(max(cov00, 0.0)))
    alpha = float(coef[0])
    if se == 0.0:
        t = 0.0 if alpha == 0.0 else np.inf * np.sign(alpha)
    else:
        t = alpha / se
    return AlphaStats(alpha=alpha, t_stat=float(t), betas=coef[1:], se_alpha=se, n_obs=n)


def _formation_indices(T: int, window: int, retrain_every: int) -> list:
    return list(range(window, T, retrain_every))


def _run_cell_group(panel, config, arch, kernel, norm):
    """All z-grid series for one (arch, kernel) pair; returns (series dict, counts)."""
    T = panel.n_periods
    forms = _formation_indices(T, config.window, config.retrain_every)
    n_oos = T - config.window
    if config.weight_mode == "ridge":
        grid = config.ridge_grid
    else:
        grid = (None,)
    series = {g: np.empty(n_oos) for g in grid}
    counts = {}
    for m in forms:
        train = panel.window(m - config.window, m)
        K = assemble_is_kernel(train, arch, kernel, norm,
                               plan=ChunkPlan.for_panel(train))
        key = f"{arch.fingerprint()}|{kernel}|{m}"
        counts[key] = counts.get(key, 0) + 1
        if config.weight_mode == "ridge":
            # grid values are unscaled-convention penalties; z/T lands on
            # the same weights through the normalized solver.
            weights = ridge_weights_grid(K, [z / config.window for z in config.ridge_grid])
            by_g = dict(zip(config.ridge_grid, weights))
        else:
            by_g = {None: gd_weights(K, config.eta, config.s)}
        stop = min(m + config.retrain_every, T)
        for mm in range(m, stop):
            row = cross_kernel_row(panel.R_next[mm], panel.X[mm], train,
                                   arch, kernel, norm)
            for g in grid:
                series[g][mm - config.window] = sdf_return(row, by_g[g])
    return series, counts


def rolling_backtest(panel: PanelDataset, config: BacktestConfig,
                     factors: pd.DataFrame = None, n_workers: int = 1) -> BacktestReport:
    """Run the full grid; optionally attach alpha stats vs a factor frame.

    ``factors`` is indexed by period label with one column per benchmark
    factor; it must cover every out-of-sample month.  Cell groups
    (arch x kernel) can run on a thread pool; results merge in a fixed
    order so the report does not depend on ``n_workers``.
    """
    T = panel.n_periods
    if T < config.window + 1:
        raise ValueError(
            f"panel has {T} months; needs more than window={config.window}"
        )
    norm = NormalizationSpec(alpha=config.alpha)
    oos_periods = panel.periods[config.window:]

    groups = [(arch, kernel) for arch in config.architectures for kernel in config.kernels]
    if n_workers <= 1:
        results = [_run_cell_group(panel, config, a, k, norm) for a, k in groups]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(
                lambda g: _run_cell_group(panel, config, g[0], g[1], norm), groups
            ))

    fac = None
    if factors is not None:
        missing = [p for p in oos_periods if p not in factors.index]
        if missing:
            raise ValueError(f"factor frame missing periods: {missing[:5]}")
        fac = factors.loc[list(oos_periods)].to_numpy(dtype=float)

    cells, counts = [], {}
    for (arch, kernel), (series, cts) in zip(groups, results):
        for key, c in cts.items():
            counts[key] = counts.get(key, 0) + c
        for g, ret in series.items():
            cell = BacktestCell(
                arch_label=arch.label(), arch_fingerprint=arch.fingerprint(),
                depth=arch.depth, kernel=kernel, weight_mode=config.weight_mode,
                z=g, oos_returns=ret,
            )
            try:
                cell.sharpe = sharpe(ret)
            except ValueError as exc:
                cell.sharpe = None
                cell.sharpe_flag = str(exc)
            if fac is not None:
                names = [str(c) for c in factors.columns]
                cell.alpha_stat = alpha_regression(ret, fac, names).to_json_dict()
            cells.append(cell)
    cells.sort(key=BacktestCell.key)
    return BacktestReport(
        config_hash=config.config_hash(), data_hash=panel.data_hash(),
        window=config.window, oos_periods=oos_periods, cells=cells,
        assembly_counts=counts,
    )
