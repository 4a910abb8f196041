"""Return-panel containers, ingestion, and synthetic generators.

A panel is a sequence of monthly cross-sections: for each period t a matrix
X_t of rank-standardized characteristics (N_t assets by d columns, every
entry in [-0.5, 0.5]) and the vector R_t+1 of excess returns realized over
the following month, aligned row by row.

Ingestion follows the standard preprocessing recipe for characteristic
panels: drop any stock-month with more than one third of its characteristics
missing, rank-transform each (period, characteristic) cross-section onto
[-0.5, 0.5] with average ranks for ties, and impute whatever is still
missing with 0 — the neutral midpoint of the standardized scale.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = [
    "PanelDataset",
    "CsvSchema",
    "IngestReport",
    "SynthSpec",
    "rank_standardize",
    "ingest_csv",
    "synth_panel",
    "save_panel",
    "load_panel",
]

MAX_MISSING_FRAC = 1.0 / 3.0


@dataclass
class PanelDataset:
    """Aligned per-period characteristic matrices and next-month returns.

    Treated as immutable after construction; windowing helpers return new
    instances that share the underlying arrays.
    """

    periods: tuple
    X: list
    R_next: list
    asset_ids: list
    columns: tuple = None

    def __post_init__(self):
        self.periods = tuple(str(p) for p in self.periods)
        self.X = [np.asarray(x, dtype=float) for x in self.X]
        self.R_next = [np.asarray(r, dtype=float).ravel() for r in self.R_next]
        self.asset_ids = [tuple(str(a) for a in ids) for ids in self.asset_ids]
        if self.columns is not None:
            self.columns = tuple(str(c) for c in self.columns)
        if not (len(self.periods) == len(self.X) == len(self.R_next) == len(self.asset_ids)):
            raise ValueError("periods, X, R_next and asset_ids must have equal length")
        for t, (x, r, ids) in enumerate(zip(self.X, self.R_next, self.asset_ids)):
            if x.ndim != 2:
                raise ValueError(f"X[{t}] must be 2-D")
            if x.shape[0] != r.size or x.shape[0] != len(ids):
                raise ValueError(f"period {self.periods[t]}: row misalignment")
            if x.shape[0] < 1:
                raise ValueError(f"period {self.periods[t]} is empty")
            if x.shape[1] != self.X[0].shape[1]:
                raise ValueError("characteristic count varies across periods")

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def n_chars(self) -> int:
        return self.X[0].shape[1]

    def n_assets(self, t: int) -> int:
        return self.X[t].shape[0]

    def period_index(self, period) -> int:
        if isinstance(period, (int, np.integer)):
            t = int(period)
            if not 0 <= t < self.n_periods:
                raise KeyError(f"period index {t} out of range")
            return t
        try:
            return self.periods.index(str(period))
        except ValueError:
            raise KeyError(f"unknown period {period!r}") from None

    def window(self, start: int, stop: int) -> "PanelDataset":
        """Sub-panel over the half-open period range [start, stop)."""
        if not (0 <= start < stop <= self.n_periods):
            raise ValueError(f"bad window [{start}, {stop}) for T={self.n_periods}")
        return PanelDataset(
            periods=self.periods[start:stop],
            X=self.X[start:stop],
            R_next=self.R_next[start:stop],
            asset_ids=self.asset_ids[start:stop],
            columns=self.columns,
        )

    def data_hash(self) -> str:
        """Stable content hash over periods, characteristics, and returns."""
        h = hashlib.sha256()
        for p, x, r, ids in zip(self.periods, self.X, self.R_next, self.asset_ids):
            h.update(p.encode())
            h.update(np.ascontiguousarray(x, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(r, dtype="<f8").tobytes())
            h.update("\x1f".join(ids).encode())
        return h.hexdigest()


def rank_standardize(values) -> np.ndarray:
    """Rank-map a 1-D cross-section onto [-0.5, 0.5].

    Uses (rank - 1) / (n - 1) - 0.5 over the non-missing entries, with
    average ranks for ties.  NaNs pass through (imputation is the caller's
    decision); a single-value cross-section maps to 0.
    """
    v = np.asarray(values, dtype=float)
    out = np.full(v.shape, np.nan)
    mask = ~np.isnan(v)
    n = int(mask.sum())
    if n == 0:
        return out
    if n == 1:
        out[mask] = 0.0
        return out
    ranks = pd.Series(v[mask]).rank(method="average").to_numpy()
    out[mask] = (ranks - 1.0) / (n - 1.0) - 0.5
    return out


@dataclass(frozen=True)
class CsvSchema:
    """Column naming for panel CSVs.

    Characteristic columns default to every column not otherwise named.
    """

    date_col: str = "date"
    asset_col: str = "asset_id"
    return_col: str = "ret_excess_next"
    characteristic_cols: tuple = None
    max_missing_frac: float = MAX_MISSING_FRAC


@dataclass
class IngestReport:
    """What happened during ingestion; rejects are (row_label, reason) pairs."""

    n_rows_read: int = 0
    n_rows_kept: int = 0
    n_rows_dropped_missing: int = 0
    n_values_imputed: int = 0
    rejects: list = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rejects, columns=["row", "reason"])


def ingest_csv(path_or_buffer, schema: CsvSchema = None):
    """Load a characteristics CSV into a PanelDataset.

    Returns ``(panel, report)``.  Unparsable rows land in the report's
    rejects list rather than being silently dropped; a period left empty
    after filtering is an error.
    """
    schema = schema or CsvSchema()
    df = pd.read_csv(path_or_buffer, dtype=str, keep_default_na=False)
    report = IngestReport(n_rows_read=len(df))

    for col in (schema.date_col, schema.asset_col, schema.return_col):
        if col not in df.columns:
            raise ValueError(f"missing required column {col!r}")
    char_cols = schema.characteristic_cols
    if char_cols is None:
        char_cols = tuple(
            c for c in df.columns
            if c not in (schema.date_col, schema.asset_col, schema.return_col)
        )
    else:
        char_cols = tuple(char_cols)
        missing = [c for c in char_cols if c not in df.columns]
        if missing:
            raise ValueError(f"characteristic columns not in file: {missing}")
    if not char_cols:
        raise ValueError("no characteristic columns found")

    # Parse numerics permissively: empty -> NaN, junk -> reject the row.
    # Conversion goes through Python float(), which rounds correctly and so
    # round-trips values written with repr/%.17g exactly (pandas' fast
    # string-to-float path can be a ulp off).
    def exact_numeric(series):
        vals = np.full(len(series), np.nan)
        bad = np.zeros(len(series), dtype=bool)
        for i, raw in enumerate(series.to_numpy()):
            text = raw.strip()
            if not text:
                continue
            try:
                value = float(text)
            except ValueError:
                bad[i] = True
                continue
            if np.isfinite(value):
                vals[i] = value
            else:
                bad[i] = True
        return (pd.Series(vals, index=series.index),
                pd.Series(bad, index=series.index))

    ret, bad_ret = exact_numeric(df[schema.return_col])
    chars = pd.DataFrame(index=df.index)
    bad_char = pd.Series(False, index=df.index)
    for c in char_cols:
        col, bad = exact_numeric(df[c])
        bad_char |= bad
        chars[c] = col
    empty_key = (df[schema.date_col].str.strip() == "") | (
        df[schema.asset_col].str.strip() == ""
    )
    missing_ret = df[schema.return_col].str.strip() == ""

    reject_mask = bad_ret | bad_char | empty_key | missing_ret
    for idx in df.index[reject_mask]:
        if empty_key.loc[idx]:
            reason = "missing date or asset id"
        elif missing_ret.loc[idx]:
            reason = "missing return"
        elif bad_ret.loc[idx]:
            reason = "non-numeric return"
        else:
            reason = "non-numeric characteristic"
        report.rejects.append((int(idx) + 2, reason))  # +2: header + 1-based

    keep = ~reject_mask
    df = df.loc[keep]
    ret = ret.loc[keep]
    chars = chars.loc[keep]

    # Missing-fraction filter precedes standardization.
    frac_missing = chars.isna().mean(axis=1)
    drop_missing = frac_missing > schema.max_missing_frac
    report.n_rows_dropped_missing = int(drop_missing.sum())
    df, ret, chars = df.loc[~drop_missing], ret.loc[~drop_missing], chars.loc[~drop_missing]
    report.n_rows_kept = len(df)
    if len(df) == 0:
        raise ValueError("no rows left after filtering")

    periods, X, R, ids = [], [], [], []
    for date, grp in df.groupby(df[schema.date_col], sort=True):
        block = chars.loc[grp.index].to_numpy(dtype=float)
        std = np.column_stack(
            [rank_standardize(block[:, j]) for j in range(block.shape[1])]
        )
        report.n_values_imputed += int(np.isnan(std).sum())
        std = np.nan_to_num(std, nan=0.0)
        periods.append(str(date))
        X.append(std)
        R.append(ret.loc[grp.index].to_numpy(dtype=float))
        ids.append(tuple(grp[schema.asset_col]))
    panel = PanelDataset(periods=periods, X=X, R_next=R, asset_ids=ids, columns=char_cols)
    return panel, report


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic panel generator parameters.

    ``signal`` is the planted weight function pi*(x): "linear" uses a fixed
    random linear map of the active characteristics; "fourier" uses
    sin/cos(pi x) of them.  Returns are R_t+1 = signal_scale * pi*(X_t)
    + noise_scale * eps.
    """

    n_periods: int
    n_assets: int
    n_chars: int
    signal: str = "linear"
    noise_scale: float = 1.0
    signal_scale: float = 1.0
    active_chars: tuple = None

    def __post_init__(self):
        if self.signal not in ("linear", "fourier"):
            raise ValueError("signal must be 'linear' or 'fourier'")
        if self.n_periods < 1 or self.n_assets < 1 or self.n_chars < 1:
            raise ValueError("n_periods, n_assets, n_chars must be positive")
        if self.active_chars is not None:
            object.__setattr__(self, "active_chars", tuple(int(a) for a in self.active_chars))
            if any(a < 0 or a >= self.n_chars for a in self.active_chars):
                raise ValueError("active_chars out of range")


def _planted_signal(X_std, spec: SynthSpec, coefs) -> np.ndarray:
    active = spec.active_chars
    if active is None:
        active = tuple(range(spec.n_chars))
    Z = X_std[:, list(active)]
    if spec.signal == "linear":
        return Z @ coefs
    # fourier: sum of sin and cos features of the active characteristics
    return (np.sin(np.pi * Z) @ coefs + np.cos(2.0 * np.pi * Z) @ coefs) / np.sqrt(2.0)


def synth_panel(spec: SynthSpec, seed: int):
    """Generate a deterministic synthetic panel.

    Returns ``(panel, truth)`` where ``truth`` records the planted
    coefficients and the noiseless signal per period, enough to compute
    oracle statistics for the generator.
    """
    rng = np.random.default_rng(seed)
    n_active = len(spec.active_chars) if spec.active_chars is not None else spec.n_chars
    coefs = rng.standard_normal(n_active)
    coefs /= np.linalg.norm(coefs) if n_active > 0 else 1.0

    periods, X, R, ids, signals = [], [], [], [], []
    for t in range(spec.n_periods):
        raw = rng.standard_normal((spec.n_assets, spec.n_chars))
        std = np.column_stack(
            [rank_standardize(raw[:, j]) for j in range(spec.n_chars)]
        )
        sig = _planted_signal(std, spec, coefs)
        eps = rng.standard_normal(spec.n_assets)
        r = spec.signal_scale * sig + spec.noise_scale * eps
        periods.append(f"{1990 + t // 12:04d}-{t % 12 + 1:02d}")
        X.append(std)
        R.append(r)
        ids.append(tuple(f"A{i:04d}" for i in range(spec.n_assets)))
        signals.append(sig)
    panel = PanelDataset(
        periods=periods, X=X, R_next=R, asset_ids=ids,
        columns=tuple(f"x{j}" for j in range(spec.n_chars)),
    )
    truth = {
        "coefs": coefs,
        "active_chars": spec.active_chars,
        "signals": signals,
        "spec": spec,
        "seed": seed,
    }
    return panel, truth


def panel_to_csv(panel: PanelDataset, path) -> None:
    """Write a panel back out in the ingestion CSV schema."""
    cols = panel.columns or tuple(f"x{j}" for j in range(panel.n_chars))
    frames = []
    for t in range(panel.n_periods):
        df = pd.DataFrame(panel.X[t], columns=list(cols))
        df.insert(0, "ret_excess_next", panel.R_next[t])
        df.insert(0, "asset_id", list(panel.asset_ids[t]))
        df.insert(0, "date", panel.periods[t])
        frames.append(df)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g")


def save_panel(panel: PanelDataset, path) -> None:
    """Serialize a panel to .npz."""
    arrays = {
        "periods": np.array(panel.periods),
        "columns": np.array(panel.columns or ()),
    }
    for t in range(panel.n_periods):
        arrays[f"X_{t:05d}"] = panel.X[t]
        arrays[f"R_{t:05d}"] = panel.R_next[t]
        arrays[f"ids_{t:05d}"] = np.array(panel.asset_ids[t])
    np.savez_compressed(path, **arrays)


def load_panel(path) -> PanelDataset:
    """Inverse of :func:`save_panel`."""
    with np.load(path, allow_pickle=False) as z:
        periods = [str(p) for p in z["periods"]]
        columns = tuple(str(c) for c in z["columns"]) or None
        X = [z[f"X_{t:05d}"] for t in range(len(periods))]
        R = [z[f"R_{t:05d}"] for t in range(len(periods))]
        ids = [tuple(str(a) for a in z[f"ids_{t:05d}"]) for t in range(len(periods))]
    return PanelDataset(periods=periods, X=X, R_next=R, asset_ids=ids, columns=columns)
