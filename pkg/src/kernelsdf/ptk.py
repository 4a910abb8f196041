"""Portfolio kernel assembly: contracting stock-level kernels with returns.

The similarity between two whole market states (X_t1, R_t1+1) and
(X_t2, R_t2+1) is the return-weighted contraction of the stock-level kernel,

    Kbar[t1, t2] = R_t1+1' K(X_t1, X_t2) R_t2+1 / (N_t1^alpha N_t2^alpha),

with alpha = 0.5 by default to stabilize scale across periods of different
cross-section size (alpha = 0 reproduces the raw contraction).  The T x T
in-sample matrix of these entries is itself a Gram matrix of factor returns,
hence symmetric PSD.

Assembly is memory-bounded: only one stock-level block K(X_t1, X_t2) is
resident per worker at a time, blocks can be row-chunked to respect a byte
budget, and the (t1 <= t2) schedule can run across threads — each block
writes a disjoint entry, so the result is identical for any worker count.

A matrix can be persisted as raw little-endian float64 (row-major) with a
JSON sidecar recording periods, alpha, the architecture fingerprint, and
which kernel was contracted.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .kernels import ArchitectureSpec, KernelKind, KernelMatrix, _check_which, kernel_gram
from .panel import PanelDataset

__all__ = [
    "NormalizationSpec",
    "ChunkPlan",
    "ptk_entry",
    "assemble_is_kernel",
    "cross_kernel_row",
    "save_kernel",
    "load_kernel",
]


@dataclass(frozen=True)
class NormalizationSpec:
    """Cross-section size normalization exponent; entries divide by N^alpha per side."""

    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class ChunkPlan:
    """Block schedule for in-sample assembly.

    ``schedule`` lists (t1, t2) index pairs covering the upper triangle
    exactly once (``None`` defers to the full upper triangle of whatever
    panel is assembled); ``max_block_rows`` caps how many rows of X_t1
    enter a single stock-level block (row-chunking kicks in above it).
    """

    max_block_rows: int
    schedule: tuple = None

    def __post_init__(self):
        if self.schedule is not None:
            object.__setattr__(
                self, "schedule", tuple((int(a), int(b)) for a, b in self.schedule)
            )
        if self.max_block_rows < 1:
            raise ValueError("max_block_rows must be positive")

    @classmethod
    def for_panel(cls, panel: PanelDataset, memory_budget_bytes: int = 64 * 2**20):
        """Upper-triangle pair schedule sized from a byte budget.

        The budget bounds one resident block: rows x max_t N_t x 8 bytes.
        """
        max_n = max(panel.n_assets(t) for t in range(panel.n_periods))
        rows = max(1, int(memory_budget_bytes // (8 * max_n)))
        sched = [
            (t1, t2)
            for t1 in range(panel.n_periods)
            for t2 in range(t1, panel.n_periods)
        ]
        return cls(max_block_rows=rows, schedule=tuple(sched))

    def covers_upper_triangle(self, T: int) -> bool:
        if self.schedule is None:
            return True
        need = {(a, b) for a in range(T) for b in range(a, T)}
        have = {(min(a, b), max(a, b)) for a, b in self.schedule}
        return need == have

    def pairs(self, T: int) -> tuple:
        """The scheduled pairs, defaulting to the upper triangle of a T-panel."""
        if self.schedule is not None:
            return self.schedule
        return tuple((t1, t2) for t1 in range(T) for t2 in range(t1, T))


def _block_value(X1, R1, X2, R2, arch, which, alpha, max_block_rows=None) -> float:
    """R1' K(X1, X2) R2 / (N1^a N2^a), row-chunked so one block stays resident."""
    n1, n2 = X1.shape[0], X2.shape[0]
    step = n1 if max_block_rows is None else min(n1, max_block_rows)
    acc = 0.0
    for lo in range(0, n1, step):
        hi = min(lo + step, n1)
        block = kernel_gram(X1[lo:hi], X2, arch, which).values
        acc += float(R1[lo:hi] @ block @ R2)
    return acc / (n1**alpha * n2**alpha)


def ptk_entry(t1, t2, panel: PanelDataset, arch: ArchitectureSpec, which="ntk",
              norm: NormalizationSpec = NormalizationSpec()) -> float:
    """One portfolio-kernel entry between two in-sample periods."""
    which = _check_which(which)
    i = panel.period_index(t1)
    j = panel.period_index(t2)
    return _block_value(
        panel.X[i], panel.R_next[i], panel.X[j], panel.R_next[j],
        arch, which, norm.alpha,
    )


def assemble_is_kernel(panel: PanelDataset, arch: ArchitectureSpec, which="ntk",
                       norm: NormalizationSpec = NormalizationSpec(),
                       plan: ChunkPlan = None, n_workers: int = 1) -> KernelMatrix:
    """The symmetric T x T in-sample portfolio kernel.

    Only the scheduled upper triangle is computed; the lower triangle is
    mirrored, so symmetry is exact.  With ``n_workers`` > 1 the schedule is
    spread over a thread pool; every block writes a disjoint entry and the
    output does not depend on the worker count.
    """
    which = _check_which(which)
    T = panel.n_periods
    if plan is None:
        plan = ChunkPlan.for_panel(panel)
    if not plan.covers_upper_triangle(T):
        raise ValueError("chunk plan does not cover the upper triangle exactly once")
    out = np.empty((T, T), dtype=float)

    def run_block(pair):
        t1, t2 = min(pair), max(pair)
        val = _block_value(
            panel.X[t1], panel.R_next[t1], panel.X[t2], panel.R_next[t2],
            arch, which, norm.alpha, plan.max_block_rows,
        )
        out[t1, t2] = val
        out[t2, t1] = val

    pairs = plan.pairs(T)
    if n_workers <= 1:
        for pair in pairs:
            run_block(pair)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run_block, pairs))
    return KernelMatrix(
        values=out, kind=KernelKind.PORTFOLIO_IS,
        row_labels=panel.periods, col_labels=panel.periods,
    )


def cross_kernel_row(R_oos, X_oos, panel: PanelDataset, arch: ArchitectureSpec,
                     which="ntk", norm: NormalizationSpec = NormalizationSpec(),
                     max_block_rows: int = None) -> np.ndarray:
    """Portfolio-kernel row between one out-of-sample state and every in-sample period."""
    which = _check_which(which)
    X_oos = np.atleast_2d(np.asarray(X_oos, dtype=float))
    R_oos = np.asarray(R_oos, dtype=float).ravel()
    if X_oos.shape[0] != R_oos.size:
        raise ValueError("out-of-sample returns and characteristics are misaligned")
    if X_oos.shape[1] != panel.n_chars:
        raise ValueError(
            f"out-of-sample state has {X_oos.shape[1]} characteristics, panel has {panel.n_chars}"
        )
    row = np.empty(panel.n_periods, dtype=float)
    for t in range(panel.n_periods):
        row[t] = _block_value(
            X_oos, R_oos, panel.X[t], panel.R_next[t],
            arch, which, norm.alpha, max_block_rows,
        )
    return row


# ---------------------------------------------------------------------------
# On-disk kernel cache: raw little-endian float64 + JSON sidecar.

def _sidecar_path(path) -> str:
    return str(path) + ".json"


def save_kernel(K: KernelMatrix, path, arch: ArchitectureSpec,
                norm: NormalizationSpec, which: str) -> None:
    """Persist a portfolio kernel as <path> (raw bytes) plus <path>.json."""
    values = np.ascontiguousarray(K.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(values.tobytes())
    sidecar = {
        "shape": list(K.values.shape),
        "dtype": "<f8",
        "order": "C",
        "kind": K.kind.value,
        "which": _check_which(which),
        "alpha": norm.alpha,
        "periods": list(K.row_labels or ()),
        "arch_fingerprint": arch.fingerprint(),
        "arch": arch.to_dict(),
        "schema_version": 1,
    }
    with open(_sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_kernel(path):
    """Load a cached kernel; returns (KernelMatrix, sidecar dict)."""
    with open(_sidecar_path(path)) as fh:
        sidecar = json.load(fh)
    shape = tuple(sidecar["shape"])
    raw = np.fromfile(path, dtype="<f8")
    if raw.size != shape[0] * shape[1]:
        raise ValueError(
            f"kernel file {path} holds {raw.size} values, sidecar says {shape}"
        )
    values = raw.reshape(shape).astype(float)
    labels = tuple(sidecar.get("periods") or ()) or None
    K = KernelMatrix(
        values=values, kind=KernelKind(sidecar["kind"]),
        row_labels=labels, col_labels=labels,
    )
    return K, sidecar


def default_cache_dir() -> str:
    """Cache directory for kernel files; honors KERNELSDF_CACHE_DIR."""
    return os.environ.get(
        "KERNELSDF_CACHE_DIR",
        os.path.join(os.path.expanduser("~"), ".cache", "kernelsdf"),
    )
