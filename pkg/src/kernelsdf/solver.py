"""SDF weights from the T x T portfolio kernel.

Given the in-sample portfolio kernel Kbar, the ridge-penalized efficient
factor weights are

    xi(z) = (1/T) (z I + Kbar / T)^{-1} 1,

and the gradient-flow weights after training time s with learning rate eta
apply the spectral filter f_GD(x) = (1 - e^{-eta s x}) / x to the
eigenvalues of Kbar / T (with the removable singularity f_GD(0) = eta s):

    xi(eta, s) = (1/T) U diag(f_GD(d)) U' 1,     Kbar / T = U diag(d) U'.

As s -> infinity the filter tends to 1/x and the weights recover the
ridgeless solution; for small eta*s they start near (eta*s/T) 1.  Ridge is
the same structure with filter f_ridge(x) = 1/(x + z); the "shrink factor"
x * f(x) in [0, 1] measures how much of each eigendirection survives.

Out-of-sample, the SDF factor return for a state with cross-kernel row k is
the plain dot product k . xi.  A z-grid written in the unscaled convention
(z I + Kbar)^{-1} 1 maps onto these weights exactly via z -> z / T; the
backtest layer applies that rescaling so its grid matches the unscaled
convention.

The module also carries the finite-P random-feature construction of the
shallow-network SDF, used to check that kernel weights are the P -> infinity
limit of feature ridge regressions (via the push-through identity
(z I + FF'/T)^{-1} F 1 = F (z I + F'F/T)^{-1} 1).
"""

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh

from .activations import apply_activation
from .kernels import ArchitectureSpec, KernelMatrix
from .panel import PanelDataset

__all__ = [
    "SdfWeights",
    "FactorPanel",
    "RandomFeatureSdf",
    "ridge_weights",
    "ridge_weights_grid",
    "gd_weights",
    "shrinkage_profile",
    "sdf_return",
    "random_feature_sdf",
]


@dataclass
class SdfWeights:
    """A T-vector of SDF period weights plus its regularization metadata.

    ``mode`` is "ridge" (parameter ``z``) or "gradient_flow" (parameters
    ``eta``, ``s``).
    """

    xi: np.ndarray
    mode: str
    z: float = None
    eta: float = None
    s: float = None
    kernel_fingerprint: str = ""
    periods: tuple = None

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float).ravel()
        if self.mode not in ("ridge", "gradient_flow"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not np.all(np.isfinite(self.xi)):
            raise ValueError("weights must be finite")
        if self.periods is not None:
            self.periods = tuple(str(p) for p in self.periods)
            if len(self.periods) != self.xi.size:
                raise ValueError("periods and xi lengths differ")

    def params(self) -> dict:
        if self.mode == "ridge":
            return {"z": self.z}
        return {"eta": self.eta, "s": self.s}

    def to_json_dict(self) -> dict:
        return {
            "periods": list(self.periods) if self.periods is not None else None,
            "xi": [float(v) for v in self.xi],
            "mode": self.mode,
            "params": self.params(),
            "kernel_fingerprint": self.kernel_fingerprint,
        }


@dataclass
class FactorPanel:
    """Random-feature factor returns: column t is F_t+1 = P^{-1/2} phi(X_t; W)' R_t+1."""

    F: np.ndarray
    feature_seed: int
    P: int

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        if self.F.ndim != 2 or self.F.shape[0] != self.P:
            raise ValueError("F must be P x T")


def _as_matrix(K):
    if isinstance(K, KernelMatrix):
        return K.values, K.row_labels
    return np.asarray(K, dtype=float), None


def _fingerprint(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()[:16]


def _chol_solve_spd(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve with an escalating jitter fallback (3 retries, x10 each)."""
    try:
        return cho_solve(cho_factor(A, lower=True), rhs)
    except LinAlgError:
        pass
    jitter = 1e-10 * float(np.trace(A)) / A.shape[0]
    jitter = max(jitter, 1e-300)
    eye = np.eye(A.shape[0])
    for _ in range(3):
        try:
            return cho_solve(cho_factor(A + jitter * eye, lower=True), rhs)
        except LinAlgError:
            jitter *= 10.0
    raise LinAlgError("matrix is not positive definite even after jitter")


def _check_z0_invertible(Kv: np.ndarray) -> None:
    w = np.linalg.eigvalsh(0.5 * (Kv + Kv.T))
    if w[0] <= 1e-12 * max(w[-1], 0.0):
        raise ValueError(
            "kernel is numerically singular at z=0; use a positive ridge penalty"
        )


def ridge_weights(K_IS, z: float) -> SdfWeights:
    """xi = (1/T) (z I + K/T)^{-1} 1, via symmetric factorization."""
    Kv, labels = _as_matrix(K_IS)
    if Kv.shape[0] != Kv.shape[1]:
        raise ValueError("in-sample kernel must be square")
    if z < 0:
        raise ValueError("ridge penalty must be nonnegative")
    T = Kv.shape[0]
    if z == 0.0:
        _check_z0_invertible(Kv)
    A = z * np.eye(T) + Kv / T
    xi = _chol_solve_spd(A, np.ones(T)) / T
    return SdfWeights(
        xi=xi, mode="ridge", z=float(z),
        kernel_fingerprint=_fingerprint(Kv), periods=labels,
    )


def ridge_weights_grid(K_IS, zs) -> list:
    """Ridge weights for every z in one pass off a single eigendecomposition.

    Equivalent to ``[ridge_weights(K, z) for z in zs]`` but factors the
    kernel once; this is what grid sweeps should call.
    """
    Kv, labels = _as_matrix(K_IS)
    T = Kv.shape[0]
    d, U = eigh(Kv / T)
    u1 = U.T @ np.ones(T)
    fp = _fingerprint(Kv)
    out = []
    for z in zs:
        if z < 0:
            raise ValueError("ridge penalty must be nonnegative")
        if z == 0.0 and d[0] <= 1e-12 * max(d[-1], 0.0):
            raise ValueError(
                "kernel is numerically singular at z=0; use a positive ridge penalty"
            )
        xi = U @ (u1 / (d + z)) / T
        out.append(SdfWeights(xi=xi, mode="ridge", z=float(z),
                              kernel_fingerprint=fp, periods=labels))
    return out


def _f_gd(x: np.ndarray, eta: float, s: float) -> np.ndarray:
    """(1 - e^{-eta s x}) / x with the removable singularity eta*s at x = 0."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x == 0.0, 1.0, x)
    return np.where(x == 0.0, eta * s, -np.expm1(-eta * s * x) / safe)


def gd_weights(K_IS, eta: float, s: float) -> SdfWeights:
    """Gradient-flow weights after training time s at learning rate eta."""
    Kv, labels = _as_matrix(K_IS)
    if eta <= 0:
        raise ValueError("eta must be positive")
    if s < 0:
        raise ValueError("s must be nonnegative")
    T = Kv.shape[0]
    d, U = eigh(Kv / T)
    d = np.maximum(d, 0.0)  # PSD contract; rounding noise treated as 0
    xi = U @ (_f_gd(d, eta, s) * (U.T @ np.ones(T))) / T
    return SdfWeights(
        xi=xi, mode="gradient_flow", eta=float(eta), s=float(s),
        kernel_fingerprint=_fingerprint(Kv), periods=labels,
    )


def shrinkage_profile(eigenvalues, mode: str, z: float = 0.0,
                      eta: float = 1.0, s: float = 1.0):
    """Spectral filter values and shrink factors per eigenvalue.

    Returns ``(f, shrink)`` with shrink = x * f(x): 1 means an
    eigendirection passes untouched, 0 means it is fully suppressed.
    """
    x = np.asarray(eigenvalues, dtype=float)
    if np.any(x < 0):
        raise ValueError("eigenvalues must be nonnegative")
    mode = {"gd": "gradient_flow"}.get(mode, mode)
    if mode == "ridge":
        denom = x + z
        with np.errstate(divide="ignore"):
            f = np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), np.inf)
        shrink = np.where(denom > 0, x / np.where(denom > 0, denom, 1.0), 0.0)
    elif mode == "gradient_flow":
        f = _f_gd(x, eta, s)
        shrink = -np.expm1(-eta * s * x)
    else:
        raise ValueError(f"unknown shrinkage mode {mode!r}")
    return f, shrink


def sdf_return(cross_row, xi) -> float:
    """Out-of-sample SDF factor return: cross-kernel row dotted with weights."""
    k = np.asarray(cross_row, dtype=float).ravel()
    w = xi.xi if isinstance(xi, SdfWeights) else np.asarray(xi, dtype=float).ravel()
    if k.size != w.size:
        raise ValueError(f"length mismatch: row has {k.size}, weights {w.size}")
    return float(k @ w)


@dataclass
class RandomFeatureSdf:
    """Finite-P feature-regression SDF with an out-of-sample closure."""

    theta: np.ndarray
    is_returns: np.ndarray
    factors: FactorPanel
    z: float
    _W: np.ndarray = None
    _b: np.ndarray = None
    _activation: object = None

    def oos_return(self, R_oos, X_oos) -> float:
        """SDF return for one out-of-sample cross-section."""
        F_new = _rf_factor(np.atleast_2d(np.asarray(X_oos, float)),
                           np.asarray(R_oos, float).ravel(),
                           self._W, self._b, self._activation)
        return float(self.theta @ F_new)


def _rf_factor(X, R, W, b, kind) -> np.ndarray:
    return apply_activation(X @ W.T + b, kind).T @ R / np.sqrt(W.shape[0])


def random_feature_sdf(panel: PanelDataset, P: int, seed: int, z: float,
                       arch_shallow: ArchitectureSpec) -> RandomFeatureSdf:
    """Ridge SDF on P sampled shallow-network features.

    Features are phi(w'x + b) with w ~ N(0, sigma_w_0^2 / n0 * I) and
    b ~ N(0, sigma_b_0^2) — the untrained one-hidden-layer network — so
    (1/P) sum_k phi_k(x) phi_k(x~) converges to Sigma^(2)(x, x~), the
    shallow NNGP kernel at unit output scale.  theta is computed in the
    primal when P <= T and pushed through to the T x T dual system when
    P > T; the two agree identically.
    """
    if arch_shallow.depth != 1:
        raise ValueError("random features are defined for depth-1 architectures")
    if P < 1:
        raise ValueError("P must be positive")
    if z < 0:
        raise ValueError("ridge penalty must be nonnegative")
    rng = np.random.default_rng(seed)
    n0 = arch_shallow.input_dim
    if panel.n_chars != n0:
        raise ValueError("panel characteristic count differs from architecture input_dim")
    W = rng.standard_normal((P, n0)) * (arch_shallow.sigma_w[0] / np.sqrt(n0))
    b = rng.standard_normal(P) * arch_shallow.sigma_b[0]
    kind = arch_shallow.activation

    T = panel.n_periods
    F = np.empty((P, T), dtype=float)
    for t in range(T):
        F[:, t] = _rf_factor(panel.X[t], panel.R_next[t], W, b, kind)

    theta = _rf_theta_primal(F, z) if P <= T else _rf_theta_dual(F, z)
    return RandomFeatureSdf(
        theta=theta, is_returns=F.T @ theta,
        factors=FactorPanel(F=F, feature_seed=seed, P=P),
        z=float(z), _W=W, _b=b, _activation=kind,
    )


def _rf_theta_primal(F: np.ndarray, z: float) -> np.ndarray:
    """theta from the P x P system (zI_P + FF'/T)^{-1} F 1 / T."""
    P, T = F.shape
    A = z * np.eye(P) + F @ F.T / T
    return _chol_solve_spd(A, F @ np.ones(T) / T)


def _rf_theta_dual(F: np.ndarray, z: float) -> np.ndarray:
    """The same theta through the T x T system: F (zI_T + F'F/T)^{-1} 1 / T."""
    P, T = F.shape
    A = z * np.eye(T) + F.T @ F / T
    return F @ _chol_solve_spd(A, np.ones(T)) / T
