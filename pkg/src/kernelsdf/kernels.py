"""Analytic infinite-width kernels for fully-connected architectures.

A network with L hidden layers, activation phi, and standard-parametrization
initialization (weights N(0, sigma_w^(l)^2), biases N(0, sigma_b^(l)^2),
pre-activations scaled by 1/sqrt(layer width)) induces two deterministic
kernels in the infinite-width limit:

* the **NNGP kernel** — the covariance of the Gaussian process that the
  untrained network converges to; and
* the **NTK** — the limit of the parameter-gradient inner product
  grad f(x) . grad f(x~), which stays constant along gradient-descent
  training in the wide limit.

Both are driven by one two-dimensional recursion over layers.  Writing
Sigma^(1)(x, x~) = x.x~ / n0 and Theta^(1) = Sigma^(1) + 1 (the +1 is the
first bias), each hidden layer j = 0..L-1 maps

    a = sigma_w_j^2 Sigma_xx + sigma_b_j^2         (and likewise b, c)
    Sigma_next = V(a, b, c)
    Theta_next = Theta * sigma_w_{j+1}^2 Vdot(a, b, c) + Sigma_next + 1

where (V, Vdot) is the activation's Gaussian dual pair
(:func:`kernelsdf.activations.dual_activation`) and the trailing +1 is the
*next* layer's bias — absent on the final step because the scalar output
layer carries no bias.  After the loop, the NNGP output kernel is
sigma_w_L^2 * Sigma^(L+1) and the NTK is Theta^(L+1).

The recursion needs only the three per-pair statistics (Sigma(x,x),
Sigma(x~,x~), Sigma(x,x~)) at every layer, so a full Gram matrix costs one
vectorized sweep: self-variances once per side, the cross grid broadcast
against them.
"""

import enum
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind, _coerce_kind, dual_activation

__all__ = [
    "ArchitectureSpec",
    "KernelKind",
    "KernelMatrix",
    "nngp_step",
    "ntk_recursion",
    "kernel_gram",
    "KERNEL_CHOICES",
]

KERNEL_CHOICES = ("ntk", "nngp")

# Flat preset scales.
FLAT_SIGMA_W = 1.0
FLAT_SIGMA_B = 0.05


def _check_which(which: str) -> str:
    which = str(which).lower()
    if which not in KERNEL_CHOICES:
        raise ValueError(f"which must be one of {KERNEL_CHOICES}, got {which!r}")
    return which


@dataclass(frozen=True)
class ArchitectureSpec:
    """Pins one infinite-width kernel: depth, per-layer scales, activation.

    ``depth`` counts hidden layers.  ``sigma_w`` has depth+1 entries (hidden
    layers plus the scalar output layer); ``sigma_b`` has depth entries
    (the output layer has no bias).
    """

    depth: int
    sigma_w: tuple
    sigma_b: tuple
    activation: ActivationKind
    input_dim: int

    def __post_init__(self):
        object.__setattr__(self, "sigma_w", tuple(float(s) for s in self.sigma_w))
        object.__setattr__(self, "sigma_b", tuple(float(s) for s in self.sigma_b))
        object.__setattr__(self, "activation", _coerce_kind(self.activation))
        if self.depth < 1:
            raise ValueError("depth must be a positive number of hidden layers")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if len(self.sigma_w) != self.depth + 1:
            raise ValueError(
                f"sigma_w needs depth+1={self.depth + 1} entries, got {len(self.sigma_w)}"
            )
        if len(self.sigma_b) != self.depth:
            raise ValueError(
                f"sigma_b needs depth={self.depth} entries, got {len(self.sigma_b)}"
            )
        if any(s <= 0 for s in self.sigma_w):
            raise ValueError("sigma_w entries must be strictly positive")
        if any(s < 0 for s in self.sigma_b):
            raise ValueError("sigma_b entries must be nonnegative")

    @classmethod
    def flat(cls, depth, input_dim, activation=ActivationKind.RELU):
        """The flat preset: sigma_w = 1 and sigma_b = 0.05 at every layer."""
        return cls(
            depth=depth,
            sigma_w=(FLAT_SIGMA_W,) * (depth + 1),
            sigma_b=(FLAT_SIGMA_B,) * depth,
            activation=activation,
            input_dim=input_dim,
        )

    def label(self) -> str:
        return f"L{self.depth}-{self.activation.value}"

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "sigma_w": list(self.sigma_w),
            "sigma_b": list(self.sigma_b),
            "activation": self.activation.value,
            "input_dim": self.input_dim,
        }

    @classmethod
    def from_dict(cls, d) -> "ArchitectureSpec":
        return cls(
            depth=int(d["depth"]),
            sigma_w=tuple(d["sigma_w"]),
            sigma_b=tuple(d["sigma_b"]),
            activation=d["activation"],
            input_dim=int(d["input_dim"]),
        )

    def fingerprint(self) -> str:
        """Stable short hash identifying the architecture."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class KernelKind(str, enum.Enum):
    """What a KernelMatrix holds."""

    STOCK_LEVEL = "stock_level"
    PORTFOLIO_IS = "portfolio_is"
    PORTFOLIO_CROSS = "portfolio_cross"


@dataclass
class KernelMatrix:
    """A labeled kernel block.

    ``values`` is dense float64.  Labels are optional for anonymous stock
    blocks; portfolio matrices carry period labels.  Instances are treated
    as immutable after construction.
    """

    values: np.ndarray
    kind: KernelKind
    row_labels: tuple = None
    col_labels: tuple = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.kind = KernelKind(self.kind)
        if self.row_labels is not None:
            self.row_labels = tuple(self.row_labels)
        if self.col_labels is not None:
            self.col_labels = tuple(self.col_labels)
        if self.values.ndim != 2:
            raise ValueError("kernel values must be a 2-D matrix")

    @property
    def shape(self):
        return self.values.shape

    def is_square_symmetric(self, rtol=1e-10) -> bool:
        v = self.values
        if v.shape[0] != v.shape[1]:
            return False
        scale = max(float(np.max(np.abs(v))), 1e-300)
        return float(np.max(np.abs(v - v.T))) <= rtol * scale

    def min_eig_ratio(self) -> float:
        """min eigenvalue / max eigenvalue; >= -1e-8 counts as numerically PSD."""
        w = np.linalg.eigvalsh(0.5 * (self.values + self.values.T))
        top = max(float(w[-1]), 1e-300)
        return float(w[0]) / top

    def validate(self, rtol=1e-10, psd_tol=1e-8) -> None:
        """Check the symmetric-PSD contract for square labeled matrices."""
        same_labels = (
            self.row_labels is not None and self.row_labels == self.col_labels
        ) or (self.row_labels is None and self.col_labels is None)
        if self.values.shape[0] == self.values.shape[1] and same_labels:
            if not self.is_square_symmetric(rtol):
                raise ValueError("kernel matrix is not symmetric within tolerance")
            if self.min_eig_ratio() < -psd_tol:
                raise ValueError("kernel matrix is not numerically PSD")


def _dual_step(a_var, b_var, c_cov, sigma_w, sigma_b, kind):
    """One layer of the recursion on (possibly broadcast) arrays.

    Returns (V, Vdot) of the affinely rescaled covariance block
    (sigma_w^2 * Sigma + sigma_b^2).
    """
    sw2 = sigma_w * sigma_w
    sb2 = sigma_b * sigma_b
    return dual_activation(
        sw2 * a_var + sb2, sw2 * b_var + sb2, sw2 * c_cov + sb2, kind
    )


def nngp_step(sigma_prev, layer_w, layer_b, kind):
    """Map Sigma^(l-1) statistics (a, b, c) to the next-layer Sigma entry.

    ``sigma_prev`` is the (Var(x), Var(x~), Cov) triple of the previous
    layer's Gaussian restriction to the pair.
    """
    a, b, c = sigma_prev
    v, _ = _dual_step(
        np.asarray(a, float), np.asarray(b, float), np.asarray(c, float),
        float(layer_w), float(layer_b), kind,
    )
    return float(v) if np.ndim(v) == 0 else v


def _recursion_grids(sxx, stt, sxt, arch):
    """Run the layer recursion on broadcastable grids.

    ``sxx``/``stt`` are the per-side self-similarities (shapes (N,1) and
    (1,M)), ``sxt`` the cross grid (N,M).  Returns (theta, sigma) at the
    output layer; multiply sigma by sigma_w_L^2 for the NNGP output kernel.
    """
    kind = arch.activation
    theta = sxt + 1.0
    for j in range(arch.depth):
        sw, sb = arch.sigma_w[j], arch.sigma_b[j]
        sw2, sb2 = sw * sw, sb * sb
        a = sw2 * sxx + sb2
        b = sw2 * stt + sb2
        c = sw2 * sxt + sb2
        sxx, _ = dual_activation(a, a, a, kind)
        stt, _ = dual_activation(b, b, b, kind)
        sxt, vdot = dual_activation(a, b, c, kind)
        # sigma_w of the *next* layer scales the gradient flow through it;
        # the +1 is that layer's bias, absent on the biasless output layer.
        sw_next = arch.sigma_w[j + 1]
        theta = theta * (sw_next * sw_next * vdot) + sxt
        if j < arch.depth - 1:
            theta = theta + 1.0
    return theta, sxt


def ntk_recursion(x, x_tilde, arch):
    """Scalar limiting kernels for one input pair: (tangent, NNGP output).

    Both values are the actual output-layer kernels — the NNGP entry
    already carries the output weight scale.
    """
    x = np.asarray(x, dtype=float).ravel()
    xt = np.asarray(x_tilde, dtype=float).ravel()
    if x.size != arch.input_dim or xt.size != arch.input_dim:
        raise ValueError(
            f"inputs must have length input_dim={arch.input_dim}, "
            f"got {x.size} and {xt.size}"
        )
    n0 = float(arch.input_dim)
    sxx = np.asarray(x @ x / n0)
    stt = np.asarray(xt @ xt / n0)
    sxt = np.asarray(x @ xt / n0)
    theta, sigma = _recursion_grids(sxx, stt, sxt, arch)
    return float(theta), float(arch.sigma_w[-1] ** 2 * sigma)


def kernel_gram(X, X_tilde, arch, which="ntk"):
    """Dense kernel Gram block between the rows of two input matrices.

    ``which`` selects "ntk" (Theta^(L+1)) or "nngp"
    (sigma_w_L^2 * Sigma^(L+1)).  The recursion runs vectorized over the
    pair grid; self-similarities are computed once per side and broadcast.
    """
    which = _check_which(which)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xt = np.atleast_2d(np.asarray(X_tilde, dtype=float))
    if X.shape[1] != arch.input_dim or Xt.shape[1] != arch.input_dim:
        raise ValueError(
            f"column counts must equal input_dim={arch.input_dim}, "
            f"got {X.shape[1]} and {Xt.shape[1]}"
        )
    n0 = float(arch.input_dim)
    sxx = (np.einsum("ij,ij->i", X, X) / n0)[:, None]
    stt = (np.einsum("ij,ij->i", Xt, Xt) / n0)[None, :]
    sxt = X @ Xt.T / n0
    theta, sigma = _recursion_grids(sxx, stt, sxt, arch)
    if which == "ntk":
        values = theta
    else:
        sw_out = arch.sigma_w[-1]
        values = sw_out * sw_out * sigma
    return KernelMatrix(values=np.asarray(values, dtype=float), kind=KernelKind.STOCK_LEVEL)
