"""Closed-form Gaussian dual activations.

For a centered bivariate Gaussian (u, v) with Var(u) = a, Var(v) = b and
Cov(u, v) = c, the *dual* of an activation phi is the pair of integrals

    V(a, b, c)    = E[phi(u) phi(v)]
    Vdot(a, b, c) = E[phi'(u) phi'(v)]

These two maps are the only activation-specific ingredients of the
infinite-width kernel recursions in :mod:`kernelsdf.kernels`.  Both are
available in closed form for the activations supported here:

* ``relu`` — the arc-cosine family.  With rho = c / sqrt(a*b),

      V    = sqrt(a*b) / (2 pi) * (sqrt(1 - rho^2) + rho * (pi - arccos rho))
      Vdot = (pi - arccos rho) / (2 pi)

  (Vdot is the Gaussian orthant probability P(u > 0, v > 0); the derivative
  at the kink is taken as phi'(0) = 0.)

* ``erf`` — the arcsine family,

      V    = (2 / pi) * arcsin( 2c / sqrt((1 + 2a)(1 + 2b)) )
      Vdot = (4 / pi) / sqrt((1 + 2a)(1 + 2b) - 4 c^2)

* ``linear`` — phi(u) = u, so V = c and Vdot = 1 exactly.  This tag exists
  as a validation hook: finite networks with a linear activation have a
  composed-linear-kernel limit that tests can evaluate by hand.

All formulas were locked against a brute-force Monte-Carlo integration of
the defining expectations before being wired into any recursion (see
``tests/test_activations.py``).
"""

import enum

import numpy as np

__all__ = [
    "ActivationKind",
    "dual_activation",
    "apply_activation",
    "activation_derivative",
]

# Correlations are clamped to |rho| <= 1 - RHO_CLAMP before inverse-trig
# evaluation: x = x~ sits exactly on the boundary where d/drho arccos blows up.
RHO_CLAMP = 1e-12


class ActivationKind(str, enum.Enum):
    """Supported activation functions.

    ``LINEAR`` is a test hook for finite-width validation runs; the
    infinite-width theory is exercised with ``RELU`` and ``ERF``.
    """

    RELU = "relu"
    ERF = "erf"
    LINEAR = "linear"


def _coerce_kind(kind) -> ActivationKind:
    if isinstance(kind, ActivationKind):
        return kind
    try:
        return ActivationKind(str(kind).lower())
    except ValueError:
        raise ValueError(
            f"unknown activation kind {kind!r}; expected one of "
            f"{[k.value for k in ActivationKind]}"
        ) from None


def _check_domain(a, b, c) -> None:
    if np.any(np.isnan(a)) or np.any(np.isnan(b)) or np.any(np.isnan(c)):
        raise ValueError("NaN in dual activation inputs")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("variances must be nonnegative")


def dual_activation(a, b, c, kind):
    """Evaluate (V, Vdot) for variances ``a``, ``b`` and covariance ``c``.

    Inputs may be scalars or broadcastable arrays; the result follows numpy
    broadcasting.  ``c`` is clamped to the valid covariance range before the
    inverse-trig calls, so boundary inputs (x = x~) are safe.

    Raises ``ValueError`` on negative variances or NaN inputs.
    """
    kind = _coerce_kind(kind)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    _check_domain(a, b, c)

    if kind is ActivationKind.RELU:
        sab = np.sqrt(a * b)
        # Degenerate marginals (a or b == 0) mean phi(u) phi(v) == 0 a.s.;
        # guard the division and zero those entries at the end.
        safe = sab > 0
        denom = np.where(safe, sab, 1.0)
        rho = np.clip(c / denom, -(1.0 - RHO_CLAMP), 1.0 - RHO_CLAMP)
        angle = np.arccos(rho)
        v = sab / (2.0 * np.pi) * (np.sqrt(1.0 - rho * rho) + rho * (np.pi - angle))
        vdot = (np.pi - angle) / (2.0 * np.pi)
        v = np.where(safe, v, 0.0)
        vdot = np.where(safe, vdot, 0.0)
    elif kind is ActivationKind.ERF:
        # (1+2a)(1+2b) - 4c^2 >= (1 + 2 sqrt(ab))^2 - 4ab > 0, so the arcsin
        # argument is strictly interior and Vdot never divides by zero; the
        # tiny floor only guards float rounding.
        prod = (1.0 + 2.0 * a) * (1.0 + 2.0 * b)
        arg = np.clip(2.0 * c / np.sqrt(prod), -(1.0 - RHO_CLAMP), 1.0 - RHO_CLAMP)
        v = 2.0 / np.pi * np.arcsin(arg)
        vdot = 4.0 / np.pi / np.sqrt(np.maximum(prod - 4.0 * c * c, 1e-300))
    else:  # LINEAR
        v = c + 0.0 * (a + b)  # broadcast to the common shape
        vdot = np.ones_like(v)

    if v.ndim == 0:
        return float(v), float(vdot)
    return v, vdot


def apply_activation(u, kind):
    """phi(u) elementwise."""
    kind = _coerce_kind(kind)
    u = np.asarray(u, dtype=float)
    if kind is ActivationKind.RELU:
        return np.maximum(u, 0.0)
    if kind is ActivationKind.ERF:
        from scipy.special import erf

        return erf(u)
    return u.copy()


def activation_derivative(u, kind):
    """phi'(u) elementwise, with the ReLU subgradient at 0 taken as 0."""
    kind = _coerce_kind(kind)
    u = np.asarray(u, dtype=float)
    if kind is ActivationKind.RELU:
        return (u > 0).astype(float)
    if kind is ActivationKind.ERF:
        return 2.0 / np.sqrt(np.pi) * np.exp(-u * u)
    return np.ones_like(u)
