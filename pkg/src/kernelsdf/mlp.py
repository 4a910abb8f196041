"""Finite-width MLPs with exact gradients, for validating the kernel limits.

The network is the standard parametrization used by the infinite-width
recursions: for hidden layers l = 0..L-1,

    z^(l)(x) = W^(l) y^(l)(x) / sqrt(n_l) + b^(l),    y^(0) = x,
    y^(l+1)  = phi(z^(l)),

and the scalar output is f(x) = W^(L) y^(L) / sqrt(n_L) with no output bias.
Weights initialize i.i.d. N(0, sigma_w^(l)^2), biases N(0, sigma_b^(l)^2).

The lab provides reverse-mode gradients of f with respect to every
parameter (no autograd dependency — the chain rule is a dozen lines and we
want it auditable), the empirical tangent kernel grad f(x) . grad f(x~),
a Monte-Carlo check that wide untrained networks are Gaussian processes
with the analytic covariance, and the textbook Gaussian-process posterior
used to read predictions out of a kernel.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .activations import activation_derivative, apply_activation
from .kernels import ArchitectureSpec, kernel_gram

__all__ = [
    "MlpParams",
    "GpPosterior",
    "NngpTestReport",
    "init_mlp",
    "forward",
    "grad_theta",
    "empirical_ntk",
    "nngp_distribution_test",
    "ntk_convergence_errors",
    "gp_posterior",
]


@dataclass
class MlpParams:
    """Parameters of one finite network.

    ``widths`` is (n_0, ..., n_L): input dimension plus hidden widths.
    ``weights`` holds W^(0)..W^(L) with W^(l) of shape n_{l+1} x n_l (the
    output row W^(L) is 1 x n_L); ``biases`` holds b^(0)..b^(L-1).
    """

    weights: list
    biases: list
    widths: tuple
    arch: ArchitectureSpec
    seed: int

    @property
    def depth(self) -> int:
        return len(self.biases)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def flat_order(self):
        """The parameter blocks in flat-vector order: (W^(l), b^(l)) pairs, then W^(L)."""
        for w, b in zip(self.weights[:-1], self.biases):
            yield w
            yield b
        yield self.weights[-1]


def init_mlp(arch: ArchitectureSpec, hidden_widths, seed: int) -> MlpParams:
    """Draw a network at initialization; deterministic in ``seed``.

    ``hidden_widths`` gives (n_1, ..., n_L); the input width n_0 is
    ``arch.input_dim``.
    """
    hidden_widths = tuple(int(w) for w in hidden_widths)
    if len(hidden_widths) != arch.depth:
        raise ValueError(
            f"need {arch.depth} hidden widths for depth {arch.depth}, got {len(hidden_widths)}"
        )
    if any(w < 1 for w in hidden_widths):
        raise ValueError("hidden widths must be positive")
    widths = (arch.input_dim,) + hidden_widths
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for l in range(arch.depth):
        weights.append(rng.standard_normal((widths[l + 1], widths[l])) * arch.sigma_w[l])
        biases.append(rng.standard_normal(widths[l + 1]) * arch.sigma_b[l])
    weights.append(rng.standard_normal((1, widths[-1])) * arch.sigma_w[arch.depth])
    return MlpParams(weights=weights, biases=biases, widths=widths, arch=arch, seed=seed)


def _forward_batch(params: MlpParams, X: np.ndarray):
    """Forward pass on a batch (B x n_0); returns (f, preacts, activations).

    ``activations[l]`` is y^(l) (B x n_l) and ``preacts[l]`` is z^(l).
    """
    kind = params.arch.activation
    y = np.asarray(X, dtype=float)
    if y.ndim != 2 or y.shape[1] != params.widths[0]:
        raise ValueError(f"inputs must be B x {params.widths[0]}")
    activations = [y]
    preacts = []
    for l in range(params.depth):
        z = y @ params.weights[l].T / np.sqrt(params.widths[l]) + params.biases[l]
        preacts.append(z)
        y = apply_activation(z, kind)
        activations.append(y)
    f = (y @ params.weights[-1].T / np.sqrt(params.widths[-1]))[:, 0]
    return f, preacts, activations


def forward(params: MlpParams, x):
    """Scalar output and the per-layer preactivation vectors for one input."""
    f, preacts, _ = _forward_batch(params, np.asarray(x, dtype=float)[None, :])
    return float(f[0]), [z[0] for z in preacts]


def _backward(params: MlpParams, x):
    """Reverse accumulation for one input.

    Returns (f, deltas, activations) where deltas[l] = df/dz^(l); the
    parameter gradients are dW^(l) = outer(deltas[l], y^(l)) / sqrt(n_l),
    db^(l) = deltas[l], dW^(L) = y^(L) / sqrt(n_L).
    """
    kind = params.arch.activation
    f, preacts, activations = _forward_batch(params, np.asarray(x, dtype=float)[None, :])
    L = params.depth
    deltas = [None] * L
    if L > 0:
        up = params.weights[-1][0] / np.sqrt(params.widths[-1])
        deltas[L - 1] = up * activation_derivative(preacts[L - 1][0], kind)
        for l in range(L - 2, -1, -1):
            back = params.weights[l + 1].T @ deltas[l + 1] / np.sqrt(params.widths[l + 1])
            deltas[l] = back * activation_derivative(preacts[l][0], kind)
    return float(f[0]), deltas, [y[0] for y in activations]


def grad_theta(params: MlpParams, x) -> np.ndarray:
    """Flat gradient of f(x) over all parameters, in ``flat_order``."""
    _, deltas, ys = _backward(params, x)
    blocks = []
    for l in range(params.depth):
        gw = np.outer(deltas[l], ys[l]) / np.sqrt(params.widths[l])
        blocks.append(gw.ravel())
        blocks.append(deltas[l])
    blocks.append(ys[params.depth] / np.sqrt(params.widths[params.depth]))
    return np.concatenate(blocks)


def empirical_ntk(params: MlpParams, x, x_tilde) -> float:
    """grad f(x) . grad f(x~), accumulated per layer without flat copies.

    For each hidden layer the weight-block inner product factorizes as
    (delta . delta~)(y . y~)/n_l, which keeps width-4096 sweeps cheap.
    """
    _, d1, y1 = _backward(params, x)
    _, d2, y2 = _backward(params, x_tilde)
    total = 0.0
    for l in range(params.depth):
        dd = float(d1[l] @ d2[l])
        total += dd * float(y1[l] @ y2[l]) / params.widths[l]  # W^(l) block
        total += dd  # b^(l) block
    total += float(y1[-1] @ y2[-1]) / params.widths[-1]  # output row
    return total


@dataclass
class NngpTestReport:
    """Monte-Carlo Gaussianity check of network outputs at initialization."""

    widths: tuple
    n_seeds: int
    sample_mean: np.ndarray
    sample_cov: np.ndarray
    analytic_cov: np.ndarray
    max_rel_dev: float
    mean_bound: np.ndarray
    normality_pvalues: np.ndarray

    def mean_within_bound(self) -> bool:
        return bool(np.all(np.abs(self.sample_mean) <= self.mean_bound))

    def to_json_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "n_seeds": self.n_seeds,
            "sample_mean": self.sample_mean.tolist(),
            "sample_cov": self.sample_cov.tolist(),
            "analytic_cov": self.analytic_cov.tolist(),
            "max_rel_dev": self.max_rel_dev,
            "normality_pvalues": self.normality_pvalues.tolist(),
        }


def nngp_distribution_test(arch: ArchitectureSpec, hidden_widths, n_seeds: int,
                           x_batch, base_seed: int = 0) -> NngpTestReport:
    """Compare the across-seeds output covariance with the analytic kernel.

    Outputs of independent random networks on a fixed batch should be
    centered Gaussians with covariance sigma_w_L^2 Sigma^(L+1); the report
    carries the sample moments, the entrywise maximum relative deviation,
    a 4/sqrt(n_seeds) CLT bound for the mean, and a D'Agostino normality
    p-value per batch point.
    """
    if n_seeds < 200:
        raise ValueError("need at least 200 seeds for stable sample moments")
    X = np.atleast_2d(np.asarray(x_batch, dtype=float))
    outputs = np.empty((n_seeds, X.shape[0]))
    for i in range(n_seeds):
        params = init_mlp(arch, hidden_widths, base_seed + i)
        outputs[i], _, _ = _forward_batch(params, X)
    sample_mean = outputs.mean(axis=0)
    sample_cov = np.cov(outputs, rowvar=False, ddof=1)
    analytic = kernel_gram(X, X, arch, "nngp").values
    denom = np.maximum(np.abs(analytic), 1e-12)
    max_rel = float(np.max(np.abs(sample_cov - analytic) / denom))
    mean_bound = 4.0 * np.sqrt(np.diag(analytic) / n_seeds)
    pvalues = np.array([stats.normaltest(outputs[:, j]).pvalue for j in range(X.shape[0])])
    return NngpTestReport(
        widths=(arch.input_dim,) + tuple(int(w) for w in hidden_widths),
        n_seeds=n_seeds, sample_mean=sample_mean, sample_cov=sample_cov,
        analytic_cov=analytic, max_rel_dev=max_rel, mean_bound=mean_bound,
        normality_pvalues=pvalues,
    )


def ntk_convergence_errors(arch: ArchitectureSpec, width: int, pairs,
                           n_seeds: int, base_seed: int = 0) -> np.ndarray:
    """Per-pair relative error of the seed-averaged empirical NTK vs the limit.

    ``pairs`` is a sequence of (x, x~) tuples; hidden layers all use
    ``width``.  Returns |mean_seed NTK_hat - Theta| / |Theta| per pair.
    """
    from .kernels import ntk_recursion

    errs = np.empty(len(pairs))
    for i, (x, xt) in enumerate(pairs):
        theory, _ = ntk_recursion(x, xt, arch)
        acc = 0.0
        for s in range(n_seeds):
            params = init_mlp(arch, (width,) * arch.depth, base_seed + 1000 * i + s)
            acc += empirical_ntk(params, x, xt)
        errs[i] = abs(acc / n_seeds - theory) / abs(theory)
    return errs


@dataclass
class GpPosterior:
    """Posterior mean and variance of a GP at one test point."""

    mean: float
    variance: float


def gp_posterior(kernel_fn, X_train, Y_train, noise_var: float, x_star) -> GpPosterior:
    """Gaussian conditioning: condition a zero-mean GP on noisy observations.

        mean = k*' (noise I + K)^{-1} Y
        var  = k** - k*' (noise I + K)^{-1} k*

    ``kernel_fn(A, B)`` must return the kernel matrix between row sets.
    With ``noise_var`` 0 and duplicated training inputs the system is
    singular and a ValueError is raised.
    """
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    x_star = np.asarray(x_star, dtype=float).ravel()
    kss = float(np.asarray(kernel_fn(x_star[None, :], x_star[None, :])).reshape(()))
    X = np.asarray(X_train, dtype=float)
    if X.size == 0:
        return GpPosterior(mean=0.0, variance=kss)
    X = np.atleast_2d(X)
    Y = np.asarray(Y_train, dtype=float).ravel()
    if Y.size != X.shape[0]:
        raise ValueError("X_train and Y_train are misaligned")
    K = np.asarray(kernel_fn(X, X), dtype=float)
    ks = np.asarray(kernel_fn(X, x_star[None, :]), dtype=float).ravel()
    A = K + noise_var * np.eye(X.shape[0])
    try:
        factor = cho_factor(A, lower=True)
    except LinAlgError:
        raise ValueError(
            "singular GP system: duplicated inputs need positive noise variance"
        ) from None
    mean = float(ks @ cho_solve(factor, Y))
    var = kss - float(ks @ cho_solve(factor, ks))
    return GpPosterior(mean=mean, variance=max(var, 0.0))
