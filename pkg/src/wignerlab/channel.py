"""Mutual information, MMSE and posterior means for Gaussian channels with
discrete inputs.

Two parametrizations are used throughout, related by s = 1/t:

* signal-scaled:  y = sqrt(s) x0 + z          (``mi_scalar_signal``)
* noise-scaled:   y = x0 + sqrt(t) z          (``mi_scalar_noise``)

and their M-dimensional analogues with product input P_X^(x)M:

* signal-scaled:  y = S x0 + z, S symmetric PSD   (``mi_vector_signal``)
* noise-scaled:   y = x0 + Sigma^(1/2) z          (``mi_vector``)

All expectations over the input are exact atom sums; expectations over the
Gaussian use Gauss-Hermite quadrature (tensorized up to dimension 3) or Monte
Carlo above that.  Likelihood ratios are always formed in log space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from .priors import Prior

__all__ = [
    "GaussQuadrature",
    "NoiseCovariance",
    "gauss_hermite",
    "tensor_nodes",
    "atom_grid",
    "logsumexp_matmul",
    "mi_scalar_signal",
    "mi_scalar_noise",
    "mmse_scalar",
    "denoiser_scalar",
    "mi_vector_signal",
    "mi_vector",
    "check_mi_convexity",
    "psd_sqrt",
    "psd_inv_sqrt",
]

_PSD_EIG_FLOOR = -1e-10


@dataclass(frozen=True)
class GaussQuadrature:
    """Nodes/weights for expectations of f(z) with z ~ N(0, 1)."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        n = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0):
            raise ValueError("quadrature weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("quadrature weights must sum to 1")
        if self.order > 1 and abs(w @ n**2 - 1.0) > 1e-10:
            raise ValueError("quadrature must integrate z^2 to 1")
        n.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "nodes", n)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class NoiseCovariance:
    """Symmetric PSD noise covariance of an M-dimensional Gaussian channel."""

    sigma: np.ndarray
    dimension: int

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.shape != (self.dimension, self.dimension):
            raise ValueError("covariance shape does not match dimension")
        if np.max(np.abs(s - s.T)) > 1e-12:
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(s).min() < _PSD_EIG_FLOOR:
            raise ValueError("covariance must be positive semidefinite")
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)


@lru_cache(maxsize=32)
def gauss_hermite(order: int) -> GaussQuadrature:
    """Golub-Welsch rule for the unit-variance Gaussian weight.

    Eigen-decomposition of the symmetric Jacobi matrix of the probabilists'
    Hermite polynomials (off-diagonal sqrt(1..n-1)); weights are the squared
    first eigenvector components.  Nodes are symmetrized so that odd moments
    vanish identically.
    """
    if not 1 <= order <= 256:
        raise ValueError(f"order must be in [1, 256], got {order}")
    if order == 1:
        return GaussQuadrature(nodes=np.zeros(1), weights=np.ones(1), order=1)
    diag = np.zeros(order)
    off = np.sqrt(np.arange(1.0, order))
    # the default driver underflows the tiny edge weights to zero
    nodes, vecs = eigh_tridiagonal(diag, off, lapack_driver="stev")
    weights = vecs[0] ** 2
    nodes = (nodes - nodes[::-1]) / 2.0
    weights = (weights + weights[::-1]) / 2.0
    weights = weights / weights.sum()
    return GaussQuadrature(nodes=nodes, weights=weights, order=order)


def tensor_nodes(quad: GaussQuadrature, dim: int):
    """Tensorized grid: nodes (order^dim, dim) and product weights (order^dim,)."""
    grids = np.meshgrid(*([quad.nodes] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([quad.weights] * dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return nodes, weights


def atom_grid(prior: Prior, dim: int):
    """All k^dim product-prior configurations: values (k^dim, dim), log-weights."""
    k = prior.n_atoms
    idx = np.indices((k,) * dim).reshape(dim, -1).T
    values = prior.values[idx]
    logw = np.log(prior.weights)[idx].sum(axis=1)
    return values, logw


def logsumexp_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Stable ln(exp(A) @ exp(B)) for A (p, q) and B (q, r).

    Row maxima of A and column maxima of B are factored out so the matrix
    product runs on values in (0, 1]; this replaces a q-fold logsumexp per
    output entry with one BLAS product.
    """
    a_max = A.max(axis=1, keepdims=True)
    b_max = B.max(axis=0, keepdims=True)
    inner = np.exp(A - a_max) @ np.exp(B - b_max)
    return a_max + b_max + np.log(inner)


def mi_scalar_signal(prior: Prior, s: float, quad: GaussQuadrature) -> float:
    """I(x0; sqrt(s) x0 + z) in nats.

    Averages the log likelihood ratio ln p(y|x0)/p(y) with the exact atom
    mixture for p(y); expectation over x0 is an atom sum, over z quadrature.
    """
    if s < 0:
        raise ValueError("signal scale s must be nonnegative")
    v = prior.values
    logw = np.log(prior.weights)
    z = quad.nodes
    # arg[a, i, n] = (s v_a + sqrt(s) z_n)(v_i - v_a) - s (v_i^2 - v_a^2)/2
    d = v[None, :] - v[:, None]
    drift = s * v[:, None, None] + np.sqrt(s) * z[None, None, :]
    arg = drift * d[:, :, None] - 0.5 * s * (v[None, :, None] ** 2 - v[:, None, None] ** 2)
    lse = logsumexp(arg + logw[None, :, None], axis=1)
    value = -float(prior.weights @ (lse @ quad.weights))
    return max(value, 0.0) if value > -1e-12 else value


def mi_scalar_noise(prior: Prior, t: float, quad: GaussQuadrature) -> float:
    """I(x0; x0 + sqrt(t) z); identical to the signal-scaled form at s = 1/t."""
    if t <= 0:
        raise ValueError("noise level t must be positive (use the signal-scaled "
                         "form for the zero-noise limit)")
    return mi_scalar_signal(prior, 1.0 / t, quad)


def denoiser_scalar(prior: Prior, y, s: float):
    """Posterior mean E[x0 | sqrt(s) x0 + z = y]; accepts scalar or array y."""
    if s < 0:
        raise ValueError("signal scale s must be nonnegative")
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    v = prior.values
    logp = np.log(prior.weights)[None, :] + np.sqrt(s) * y_arr[:, None] * v[None, :] \
        - 0.5 * s * v[None, :] ** 2
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    m = (p @ v) / p.sum(axis=1)
    return float(m[0]) if np.isscalar(y) or np.asarray(y).ndim == 0 else m


def mmse_scalar(prior: Prior, s: float, quad: GaussQuadrature) -> float:
    """E (x0 - E[x0|y])^2 for y = sqrt(s) x0 + z; lies in [0, rho]."""
    if s < 0:
        raise ValueError("signal scale s must be nonnegative")
    v = prior.values
    y = np.sqrt(s) * v[:, None] + quad.nodes[None, :]          # (k, n)
    m = denoiser_scalar(prior, y.ravel(), s).reshape(y.shape)
    err = (v[:, None] - m) ** 2
    return float(prior.weights @ (err @ quad.weights))


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root; eigenvalues in [-1e-10, 0) are clipped to 0."""
    eigval, eigvec = np.linalg.eigh(mat)
    if eigval.min() < _PSD_EIG_FLOOR:
        raise ValueError("matrix is not positive semidefinite")
    eigval = np.clip(eigval, 0.0, None)
    return (eigvec * np.sqrt(eigval)) @ eigvec.T


def psd_inv_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a positive definite matrix."""
    eigval, eigvec = np.linalg.eigh(mat)
    if eigval.min() < _PSD_EIG_FLOOR:
        raise ValueError("matrix is not positive semidefinite")
    if eigval.min() <= 1e-12 * max(eigval.max(), 1.0):
        raise ValueError("matrix is numerically singular; the noise-scaled "
                         "channel needs an invertible covariance")
    return (eigvec / np.sqrt(eigval)) @ eigvec.T


def mi_vector_signal(prior: Prior, gain: np.ndarray, quad: GaussQuadrature) -> float:
    """I(x0; G x0 + z) for a symmetric PSD gain G, via tensorized quadrature.

    Works for any PSD gain including singular ones.  The log likelihood ratio
    reduces to -ln sum_k W_k exp(e_k' z - |e_k|^2/2) with e_k = G(v_k - x0),
    which is evaluated for all (x0, z) pairs through one stabilized
    exp-matmul per input configuration.
    """
    gain = np.asarray(gain, dtype=float)
    M = gain.shape[0]
    values, logw = atom_grid(prior, M)            # (K, M), (K,)
    z_nodes, z_w = tensor_nodes(quad, M)          # (Nz, M), (Nz,)
    E = values @ gain.T                           # rows: G v_k
    # G[k, n] = (G v_k)' z_n - |G v_k|^2 / 2 + ln W_k   (x0-independent part)
    G_part = E @ z_nodes.T - 0.5 * np.sum(E * E, axis=1)[:, None] + logw[:, None]
    # cross term between mixture component k and input configuration a
    C = E @ E.T                                   # (K, K)
    lse = logsumexp_matmul(C, G_part)             # (K_a, Nz): row a fixes x0
    own = E @ z_nodes.T + 0.5 * np.sum(E * E, axis=1)[:, None]
    integrand = lse - own                         # ln p(y)/p(y|x0) at (a, n)
    value = -float(np.exp(logw) @ (integrand @ z_w))
    return max(value, 0.0) if value > -1e-12 else value


def _mi_vector_mc(prior, inv_sqrt, n_samples, rng):
    """Monte Carlo over (x0, z) with the exact atom mixture for p(y)."""
    M = inv_sqrt.shape[0]
    values, logw = atom_grid(prior, M)
    E = values @ inv_sqrt.T                       # (K, M)
    half_norms = 0.5 * np.sum(E * E, axis=1)
    samples = []
    chunk = max(1, min(n_samples, (1 << 22) // max(E.shape[0], 1)))
    done = 0
    while done < n_samples:
        b = min(chunk, n_samples - done)
        x0 = prior.values[rng.choice(prior.n_atoms, size=(b, M), p=prior.weights)]
        z = rng.standard_normal((b, M))
        U = x0 @ inv_sqrt.T                       # rows: S x0
        arg = (E @ z.T) + (E @ U.T) - half_norms[:, None] + logw[:, None]
        lse = logsumexp(arg, axis=0)
        own = np.sum(U * z, axis=1) + 0.5 * np.sum(U * U, axis=1)
        samples.append(own - lse)
        done += b
    vals = np.concatenate(samples)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))


def mi_vector(prior: Prior, sigma, quad: GaussQuadrature, mc_budget: int = 200_000,
              rng: np.random.Generator | None = None):
    """I(x0; x0 + Sigma^(1/2) z) with product input.

    Dimension <= 3 uses tensorized quadrature and reports std_err = 0
    (quadrature-limited); above that a Monte Carlo estimate over (x0, z) with
    the exact k^M-atom mixture density is returned with its standard error.
    Requires an invertible covariance.
    """
    if isinstance(sigma, NoiseCovariance):
        mat, M = sigma.sigma, sigma.dimension
    else:
        mat = np.asarray(sigma, dtype=float)
        M = mat.shape[0]
    if mat.shape != (M, M):
        raise ValueError("covariance shape does not match its dimension")
    if np.max(np.abs(mat - mat.T)) > 1e-12:
        raise ValueError("covariance must be symmetric")
    if prior.n_atoms ** M > 1 << 20:
        raise ValueError("atom mixture k^M exceeds the 2^20 budget")
    inv_sqrt = psd_inv_sqrt(mat)
    if M <= 3:
        return mi_vector_signal(prior, inv_sqrt, quad), 0.0
    if rng is None:
        raise ValueError("dimension > 3 needs an rng for the Monte Carlo path")
    return _mi_vector_mc(prior, inv_sqrt, int(mc_budget), rng)


def check_mi_convexity(prior: Prior, t_grid, quad: GaussQuadrature) -> float:
    """Minimum central second difference of t -> I(x0; x0 + sqrt(t) z).

    The grid must be uniform and stay in t >= D^2, where that map is convex.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size < 3:
        raise ValueError("need at least 3 grid points")
    steps = np.diff(t)
    if np.any(steps <= 0):
        raise ValueError("grid must be strictly increasing")
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(steps[0], 1.0):
        raise ValueError("grid must be uniformly spaced")
    if t[0] < prior.support_bound**2 - 1e-12:
        raise ValueError("grid enters t < D^2 where convexity is not guaranteed")
    vals = np.array([mi_scalar_noise(prior, ti, quad) for ti in t])
    second = vals[2:] - 2.0 * vals[1:-1] + vals[:-2]
    return float(second.min())
