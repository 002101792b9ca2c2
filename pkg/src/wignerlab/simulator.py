"""Finite-size spiked matrix instances and exact Bayes posteriors.

An instance observes Y = sqrt(lam/N) X0 X0' + Z with X0 (N x M) drawn i.i.d.
from a discrete prior and Z a symmetric Gaussian noise matrix (variance 2 on
the diagonal, 1 off it).  The log-likelihood of a candidate signal X is

    H_N(X) = (1/2) Tr( sqrt(lam/N) Z X X' + (lam/N) X0 X0' X X'
                       - (lam/2N) X X' X X' ),

optionally augmented by a side Gaussian channel of strength eps acting
entrywise on the signal,

    H^eps(X) = H_{N+1}(X) + Tr( sqrt(eps) X' Zt + eps X' X0 - (eps/2) X' X ),

where H_{N+1} evaluates the base Hamiltonian with coupling normalizer N+1 on
the same N x M spins.  For discrete priors all posterior quantities are
computed exactly by streaming enumeration of the k^(N M) configurations
(log-sum-exp in fixed chunk order), and disorder averages by Monte Carlo over
fresh (X0, Z, Zt) draws on counter-based streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .priors import Prior

__all__ = [
    "BudgetError",
    "ModelInstance",
    "PerturbationParams",
    "PosteriorSummary",
    "sample_instance",
    "hamiltonian",
    "perturbed_hamiltonian",
    "perturbation_response",
    "exact_posterior",
    "free_entropy_mc",
    "free_entropy_replicates",
    "posterior_replicates",
    "overlap_concentration",
    "perturbation_gap",
    "instance_to_json",
    "instance_from_json",
]

ENUM_BUDGET_BITS = 24          # enumeration cap: k^(N M) <= 2^24
_CHUNK = 1 << 16

TAG_INSTANCE = rngmod.tag("instance")
TAG_SIM = rngmod.tag("simulate")
TAG_PERT = rngmod.tag("perturbation")


class BudgetError(ValueError):
    """Enumeration budget k^(N M) <= 2^24 would be exceeded."""


@dataclass(frozen=True)
class ModelInstance:
    N: int
    M: int
    lam: float
    X0: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    seed: int


@dataclass(frozen=True)
class PerturbationParams:
    """Side-channel strength and its Gaussian coupling matrix."""

    epsilon: float
    Ztilde: np.ndarray
    s_N: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("perturbation strength must be nonnegative")


@dataclass(frozen=True)
class PosteriorSummary:
    log_partition: float
    free_entropy: float           # log_partition / (N M)
    mean_overlap: np.ndarray      # <R10>, M x M
    overlap_fluct: float          # <|R10 - <R10>|_F^2>
    matrix_mmse: float            # |X0 X0' - <X X'>|_F^2 / (N^2 M)
    config_count: int


def _draw_wigner(rng: np.random.Generator, n: int) -> np.ndarray:
    upper = np.triu(rng.standard_normal((n, n)), 1)
    diag = math.sqrt(2.0) * rng.standard_normal(n)
    return upper + upper.T + np.diag(diag)


def _draw_signal(prior: Prior, rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    idx = rng.choice(prior.n_atoms, size=(n, m), p=prior.weights)
    return prior.values[idx]


def _assemble(prior, N, M, lam, X0, Z, seed) -> ModelInstance:
    Y = math.sqrt(lam / N) * (X0 @ X0.T) + Z
    return ModelInstance(N=N, M=M, lam=lam, X0=X0, Z=Z, Y=Y, seed=seed)


def sample_instance(prior: Prior, N: int, M: int, lam: float, seed: int) -> ModelInstance:
    """Draw one instance; bit-identical on repeat for a fixed seed."""
    if N < 1 or M < 1:
        raise ValueError("dimensions must be positive")
    if lam < 0:
        raise ValueError("SNR must be nonnegative")
    rng = rngmod.stream(seed, TAG_INSTANCE)
    X0 = _draw_signal(prior, rng, N, M)
    Z = _draw_wigner(rng, N)
    return _assemble(prior, N, M, lam, X0, Z, seed)


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------

def _hamiltonian_terms(X: np.ndarray, X0: np.ndarray, Z: np.ndarray):
    """Batched trace terms for configurations X of shape (C, N, M)."""
    C, N, M = X.shape
    flat = X.transpose(1, 0, 2).reshape(N, C * M)
    ZX = (Z @ flat).reshape(N, C, M).transpose(1, 0, 2)
    t_noise = np.einsum("cim,cim->c", ZX, X)
    cross = X.transpose(0, 2, 1).reshape(C * M, N) @ X0        # rows: (X' X0)
    t_signal = np.einsum("cm,cm->c", cross.reshape(C, -1), cross.reshape(C, -1))
    gram = np.matmul(X.transpose(0, 2, 1), X)                  # X' X, (C, M, M)
    t_quartic = np.einsum("cmn,cmn->c", gram, gram)
    return t_noise, t_signal, t_quartic, cross.reshape(C, M, M)


def _hamiltonian_batch(X, X0, Z, lam, denom, pert: PerturbationParams | None,
                       return_cross: bool = False):
    t_noise, t_signal, t_quartic, cross = _hamiltonian_terms(X, X0, Z)
    H = 0.5 * (math.sqrt(lam / denom) * t_noise
               + (lam / denom) * t_signal
               - (lam / (2.0 * denom)) * t_quartic)
    if pert is not None:
        eps = pert.epsilon
        s_side = np.einsum("cim,im->c", X, pert.Ztilde)
        s_align = np.einsum("cim,im->c", X, X0)
        s_norm = np.einsum("cim,cim->c", X, X)
        H = H + math.sqrt(eps) * s_side + eps * s_align - 0.5 * eps * s_norm
    return (H, cross) if return_cross else H


def hamiltonian(instance: ModelInstance, X) -> float:
    """Base log-likelihood H_N(X)."""
    X = np.asarray(X, dtype=float).reshape(1, instance.N, instance.M)
    return float(_hamiltonian_batch(X, instance.X0, instance.Z, instance.lam,
                                    instance.N, None)[0])


def perturbed_hamiltonian(instance: ModelInstance, pert: PerturbationParams, X) -> float:
    """H_{N+1}(X) plus the side-channel trace term of strength eps."""
    X = np.asarray(X, dtype=float).reshape(1, instance.N, instance.M)
    return float(_hamiltonian_batch(X, instance.X0, instance.Z, instance.lam,
                                    instance.N + 1, pert)[0])


def perturbation_response(instance: ModelInstance, pert: PerturbationParams, X) -> float:
    """Auxiliary statistic -(1/N) d/d(eps) H^eps(X); needs eps > 0."""
    if pert.epsilon <= 0:
        raise ValueError("the eps-derivative is singular at eps = 0")
    X = np.asarray(X, dtype=float).reshape(instance.N, instance.M)
    trace = (np.sum(X * pert.Ztilde) / (2.0 * math.sqrt(pert.epsilon))
             + np.sum(X * instance.X0)
             - 0.5 * np.sum(X * X))
    return -trace / instance.N


# ---------------------------------------------------------------------------
# exact posterior by enumeration
# ---------------------------------------------------------------------------

def _check_budget(prior: Prior, N: int, M: int):
    bits = N * M * math.log2(prior.n_atoms)
    if bits > ENUM_BUDGET_BITS + 1e-9:
        raise BudgetError(
            f"enumeration of {prior.n_atoms}^{N * M} configurations exceeds "
            f"the 2^{ENUM_BUDGET_BITS} budget (N={N}, M={M})")
    return prior.n_atoms ** (N * M)


def _config_chunks(prior: Prior, N: int, M: int, chunk: int = _CHUNK):
    """Stream configurations base-k over N*M digits, in fixed index order."""
    k = prior.n_atoms
    total = k ** (N * M)
    log_w = np.log(prior.weights)
    powers = k ** np.arange(N * M, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % k
        X = prior.values[digits].reshape(-1, N, M)
        logW = log_w[digits].sum(axis=1)
        yield X, logW


def exact_posterior(instance: ModelInstance, pert: PerturbationParams | None,
                    prior: Prior) -> PosteriorSummary:
    """Exact posterior summary by enumeration of all configurations.

    ``pert=None`` uses the base Hamiltonian H_N; otherwise the side-channel
    form with the N+1 coupling normalizer.  Two streaming passes: the first
    accumulates ln Z by log-sum-exp, the second the Gibbs averages.
    """
    N, M = instance.N, instance.M
    total = _check_budget(prior, N, M)
    denom = N if pert is None else N + 1

    running_max = -np.inf
    running_sum = 0.0
    for X, logW in _config_chunks(prior, N, M):
        g = _hamiltonian_batch(X, instance.X0, instance.Z, instance.lam, denom,
                               pert) + logW
        m = float(g.max())
        if m > running_max:
            running_sum *= math.exp(running_max - m)
            running_max = m
        running_sum += float(np.exp(g - running_max).sum())
    log_z = running_max + math.log(running_sum)

    mean_R = np.zeros((M, M))
    mean_R2 = 0.0
    mean_XXT = np.zeros((N, N))
    for X, logW in _config_chunks(prior, N, M):
        H, cross = _hamiltonian_batch(X, instance.X0, instance.Z, instance.lam,
                                      denom, pert, return_cross=True)
        p = np.exp(H + logW - log_z)
        R = cross / N                               # X' X0 / N per configuration
        mean_R += np.einsum("c,cmn->mn", p, R)
        mean_R2 += float(p @ np.einsum("cmn,cmn->c", R, R))
        C, _, _ = X.shape
        A = X.transpose(0, 2, 1).reshape(C * M, N)
        mean_XXT += A.T @ (A * np.repeat(p, M)[:, None])

    fluct = max(mean_R2 - float(np.sum(mean_R * mean_R)), 0.0)
    truth = instance.X0 @ instance.X0.T
    mmse = float(np.sum((truth - mean_XXT) ** 2)) / (N * N * M)
    return PosteriorSummary(
        log_partition=log_z,
        free_entropy=log_z / (N * M),
        mean_overlap=mean_R,
        overlap_fluct=fluct,
        matrix_mmse=mmse,
        config_count=total,
    )


# ---------------------------------------------------------------------------
# disorder averages
# ---------------------------------------------------------------------------

def _log_partition_only(instance, pert, prior):
    N, M = instance.N, instance.M
    _check_budget(prior, N, M)
    denom = N if pert is None else N + 1
    running_max = -np.inf
    running_sum = 0.0
    for X, logW in _config_chunks(prior, N, M):
        g = _hamiltonian_batch(X, instance.X0, instance.Z, instance.lam, denom,
                               pert) + logW
        m = float(g.max())
        if m > running_max:
            running_sum *= math.exp(running_max - m)
            running_max = m
        running_sum += float(np.exp(g - running_max).sum())
    return running_max + math.log(running_sum)


def _replicate_disorder(prior, N, M, rng, master=None):
    """Fresh (X0, Z, Ztilde); with ``master=(n_big, m_big)`` the draw happens
    at the master shape and the top-left blocks are returned, giving common
    random numbers across system sizes."""
    n_big, m_big = master if master is not None else (N, M)
    if n_big < N or m_big < M:
        raise ValueError("master shape smaller than requested system")
    X0 = _draw_signal(prior, rng, n_big, m_big)
    Z = _draw_wigner(rng, n_big)
    Zt = rng.standard_normal((n_big, m_big))
    return X0[:N, :M], Z[:N, :N], Zt[:N, :M]


def free_entropy_replicates(prior: Prior, N: int, M: int, lam: float, *,
                            epsilon: float = 0.0, replicates: int, seed: int,
                            master=None) -> np.ndarray:
    """Per-replicate free entropies ln Z / (N M).

    epsilon = 0 evaluates the base Hamiltonian H_N; epsilon > 0 the
    side-channel form (N+1 normalizer).  Replicate r uses the counter-based
    stream (seed, simulate-tag, r) regardless of execution order.
    """
    _check_budget(prior, N, M)
    out = np.empty(replicates)
    for r in range(replicates):
        rng = rngmod.stream(seed, TAG_SIM, r)
        X0, Z, Zt = _replicate_disorder(prior, N, M, rng, master)
        inst = _assemble(prior, N, M, lam, X0, Z, seed)
        pert = None if epsilon == 0.0 else PerturbationParams(epsilon=epsilon, Ztilde=Zt)
        out[r] = _log_partition_only(inst, pert, prior) / (N * M)
    return out


def free_entropy_mc(prior: Prior, N: int, M: int, lam: float, epsilon: float,
                    replicates: int, seed: int):
    """Disorder-averaged free entropy and its standard error."""
    vals = free_entropy_replicates(prior, N, M, lam, epsilon=epsilon,
                                   replicates=replicates, seed=seed)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(replicates))


def posterior_replicates(prior: Prior, N: int, M: int, lam: float, *,
                         epsilon: float = 0.0, replicates: int, seed: int,
                         master=None) -> list[PosteriorSummary]:
    """Full posterior summaries over disorder replicates (common streams with
    free_entropy_replicates for identical parameters)."""
    _check_budget(prior, N, M)
    out = []
    for r in range(replicates):
        rng = rngmod.stream(seed, TAG_SIM, r)
        X0, Z, Zt = _replicate_disorder(prior, N, M, rng, master)
        inst = _assemble(prior, N, M, lam, X0, Z, seed)
        pert = None if epsilon == 0.0 else PerturbationParams(epsilon=epsilon, Ztilde=Zt)
        out.append(exact_posterior(inst, pert, prior))
    return out


def overlap_concentration(prior: Prior, N: int, M: int, lam: float, s_N: float,
                          n_eps: int, replicates: int, seed: int):
    """Average posterior overlap fluctuation over eps in [s_N, 2 s_N].

    Midpoint rule on an n_eps grid, one common disorder draw per replicate
    across the grid.  Returns (estimate, std_err, Gamma) with the concentration
    scale Gamma = M^2 / sqrt(N s_N).
    """
    if n_eps < 2:
        raise ValueError("need at least 2 grid points for the eps average")
    if s_N <= 0:
        raise ValueError("schedule value s_N must be positive")
    _check_budget(prior, N, M)
    eps_grid = s_N * (1.0 + (np.arange(n_eps) + 0.5) / n_eps)
    vals = np.empty(replicates)
    for r in range(replicates):
        rng = rngmod.stream(seed, TAG_PERT, r)
        X0, Z, Zt = _replicate_disorder(prior, N, M, rng)
        inst = _assemble(prior, N, M, lam, X0, Z, seed)
        flucts = [
            exact_posterior(inst, PerturbationParams(epsilon=float(e), Ztilde=Zt,
                                                     s_N=s_N), prior).overlap_fluct
            for e in eps_grid
        ]
        vals[r] = np.mean(flucts)
    gamma = M**2 / math.sqrt(N * s_N)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(replicates)), gamma


def perturbation_gap_replicates(prior: Prior, N: int, M: int, lam: float,
                                s_N: float, replicates: int, seed: int) -> np.ndarray:
    """Per-replicate perturbed-minus-base free entropy at eps = s_N.

    Replicate r always sees the same (X0, Z, Ztilde) for a given seed, so gaps
    at different s_N values pair up for common-random-number differences.
    """
    if s_N < 0:
        raise ValueError("schedule value must be nonnegative")
    _check_budget(prior, N, M)
    diffs = np.empty(replicates)
    for r in range(replicates):
        rng = rngmod.stream(seed, TAG_PERT, r)
        X0, Z, Zt = _replicate_disorder(prior, N, M, rng)
        inst = _assemble(prior, N, M, lam, X0, Z, seed)
        pert = PerturbationParams(epsilon=s_N, Ztilde=Zt, s_N=s_N)
        f_pert = _log_partition_only(inst, pert, prior) / (N * M)
        f_base = _log_partition_only(inst, None, prior) / (N * M)
        diffs[r] = f_pert - f_base
    return diffs


def perturbation_gap(prior: Prior, N: int, M: int, lam: float, s_N: float,
                     replicates: int, seed: int):
    """Perturbed-minus-base free entropy at eps = s_N, common random numbers.

    Both free entropies use the same (X0, Z) per replicate; only the perturbed
    one sees Ztilde.  Returns (mean gap, std err of the gap).
    """
    diffs = perturbation_gap_replicates(prior, N, M, lam, s_N, replicates, seed)
    return float(diffs.mean()), float(diffs.std(ddof=1) / math.sqrt(replicates))


# ---------------------------------------------------------------------------
# portable serialization: JSON header + CSV matrix blocks
# ---------------------------------------------------------------------------

def instance_to_json(instance: ModelInstance, prior_label: str = "") -> str:
    import json

    def csv_block(mat):
        return "\n".join(",".join(repr(float(x)) for x in row)
                         for row in np.atleast_2d(mat))

    return json.dumps({
        "header": {"N": instance.N, "M": instance.M, "lambda": instance.lam,
                   "seed": instance.seed, "prior": prior_label},
        "X0": csv_block(instance.X0),
        "Z": csv_block(instance.Z),
        "Y": csv_block(instance.Y),
    })


def instance_from_json(text: str) -> ModelInstance:
    import json

    obj = json.loads(text)
    h = obj["header"]

    def mat(block):
        return np.array([[float(x) for x in line.split(",")]
                         for line in block.splitlines()])

    return ModelInstance(N=h["N"], M=h["M"], lam=h["lambda"], X0=mat(obj["X0"]),
                         Z=mat(obj["Z"]), Y=mat(obj["Y"]), seed=h["seed"])
