"""Dependence objectives on embedding batches, with analytic gradients.

Every loss is minimized. Trace and log-det objectives operate on the
uncentered second moments

    R1 = E1'E1 / B + eps I,   R2 = E2'E2 / B + eps I,   P = E1'E2 / B

and return gradients with respect to E1 and E2. Contrastive losses use
cosine similarity scaled by a temperature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp, softmax

DEFAULT_RIDGE = 1e-4
MAX_CONDITION = 1e12
SIGMA_CEILING = 1.0 - 1e-9
_EIG_FLOOR = 1e-12


class ObjectiveError(ArithmeticError):
    """Base class for numerical failures inside an objective."""

    term: str | None = None


class SingularCovarianceError(ObjectiveError):
    def __init__(self, name: str, condition: float):
        super().__init__(f"{name} is singular or ill-conditioned (condition number {condition:.3g})")
        self.name = name
        self.condition = condition


class NotPositiveDefiniteError(ObjectiveError):
    def __init__(self, name: str, min_eigenvalue: float):
        super().__init__(f"{name} is not positive definite (smallest eigenvalue {min_eigenvalue:.3g})")
        self.name = name
        self.min_eigenvalue = min_eigenvalue


class ZeroNormEmbeddingError(ObjectiveError, ValueError):
    """A row of an embedding is exactly zero, so cosine similarity is undefined."""


@dataclass
class CovarianceStats:
    r1: np.ndarray
    r2: np.ndarray
    p12: np.ndarray
    ridge: float
    e1: np.ndarray = field(repr=False)
    e2: np.ndarray = field(repr=False)
    center: bool = False

    @property
    def batch_size(self) -> int:
        return self.e1.shape[0]

    def joint(self) -> np.ndarray:
        return np.block([[self.r1, self.p12], [self.p12.T, self.r2]])


@dataclass
class ObjectiveResult:
    loss: float
    grads: tuple[np.ndarray, ...]
    terms: tuple[float, ...] = ()


@dataclass(frozen=True)
class Spectrum:
    sigmas: np.ndarray
    n_clipped: int = 0

    @property
    def total(self) -> float:
        return float(self.sigmas.sum())


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.1
    similarity: str = "cosine"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.similarity != "cosine":
            raise ValueError(f"unsupported similarity {self.similarity!r}")


def _check_batch(e: np.ndarray, name: str) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    if e.ndim != 2:
        raise ValueError(f"{name} must be a B x K matrix, got shape {e.shape}")
    if not np.all(np.isfinite(e)):
        raise ValueError(f"{name} contains non-finite entries")
    return e


def batch_covariances(
    e1: np.ndarray, e2: np.ndarray, ridge: float = DEFAULT_RIDGE, center: bool = False
) -> CovarianceStats:
    """Second-moment statistics of two aligned embedding batches.

    ``center=True`` subtracts the batch mean first, which removes the
    constant mode (sigma = 1) from the spectrum.
    """
    e1 = _check_batch(e1, "e1")
    e2 = _check_batch(e2, "e2")
    if e1.shape != e2.shape:
        raise ValueError(f"shape mismatch: {e1.shape} vs {e2.shape}")
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    b, k = e1.shape
    if center:
        e1 = e1 - e1.mean(axis=0)
        e2 = e2 - e2.mean(axis=0)
    eye = np.eye(k)
    r1 = e1.T @ e1 / b + ridge * eye
    r2 = e2.T @ e2 / b + ridge * eye
    p12 = e1.T @ e2 / b
    return CovarianceStats(r1, r2, p12, ridge, e1, e2, center)


def _factor(mat: np.ndarray, name: str):
    lam = np.linalg.eigvalsh(mat)
    if not lam[0] > 0:
        raise SingularCovarianceError(name, math.inf)
    cond = lam[-1] / lam[0]
    if cond > MAX_CONDITION:
        raise SingularCovarianceError(name, cond)
    return cho_factor(mat, lower=True)


def _uncenter(grad: np.ndarray, center: bool) -> np.ndarray:
    return grad - grad.mean(axis=0) if center else grad


def trace_value(stats: CovarianceStats) -> float:
    """tr(R1^-1 P R2^-1 P'), the sum of the normalized correlation spectrum."""
    c1 = _factor(stats.r1, "r1")
    c2 = _factor(stats.r2, "r2")
    a = cho_solve(c2, cho_solve(c1, stats.p12).T).T
    return float(np.sum(a * stats.p12))


def trace_objective(stats: CovarianceStats) -> ObjectiveResult:
    """loss = -tr(R1^-1 P R2^-1 P') and its gradient w.r.t. both batches."""
    b = stats.batch_size
    k = stats.r1.shape[0]
    c1 = _factor(stats.r1, "r1")
    c2 = _factor(stats.r2, "r2")
    p = stats.p12
    r1inv_p = cho_solve(c1, p)
    a = cho_solve(c2, r1inv_p.T).T  # R1^-1 P R2^-1
    value = float(np.sum(a * p))

    r2inv = cho_solve(c2, np.eye(k))
    g_p = 2.0 * a
    g_r1 = -a @ r1inv_p.T
    g_r2 = -(a.T @ p) @ r2inv
    g_r1 = g_r1 + g_r1.T
    g_r2 = g_r2 + g_r2.T

    e1, e2 = stats.e1, stats.e2
    d1 = (e1 @ g_r1 + e2 @ g_p.T) / b
    d2 = (e2 @ g_r2 + e1 @ g_p) / b
    return ObjectiveResult(
        -value, (-_uncenter(d1, stats.center), -_uncenter(d2, stats.center)), (value,)
    )


def logdet_objective(stats: CovarianceStats) -> ObjectiveResult:
    """loss = logdet(R_joint) - logdet(R1) - logdet(R2); equals sum log(1 - sigma_i)."""
    b = stats.batch_size
    k = stats.r1.shape[0]
    joint = stats.joint()
    lam = np.linalg.eigvalsh(joint)
    if not lam[0] > 0 or lam[-1] / lam[0] > MAX_CONDITION:
        raise NotPositiveDefiniteError("joint covariance", float(lam[0]))
    cj = cho_factor(joint, lower=True)
    c1 = _factor(stats.r1, "r1")
    c2 = _factor(stats.r2, "r2")

    def logdet(c):
        return 2.0 * float(np.sum(np.log(np.diag(c[0]))))

    loss = logdet(cj) - logdet(c1) - logdet(c2)

    z = np.hstack([stats.e1, stats.e2])
    dz = 2.0 * cho_solve(cj, z.T).T / b
    d1 = dz[:, :k] - 2.0 * cho_solve(c1, stats.e1.T).T / b
    d2 = dz[:, k:] - 2.0 * cho_solve(c2, stats.e2.T).T / b
    return ObjectiveResult(loss, (_uncenter(d1, stats.center), _uncenter(d2, stats.center)), (-loss,))


def inv_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root with an eigenvalue floor."""
    lam, vec = np.linalg.eigh(mat)
    if lam[0] <= 0:
        raise NotPositiveDefiniteError("covariance", float(lam[0]))
    lam = np.maximum(lam, _EIG_FLOOR)
    return (vec / np.sqrt(lam)) @ vec.T


def spectrum(stats: CovarianceStats) -> Spectrum:
    """Eigenvalues of V V' with V = R1^-1/2 P R2^-1/2, descending."""
    v = inv_sqrt(stats.r1) @ stats.p12 @ inv_sqrt(stats.r2)
    sig = np.linalg.eigvalsh(v @ v.T)[::-1]
    sig = np.clip(sig, 0.0, None)
    over = int(np.sum(sig > SIGMA_CEILING))
    return Spectrum(np.minimum(sig, SIGMA_CEILING), over)


def _sigmas(spec) -> np.ndarray:
    s = np.asarray(spec.sigmas if isinstance(spec, Spectrum) else spec, dtype=float)
    if np.any(s < 0) or np.any(s >= 1):
        raise ValueError("spectrum values must lie in [0, 1)")
    return s


def tsd_log(spec) -> float:
    """-sum log(1 - sigma)."""
    return float(-np.sum(np.log1p(-_sigmas(spec))))


def tsd_linear(spec) -> float:
    return float(np.sum(_sigmas(spec)))


def first_order_gap(spec) -> float:
    """tsd_log - tsd_linear: the higher-order Taylor remainder, always >= 0."""
    s = _sigmas(spec)
    return float(np.sum(-np.log1p(-s) - s))


def first_order_gap_bound(spec) -> float:
    s = _sigmas(spec)
    if s.size == 0:
        return 0.0
    return float(np.sum(s * s) / (1.0 - s.max()))


# -- contrastive ------------------------------------------------------------


def _normalize_rows(z: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroNormEmbeddingError(f"{name} has zero-norm rows; cosine similarity undefined")
    return z / norms, norms


def infonce_from_similarity(sim: np.ndarray, temperature: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean over rows of -log softmax(sim / tau)[i, i] and its gradient w.r.t. sim."""
    s = np.asarray(sim, dtype=float) / temperature
    b = s.shape[0]
    loss = float(np.mean(logsumexp(s, axis=1) - np.diag(s)))
    g = (softmax(s, axis=1) - np.eye(b)) / (b * temperature)
    return loss, g


def infonce_loss(
    e1: np.ndarray, e2: np.ndarray, cfg: ContrastiveConfig = ContrastiveConfig()
) -> ObjectiveResult:
    """InfoNCE with e1 rows as anchors and e2 rows as candidates."""
    e1 = _check_batch(e1, "e1")
    e2 = _check_batch(e2, "e2")
    if e1.shape[0] != e2.shape[0]:
        raise ValueError(f"batch mismatch: {e1.shape[0]} vs {e2.shape[0]}")
    u, n1 = _normalize_rows(e1, "e1")
    v, n2 = _normalize_rows(e2, "e2")
    loss, g = infonce_from_similarity(u @ v.T, cfg.temperature)
    du = g @ v
    dv = g.T @ u
    d1 = (du - u * np.sum(u * du, axis=1, keepdims=True)) / n1
    d2 = (dv - v * np.sum(v * dv, axis=1, keepdims=True)) / n2
    return ObjectiveResult(loss, (d1, d2), (loss,))


def infonce_mi_estimate(loss: float, batch_size: int) -> float:
    """ln B - loss; can never exceed ln B."""
    return math.log(batch_size) - loss


def clip_loss(e1, e2, cfg: ContrastiveConfig = ContrastiveConfig()) -> ObjectiveResult:
    fwd = infonce_loss(e1, e2, cfg)
    bwd = infonce_loss(e2, e1, cfg)
    return ObjectiveResult(
        0.5 * (fwd.loss + bwd.loss),
        (0.5 * (fwd.grads[0] + bwd.grads[1]), 0.5 * (fwd.grads[1] + bwd.grads[0])),
        (fwd.loss, bwd.loss),
    )


def clip_pp_loss(e1, e2, e3, cfg: ContrastiveConfig = ContrastiveConfig()) -> ObjectiveResult:
    """Sum of the three pairwise CLIP losses."""
    a = clip_loss(e1, e2, cfg)
    b = clip_loss(e2, e3, cfg)
    c = clip_loss(e1, e3, cfg)
    return ObjectiveResult(
        a.loss + b.loss + c.loss,
        (a.grads[0] + c.grads[0], a.grads[1] + b.grads[0], b.grads[1] + c.grads[1]),
        (a.loss, b.loss, c.loss),
    )


# -- tri-modal cyclic objectives -----------------------------------------------

PairObjective = Callable[[np.ndarray, np.ndarray], ObjectiveResult]

CYCLIC_TERMS = ("12;3", "13;2", "23;1")


def cyclic_loss(pair_objective: PairObjective, e1, e2, e3, e12, e13, e23) -> ObjectiveResult:
    """Sum of pair_objective over (e12, e3), (e13, e2), (e23, e1).

    Gradients come back in the argument order e1, e2, e3, e12, e13, e23.
    A failing term is re-raised with ``exc.term`` naming it.
    """
    pairs = ((e12, e3), (e13, e2), (e23, e1))
    results = []
    for tag, (fused, single) in zip(CYCLIC_TERMS, pairs):
        try:
            results.append(pair_objective(fused, single))
        except ObjectiveError as exc:
            exc.term = tag
            exc.args = (f"{exc.args[0] if exc.args else exc} [cyclic term I({tag})]",) + exc.args[1:]
            raise
    (g12, g3), (g13, g2), (g23, g1) = (r.grads for r in results)
    return ObjectiveResult(
        sum(r.loss for r in results),
        (g1, g2, g3, g12, g13, g23),
        tuple(r.loss for r in results),
    )


def trace_pair(ridge: float = DEFAULT_RIDGE, center: bool = False) -> PairObjective:
    return lambda a, b: trace_objective(batch_covariances(a, b, ridge, center))


def logdet_pair(ridge: float = DEFAULT_RIDGE, center: bool = False) -> PairObjective:
    return lambda a, b: logdet_objective(batch_covariances(a, b, ridge, center))


def infonce_pair(cfg: ContrastiveConfig = ContrastiveConfig()) -> PairObjective:
    return lambda a, b: infonce_loss(a, b, cfg)


def mfmc_cyclic_loss(e1, e2, e3, e12, e13, e23, ridge: float = DEFAULT_RIDGE) -> ObjectiveResult:
    """Negated sum of the three cyclic trace terms (fused pair vs. held-out modality)."""
    return cyclic_loss(trace_pair(ridge), e1, e2, e3, e12, e13, e23)
