"""Closed-form dependence quantities for equicorrelated Gaussians.

Everything here is in nats. Entropies of a zero-mean Gaussian only enter
through ``0.5 * logdet(cov)`` since the ``(2 pi e)`` terms cancel in every
mutual-information combination we form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LN2 = math.log(2.0)


class DomainError(ValueError):
    """Raised when a correlation lies outside the positive-definite region."""


@dataclass(frozen=True)
class EquicorrelatedGaussian:
    """``m`` unit-variance Gaussians with common pairwise correlation ``rho``."""

    rho: float
    m: int = 3

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"need m >= 2 variables, got {self.m}")
        lo = -1.0 / (self.m - 1)
        if not (lo < self.rho < 1.0):
            raise DomainError(
                f"rho={self.rho} outside ({lo:.6g}, 1) for m={self.m}; covariance not positive definite"
            )

    @property
    def covariance(self) -> np.ndarray:
        cov = np.full((self.m, self.m), self.rho)
        np.fill_diagonal(cov, 1.0)
        return cov

    def logdet(self, idx: Sequence[int] | None = None) -> float:
        """Log-determinant of the covariance restricted to ``idx`` (all if None)."""
        cov = self.covariance
        if idx is not None:
            idx = list(idx)
            if not idx:
                return 0.0
            cov = cov[np.ix_(idx, idx)]
        sign, value = np.linalg.slogdet(cov)
        if sign <= 0:
            raise DomainError("covariance block is not positive definite")
        return float(value)

    def entropy(self, idx: Sequence[int] | None = None) -> float:
        """Differential entropy minus the ``(d/2) log(2 pi e)`` constant."""
        return 0.5 * self.logdet(idx)

    def mutual_information(self, a: Sequence[int], b: Sequence[int]) -> float:
        return self.entropy(a) + self.entropy(b) - self.entropy(list(a) + list(b))

    def conditional_mi(self, a: Sequence[int], b: Sequence[int], given: Sequence[int]) -> float:
        a, b, given = list(a), list(b), list(given)
        return (
            self.entropy(a + given)
            + self.entropy(b + given)
            - self.entropy(given)
            - self.entropy(a + b + given)
        )

    def total_correlation(self) -> float:
        return -0.5 * self.logdet()

    def dual_total_correlation(self) -> float:
        everything = list(range(self.m))
        h_joint = self.entropy()
        cond = 0.0
        for i in everything:
            rest = [j for j in everything if j != i]
            cond += h_joint - self.entropy(rest)
        return h_joint - cond


@dataclass(frozen=True)
class BoundPair:
    lower: float
    upper: float

    def contains(self, value: float, strict: bool = False) -> bool:
        if strict:
            return self.lower < value < self.upper
        return self.lower <= value <= self.upper


def _det3(rho: float) -> float:
    if not (-0.5 < rho < 1.0):
        raise DomainError(f"rho={rho} outside (-0.5, 1)")
    det = 1.0 + 2.0 * rho**3 - 3.0 * rho**2
    if det <= 0.0:
        raise DomainError(f"equicorrelation determinant {det} <= 0 at rho={rho}")
    return det


def gaussian_dtc3(rho: float) -> float:
    """Dual total correlation of three equicorrelated unit Gaussians."""
    det = _det3(rho)
    return 1.5 * math.log1p(-rho * rho) - math.log(det) + 0.0


def gaussian_pair_third_mi3(rho: float) -> float:
    """I(X_i, X_j; X_k) for the trivariate equicorrelated Gaussian."""
    det = _det3(rho)
    return 0.5 * math.log1p(-rho * rho) - 0.5 * math.log(det) + 0.0


def gaussian_conditional_mi3(rho: float) -> float:
    """I(X_i; X_j | X_k), identical for every ordering by symmetry."""
    det = _det3(rho)
    return 0.5 * (2.0 * math.log1p(-rho * rho) - math.log(det)) + 0.0


def gaussian_pairwise_mi(rho: float) -> float:
    if not abs(rho) < 1.0:
        raise DomainError(f"|rho| must be < 1, got {rho}")
    return -0.5 * math.log1p(-rho * rho) + 0.0  # + 0.0 turns -0.0 into 0.0


def gaussian_mi_multidim(d: int, rho: float) -> float:
    """MI between two d-dim Gaussians made of independent coordinate pairs with correlation rho."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    return d * gaussian_pairwise_mi(rho)


def sandwich_bounds(joint_mi_terms: Sequence[float]) -> BoundPair:
    """Bracket the DTC of M variables from the M terms I(rest; X_i).

    lower = sum / M, upper = (M - 1) * sum / M.
    """
    terms = [float(t) for t in joint_mi_terms]
    m = len(terms)
    if m < 3:
        raise ValueError(f"sandwich bound needs M >= 3 terms, got {m}")
    if any(t < 0 for t in terms):
        raise ValueError("mutual information terms must be nonnegative")
    total = math.fsum(terms)
    return BoundPair(lower=total / m, upper=(m - 1) * total / m)


def dtc_decomposition_residual(rho: float) -> float:
    """|DTC - (pairwise MI sum / 3 + 2/3 * conditional MI sum)| for the trivariate case."""
    pair_sum = 3.0 * gaussian_pairwise_mi(rho)
    cond_sum = 3.0 * gaussian_conditional_mi3(rho)
    return abs(gaussian_dtc3(rho) - (pair_sum / 3.0 + 2.0 * cond_sum / 3.0))


def chain_rule_residual(rho: float) -> float:
    """|I(X1,X2;X3) - I(X1;X3) - I(X2;X3|X1)| using log-det entropies."""
    g = EquicorrelatedGaussian(rho, 3)
    lhs = g.mutual_information([0, 1], [2])
    rhs = g.mutual_information([0], [2]) + g.conditional_mi([1], [2], [0])
    return abs(lhs - rhs)


def tc_dtc_sum_residual(rho: float, m: int = 3) -> float:
    """|TC + DTC - sum_i I(X_i; rest)| for an m-variable equicorrelated Gaussian."""
    g = EquicorrelatedGaussian(rho, m)
    idx = list(range(m))
    total = math.fsum(
        g.mutual_information([i], [j for j in idx if j != i]) for i in idx
    )
    return abs(g.total_correlation() + g.dual_total_correlation() - total)


def nats_to_bits(x: float) -> float:
    return x / LN2


def bits_to_nats(x: float) -> float:
    return x * LN2
