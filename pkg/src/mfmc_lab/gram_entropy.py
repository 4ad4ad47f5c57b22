"""Matrix-based Renyi entropy on trace-normalized Gaussian Gram matrices.

Joint entropies of several variables use the renormalized Hadamard
product of their Gram matrices, so every estimator below is built from
one Gram matrix per variable. Results are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

DEFAULT_ALPHA = 1.01
FALLBACK_BANDWIDTH = 1.0
_EIG_ZERO = 1e-12
_PSD_TOL = 1e-10


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel; ``bandwidth=None`` means the median heuristic."""

    kind: str = "gaussian"
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValueError(f"unsupported kernel {self.kind!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    bandwidth: float = float("nan")
    used_fallback: bool = False

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def _as_2d(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"samples must be 1-D or 2-D, got shape {x.shape}")
    return x


def _trace_normalize(k: np.ndarray) -> np.ndarray:
    k = 0.5 * (k + k.T)
    return k / np.trace(k)


def median_bandwidth(samples) -> tuple[float, bool]:
    """Median of the nonzero pairwise distances, or the fallback if there are none."""
    d = pdist(_as_2d(samples))
    d = d[d > 0]
    if d.size == 0:
        return FALLBACK_BANDWIDTH, True
    return float(np.median(d)), False


def gram_matrix(samples, config: KernelConfig = KernelConfig()) -> GramMatrix:
    x = _as_2d(samples)
    if x.shape[0] < 2:
        raise ValueError("gram_matrix needs at least 2 samples")
    if config.bandwidth is None:
        bw, fallback = median_bandwidth(x)
    else:
        bw, fallback = float(config.bandwidth), False
    sq = squareform(pdist(x, "sqeuclidean"))
    k = np.exp(-sq / (2.0 * bw * bw))
    return GramMatrix(_trace_normalize(k), bandwidth=bw, used_fallback=fallback)


def eigenvalues(a: GramMatrix | np.ndarray) -> np.ndarray:
    """Eigenvalues of a trace-normalized PSD matrix, tiny negatives clipped to zero."""
    m = a.entries if isinstance(a, GramMatrix) else np.asarray(a, dtype=float)
    try:
        lam = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigendecomposition failed: {exc}") from exc
    if lam[0] < -_PSD_TOL * max(1.0, abs(lam[-1])):
        raise ValueError(f"matrix is not PSD (min eigenvalue {lam[0]:.3g})")
    return np.clip(lam, 0.0, None)


def renyi_from_spectrum(lam: np.ndarray, alpha: float = DEFAULT_ALPHA) -> float:
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    lam = np.asarray(lam, dtype=float)
    lam = lam / lam.sum()
    if alpha == 1.0:
        p = lam[lam > _EIG_ZERO]
        return float(-np.sum(p * np.log2(p)))
    return float(math.log2(np.sum(lam[lam > 0] ** alpha)) / (1.0 - alpha))


def matrix_renyi_entropy(a: GramMatrix | np.ndarray, alpha: float = DEFAULT_ALPHA) -> float:
    """S_alpha(A) = log2(sum lambda^alpha) / (1 - alpha); alpha == 1 gives the Shannon limit."""
    return renyi_from_spectrum(eigenvalues(a), alpha)


def hadamard_joint(grams: Sequence[GramMatrix]) -> GramMatrix:
    grams = list(grams)
    if not grams:
        raise ValueError("hadamard_joint needs at least one matrix")
    n = grams[0].n
    for g in grams:
        if g.entries.shape != (n, n):
            raise ValueError(f"dimension mismatch: {g.entries.shape} vs {(n, n)}")
    if len(grams) == 1:
        return grams[0]
    prod = reduce(np.multiply, (g.entries for g in grams))
    return GramMatrix(_trace_normalize(prod))


def _grams(variables, config: KernelConfig) -> list[GramMatrix]:
    arrays = [_as_2d(v) for v in variables]
    n = arrays[0].shape[0]
    for a in arrays:
        if a.shape[0] != n:
            raise ValueError(f"sample count mismatch: {a.shape[0]} vs {n}")
    return [gram_matrix(a, config) for a in arrays]


def _joint_entropy(grams: Sequence[GramMatrix], alpha: float) -> float:
    return matrix_renyi_entropy(hadamard_joint(grams), alpha)


def dtc_from_grams(grams: Sequence[GramMatrix], alpha: float = DEFAULT_ALPHA) -> float:
    m = len(grams)
    if m < 2:
        raise ValueError("DTC needs at least 2 variables")
    leave_one_out = math.fsum(
        _joint_entropy([g for j, g in enumerate(grams) if j != i], alpha) for i in range(m)
    )
    return leave_one_out - (m - 1) * _joint_entropy(grams, alpha)


def dtc_alpha(
    variables: Sequence,
    alpha: float = DEFAULT_ALPHA,
    config: KernelConfig = KernelConfig(),
) -> float:
    """Matrix-based DTC estimate in bits; finite-sample negatives are returned as-is."""
    return dtc_from_grams(_grams(variables, config), alpha)


def mi_from_grams(
    group: Sequence[GramMatrix], single: GramMatrix, alpha: float = DEFAULT_ALPHA
) -> float:
    return (
        _joint_entropy(group, alpha)
        + matrix_renyi_entropy(single, alpha)
        - _joint_entropy(list(group) + [single], alpha)
    )


def matrix_mutual_information(
    group: Sequence,
    single,
    alpha: float = DEFAULT_ALPHA,
    config: KernelConfig = KernelConfig(),
) -> float:
    """I(group; single) = S(group) + S(single) - S(group, single)."""
    grams = _grams(list(group) + [single], config)
    return mi_from_grams(grams[:-1], grams[-1], alpha)


@dataclass(frozen=True)
class DtcEstimate:
    dtc: float
    rest_mi: tuple[float, ...]
    lower: float
    upper: float

    @property
    def bound_ok(self) -> bool:
        return self.lower <= self.dtc <= self.upper


def dtc_with_bounds(
    variables: Sequence,
    alpha: float = DEFAULT_ALPHA,
    config: KernelConfig = KernelConfig(),
) -> DtcEstimate:
    """DTC estimate together with the sandwich bounds from the M terms I(rest; X_i).

    One Gram matrix per variable is shared by all terms. The bounds are
    computed directly so that negative finite-sample MI terms stay visible.
    """
    grams = _grams(variables, config)
    m = len(grams)
    if m < 3:
        raise ValueError("sandwich bounds need M >= 3 variables")
    h_all = _joint_entropy(grams, alpha)
    h_rest = [_joint_entropy([g for j, g in enumerate(grams) if j != i], alpha) for i in range(m)]
    h_single = [matrix_renyi_entropy(g, alpha) for g in grams]
    dtc = math.fsum(h_rest) - (m - 1) * h_all
    mis = tuple(h_rest[i] + h_single[i] - h_all for i in range(m))
    total = math.fsum(mis)
    return DtcEstimate(dtc=dtc, rest_mi=mis, lower=total / m, upper=(m - 1) * total / m)
