"""Seeded synthetic data families.

All generators draw from ``numpy.random.Generator(PCG64(seed))``; the
same arguments and seed always reproduce the same array. Cross-platform
agreement is statistical, not bitwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytic import DomainError, EquicorrelatedGaussian

RNG_ALGORITHM = "numpy.random.PCG64"


def make_rng(seed: int, stream: int | None = None) -> np.random.Generator:
    """PCG64 generator; ``stream`` selects an independent substream of ``seed``."""
    if stream is None:
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


@dataclass
class SampleMatrix:
    values: np.ndarray
    seed: int
    family: str
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.columns:
            self.columns = [f"x{i + 1}" for i in range(self.values.shape[1])]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def variables(self) -> list[np.ndarray]:
        """Per-column views, the input shape the Gram-entropy estimators take."""
        return [self.values[:, j] for j in range(self.values.shape[1])]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])


@dataclass
class TriModalLabeled:
    modalities: tuple[np.ndarray, np.ndarray, np.ndarray]
    labels: np.ndarray
    n_classes: int
    seed: int

    def __post_init__(self):
        n = self.labels.shape[0]
        if any(m.shape[0] != n for m in self.modalities):
            raise ValueError("modalities and labels must have the same number of rows")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def rows(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(m[idx] for m in self.modalities)


def sample_equicorrelated(m: int, rho: float, n: int, seed: int) -> SampleMatrix:
    cov = EquicorrelatedGaussian(rho, m).covariance
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"equicorrelation matrix not PD at rho={rho}, m={m}") from exc
    z = make_rng(seed).standard_normal((n, m))
    return SampleMatrix(z @ chol.T, seed, "equicorrelated")


def sample_data_a(m: int, n: int, seed: int, *, _fixed_uniform: float | None = None) -> SampleMatrix:
    """X_2..X_m ~ U[0,1] i.i.d., X_1 = (mean of X_2..X_m)^2.

    ``_fixed_uniform`` replaces every uniform draw by a constant (test hook).
    """
    if m < 3:
        raise ValueError(f"Data A needs m >= 3, got {m}")
    if _fixed_uniform is None:
        rest = make_rng(seed).uniform(0.0, 1.0, size=(n, m - 1))
    else:
        rest = np.full((n, m - 1), float(_fixed_uniform))
    x1 = rest.mean(axis=1) ** 2
    return SampleMatrix(np.column_stack([x1, rest]), seed, "data-a")


def sample_data_b(m: int, n: int, seed: int) -> SampleMatrix:
    """X_1 ~ U[0,1], X_i = X_1^2 + X_1 for every i >= 2."""
    if m < 2:
        raise ValueError(f"Data B needs m >= 2, got {m}")
    x1 = make_rng(seed).uniform(0.0, 1.0, size=n)
    copy = x1 * x1 + x1
    return SampleMatrix(np.column_stack([x1] + [copy] * (m - 1)), seed, "data-b")


def sample_gaussian_pairs(d: int, rho: float, n: int, seed: int) -> tuple[SampleMatrix, SampleMatrix]:
    """Two d-dim standard Gaussians with corr(X_j, Y_j) = rho and no other coupling."""
    if not abs(rho) < 1.0:
        raise DomainError(f"|rho| must be < 1, got {rho}")
    rng = make_rng(seed)
    x = rng.standard_normal((n, d))
    noise = rng.standard_normal((n, d))
    y = rho * x + np.sqrt(1.0 - rho * rho) * noise
    return (
        SampleMatrix(x, seed, "gaussian-pair-x"),
        SampleMatrix(y, seed, "gaussian-pair-y", [f"y{i + 1}" for i in range(d)]),
    )


def latent_class_anchors(c: int, dims: tuple[int, int, int], seed: int) -> list[np.ndarray]:
    rng = make_rng(seed, stream=0)
    return [rng.standard_normal((c, d)) for d in dims]


def sample_latent_class_trimodal(
    c: int,
    n: int,
    noise: float,
    seed: int,
    dims: tuple[int, int, int] = (16, 8, 4),
    anchor_seed: int | None = None,
) -> TriModalLabeled:
    """Each modality is a class-specific anchor plus N(0, noise^2) noise.

    Anchors come from ``anchor_seed`` (defaults to ``seed``), so train and
    test sets of one family can share anchors while drawing fresh rows.
    """
    if c < 2:
        raise ValueError(f"need at least 2 classes, got {c}")
    if not noise > 0:
        raise ValueError(f"noise must be positive, got {noise}")
    anchors = latent_class_anchors(c, dims, seed if anchor_seed is None else anchor_seed)
    rng = make_rng(seed, stream=1)
    labels = rng.integers(0, c, size=n)
    mods = tuple(a[labels] + noise * rng.standard_normal((n, a.shape[1])) for a in anchors)
    return TriModalLabeled(mods, labels, c, seed)
