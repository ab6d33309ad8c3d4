"""Gaussian and Laplace kernels, Gram matrices, bandwidth selection, and
random Fourier feature maps.

Conventions: the Gaussian kernel is exp(-||x - x'||^2 / (2 sigma^2)) and the
Laplace kernel is exp(-||x - x'|| / sigma), both bounded by 1. Random feature
frequencies are drawn from the spectral density of the kernel: normal with
scale 1/sigma for Gaussian, per-coordinate standard Cauchy scaled by 1/sigma
for Laplace (exact in one dimension, where the sweep and recalibration paths
operate).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import InputError

GAUSSIAN = "gaussian"
LAPLACE = "laplace"
FAMILIES = (GAUSSIAN, LAPLACE)


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family plus a positive bandwidth in input-space units."""

    family: str
    bandwidth: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown kernel family {self.family!r}")
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise InputError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class RffMap:
    """A realized random Fourier feature map.

    Feature j of input x is sqrt(2/D) * cos(frequencies[j] . x + phases[j]),
    so every coordinate lies in [-sqrt(2/D), sqrt(2/D)] and inner products of
    feature vectors approximate the kernel in expectation.
    """

    family: str
    feature_count: int
    frequencies: np.ndarray = field(repr=False)
    phases: np.ndarray = field(repr=False)
    bandwidth: float
    seed: int

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise InputError(f"expected an (n, d) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("inputs must be finite")
    return X


def kernel_eval(spec: KernelSpec, x, x_other) -> float:
    """Evaluate the kernel on a single pair of equal-dimension vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_other = np.atleast_1d(np.asarray(x_other, dtype=float))
    if x.shape != x_other.shape:
        raise InputError(f"dimension mismatch: {x.shape} vs {x_other.shape}")
    d = np.linalg.norm(x - x_other)
    if spec.family == GAUSSIAN:
        return float(np.exp(-(d * d) / (2.0 * spec.bandwidth**2)))
    return float(np.exp(-d / spec.bandwidth))


def kernel_matrix(spec: KernelSpec, X, Z=None) -> np.ndarray:
    """Pairwise kernel values between the rows of X and Z (Z defaults to X)."""
    X = _as_matrix(X)
    Z = X if Z is None else _as_matrix(Z)
    if X.shape[1] != Z.shape[1]:
        raise InputError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    D = cdist(X, Z)
    if spec.family == GAUSSIAN:
        return np.exp(-(D * D) / (2.0 * spec.bandwidth**2))
    return np.exp(-D / spec.bandwidth)


def gram_matrix(spec: KernelSpec, X) -> np.ndarray:
    """Symmetric PSD Gram matrix with unit diagonal. No jitter is added here;
    regularized solvers add their own."""
    K = kernel_matrix(spec, X)
    np.fill_diagonal(K, 1.0)
    return K


def median_heuristic(X) -> tuple[float, bool]:
    """Median of the n(n-1)/2 pairwise Euclidean distances (i < j).

    Returns (sigma, degenerate). When every point coincides the median is 0;
    the bandwidth falls back to 1.0 and the degenerate flag is set so sweeps
    never abort on constant inputs.
    """
    X = _as_matrix(X)
    if X.shape[0] < 2:
        raise InputError("median heuristic needs at least two points")
    sigma = float(np.median(pdist(X)))
    if sigma <= 0.0:
        return 1.0, True
    return sigma, False


def make_rff_map(family: str, dim: int, feature_count: int, bandwidth: float,
                 seed: int) -> RffMap:
    """Draw a random feature map for the given kernel.

    The draw is a pure function of its arguments, so a map can be re-created
    bit-exactly from (family, dim, feature_count, bandwidth, seed).
    """
    if family not in FAMILIES:
        raise InputError(f"unknown kernel family {family!r}")
    if dim < 1 or feature_count < 1:
        raise InputError("dim and feature_count must be positive")
    if not np.isfinite(bandwidth) or bandwidth <= 0:
        raise InputError(f"bandwidth must be positive, got {bandwidth}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if family == GAUSSIAN:
        freqs = rng.normal(0.0, 1.0 / bandwidth, size=(feature_count, dim))
    else:
        freqs = rng.standard_cauchy(size=(feature_count, dim)) / bandwidth
    phases = rng.uniform(0.0, 2.0 * np.pi, size=feature_count)
    return RffMap(family=family, feature_count=feature_count, frequencies=freqs,
                  phases=phases, bandwidth=float(bandwidth), seed=int(seed))


def rff_features(rmap: RffMap, x) -> np.ndarray:
    """Feature vector(s) for one input (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else _as_matrix(x)
    if X.shape[1] != rmap.dim:
        raise InputError(f"dimension mismatch: input d={X.shape[1]}, map d={rmap.dim}")
    Z = np.sqrt(2.0 / rmap.feature_count) * np.cos(X @ rmap.frequencies.T + rmap.phases)
    return Z[0] if single else Z
