"""Synthetic data generation, score-file ingestion, stratified subsampling,
and deterministic seeding.

The toy task draws y ~ Bernoulli(1/2) and x | y from unit-covariance
Gaussians centered at (-1, ..., -1) for y = 1 and (1, ..., 1) for y = 0, so
the true conditional probability is available in closed form. The
one-dimensional variant is the first coordinate of that construction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import InputError, ParseError
from .metrics import format_float

SYNTHETIC_GAUSSIAN = "synthetic-gaussian"
SCORE_FILE = "score-file"
RECALIBRATION_DERIVED = "recalibration-derived"


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    provenance: str
    seed: int | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y).astype(int)
        if self.X.shape[0] != self.y.size or self.y.size < 1:
            raise InputError("X and y must have matching, nonzero length")
        if not np.all(np.isfinite(self.X)):
            raise InputError("X rows must be finite")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise InputError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass
class RecalibrationSet:
    """One-dimensional (score, label) pairs feeding a recalibrator fit."""

    scores: np.ndarray
    labels: np.ndarray
    source_model_id: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float).ravel()
        self.labels = np.asarray(self.labels).astype(int)
        if self.scores.size != self.labels.size or self.scores.size < 1:
            raise InputError("scores and labels must have matching, nonzero length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise InputError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.scores.size

    def as_dataset(self) -> LabeledDataset:
        return LabeledDataset(self.scores[:, None], self.labels,
                              RECALIBRATION_DERIVED)


@dataclass(frozen=True)
class Temperature:
    t: float

    def __post_init__(self):
        if not np.isfinite(self.t) or self.t <= 0:
            raise InputError(f"temperature must be positive, got {self.t}")


@dataclass(frozen=True)
class Affine:
    a: float
    c: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.c)):
            raise InputError("affine parameters must be finite")


# ---------------------------------------------------------------------------
# deterministic seeding
# ---------------------------------------------------------------------------

def _entropy_word(part) -> int:
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode(), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    return int(part) % (1 << 64)


def rng_for(*parts) -> np.random.Generator:
    """Generator derived from a stable hash of the given mixed int/str parts.

    Used to give every sweep cell an independent, individually reproducible
    random stream: rng_for(master_seed, "train", rep, n) is the same on every
    run and machine regardless of execution order.
    """
    return np.random.default_rng(np.random.SeedSequence([_entropy_word(p)
                                                         for p in parts]))


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def gen_toy(n: int, seed, dim: int = 2) -> LabeledDataset:
    """Gaussian-mixture toy task of the given dimension (1 or 2)."""
    if n <= 0:
        raise InputError(f"n must be positive, got {n}")
    if dim not in (1, 2):
        raise InputError(f"dim must be 1 or 2, got {dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = (rng.random(n) < 0.5).astype(int)
    centers = np.where(y == 1, -1.0, 1.0)[:, None]
    X = centers + rng.standard_normal((n, dim))
    raw_seed = seed if isinstance(seed, int) else None
    return LabeledDataset(X, y, SYNTHETIC_GAUSSIAN, raw_seed)


def bayes_probability(x) -> np.ndarray | float:
    """True conditional P(y=1 | x) of the toy task: sigmoid(-2 * sum(x)).

    Follows from equal class priors and unit covariances; valid for the 1-D
    and 2-D variants.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 or x.ndim == 0
    X = np.atleast_2d(x)
    if X.shape[1] not in (1, 2):
        raise InputError(f"expected 1- or 2-dimensional inputs, got d={X.shape[1]}")
    p = expit(-2.0 * X.sum(axis=1))
    return float(p[0]) if single else p


def bayes_logit(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return -2.0 * x.sum(axis=1)


def stratified_subsample(data: LabeledDataset, m: int, seed) -> LabeledDataset:
    """Draw m rows without replacement, keeping class proportions within one
    count of exact proportionality. Deterministic given the seed."""
    if not 1 <= m <= data.n:
        raise InputError(f"subsample size {m} not in [1, {data.n}]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    classes, counts = np.unique(data.y, return_counts=True)
    exact = m * counts / data.n
    take = np.floor(exact).astype(int)
    remainder = m - take.sum()
    if remainder > 0:
        order = np.argsort(-(exact - take), kind="stable")
        take[order[:remainder]] += 1
    chosen = []
    for cls, k in zip(classes, take):
        idx = np.flatnonzero(data.y == cls)
        if k > 0:
            chosen.append(rng.choice(idx, size=k, replace=False))
    idx = np.concatenate(chosen) if chosen else np.array([], dtype=int)
    idx = rng.permutation(idx)
    return LabeledDataset(data.X[idx], data.y[idx], data.provenance)


def gen_miscalibrated_scores(n: int, distortion, seed) -> RecalibrationSet:
    """Scores from a synthetic miscalibrated base model.

    Draws the 1-D toy task (the recalibration setting), takes the true
    log-odds, and distorts them: Temperature(t) divides the logit by t (t < 1
    gives overconfidence), Affine(a, c) maps it to a * logit + c. Labels stay
    truthful, so a recalibrator fit on this set has signal to recover.
    """
    if n <= 0:
        raise InputError(f"n must be positive, got {n}")
    if not isinstance(distortion, (Temperature, Affine)):
        raise InputError(f"unknown distortion {distortion!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    data = gen_toy(n, rng, dim=1)
    logits = bayes_logit(data.X)
    if isinstance(distortion, Temperature):
        scores = logits / distortion.t
        tag = f"synthetic-temperature-{distortion.t:g}"
    else:
        scores = distortion.a * logits + distortion.c
        tag = f"synthetic-affine-{distortion.a:g}-{distortion.c:g}"
    return RecalibrationSet(scores, data.y, tag)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def write_dataset(path, data: LabeledDataset) -> None:
    cols = [f"x{j+1}" for j in range(data.dim)] + ["y"]
    lines = [",".join(cols)]
    for row, label in zip(data.X, data.y):
        lines.append(",".join(format_float(v) for v in row) + f",{int(label)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path) -> LabeledDataset:
    rows, labels = [], []
    header = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if header[-1] != "y":
                    raise ParseError(f"{path}:{lineno}: last column must be y")
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                rows.append([float(v) for v in parts[:-1]])
                labels.append(int(parts[-1]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: no data rows")
    return LabeledDataset(np.array(rows), np.array(labels), SCORE_FILE)


def write_scores(path, rs: RecalibrationSet) -> None:
    lines = ["score,label"]
    for s, y in zip(rs.scores, rs.labels):
        lines.append(f"{format_float(s)},{int(y)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores(path) -> RecalibrationSet:
    scores, labels = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.lower().replace(" ", "") == "score,label":
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected `score,label`, got {line!r}")
            try:
                scores.append(float(parts[0]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad score: {exc}") from exc
            try:
                label = int(parts[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad label: {exc}") from exc
            if label not in (0, 1):
                raise InputError(f"{path}:{lineno}: labels must be 0 or 1, got {label}")
            labels.append(label)
    if not scores:
        raise InputError(f"{path}: no score rows")
    return RecalibrationSet(np.array(scores), np.array(labels), str(path))


def build_recalibration_set(path) -> RecalibrationSet:
    """Parse a score CSV into the 1-D inputs a recalibrator trains on."""
    return read_scores(path)
