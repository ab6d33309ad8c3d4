"""Exact empirical calibration metrics.

All metrics operate on a PredictionSet of paired (prediction, binary label)
samples. The smooth calibration error and its logit-space dual are finite
maximizations over Lipschitz witness functions; after merging tied prediction
values, only consecutive-pair Lipschitz constraints are needed (the triangle
inequality implies the rest), so each reduces to a small linear program

    maximize  sum_j w_j h_j
    s.t.      |h_{j+1} - h_j| <= L (v_{j+1} - v_j),   |h_j| <= B

over the sorted distinct values v with aggregated residual weights w. The
post-processing gaps are the analogous convex programs under the squared and
logistic losses. witness_oracle is an independent brute-force check: a dynamic
program over a discretized witness range.

Key facts these quantities satisfy on every sample (enforced by the tests):
smce^2 <= pgap_sq <= 2 smce, 2 dual^2 <= pgap_logistic <= 4 dual, and
smce(sigmoid-mapped sample) <= dual(logit sample).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sparse
from scipy.ndimage import maximum_filter1d
from scipy.optimize import Bounds, LinearConstraint, linprog, minimize
from scipy.special import expit

from .errors import InputError, NumericalError, ParseError
from .kernels import LAPLACE, KernelSpec, kernel_matrix, median_heuristic

PROBABILITY = "probability"
LOGIT = "logit"
SPACES = (PROBABILITY, LOGIT)


@dataclass(frozen=True)
class PredictionSet:
    """Paired (value, label) samples in probability or logit space."""

    values: np.ndarray
    labels: np.ndarray
    space: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        labels = np.asarray(self.labels)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels.astype(float))
        if self.space not in SPACES:
            raise InputError(f"unknown space {self.space!r}")
        if values.ndim != 1 or values.size < 1:
            raise InputError("values must be a nonempty 1-D array")
        if labels.shape != values.shape:
            raise InputError("values and labels must have matching length")
        if not np.all(np.isfinite(values)):
            raise InputError("prediction values must be finite")
        if not np.all((labels == 0) | (labels == 1)):
            raise InputError("labels must be 0 or 1")
        if self.space == PROBABILITY and (values.min() < 0.0 or values.max() > 1.0):
            raise InputError("probability-space values must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.values.size

    def probs(self) -> np.ndarray:
        """Predicted probabilities: the values themselves, or sigmoid(logits)."""
        if self.space == PROBABILITY:
            return self.values
        return expit(self.values)

    @staticmethod
    def probabilities(values, labels) -> "PredictionSet":
        return PredictionSet(np.asarray(values, dtype=float),
                             np.asarray(labels), PROBABILITY)

    @staticmethod
    def logits(values, labels) -> "PredictionSet":
        return PredictionSet(np.asarray(values, dtype=float),
                             np.asarray(labels), LOGIT)


@dataclass(frozen=True)
class LipschitzWitness:
    """Optimal witness of a metric solve over the tie-merged value grid.

    values are the sorted distinct predictions, weights[j] the summed residual
    (y - p)/n over samples tied at values[j], and witness the maximizing h.
    """

    values: np.ndarray
    weights: np.ndarray
    witness: np.ndarray
    objective: float
    lipschitz_bound: float
    box_bound: float


@dataclass
class MetricReport:
    """One evaluation's worth of calibration metrics."""

    smce: float
    binned_ece: float
    bin_count: int
    mmce: float
    accuracy: float
    n: int
    dual_smce: float | None = None
    pgap_sq: float | None = None
    pgap_logistic: float | None = None

    CSV_FIELDS = ("smce", "dual_smce", "pgap_sq", "pgap_logistic",
                  "binned_ece", "bin_count", "mmce", "accuracy", "n")

    def to_csv_values(self) -> list[str]:
        out = []
        for name in self.CSV_FIELDS:
            v = getattr(self, name)
            if v is None:
                out.append("")
            elif name in ("bin_count", "n"):
                out.append(str(int(v)))
            else:
                out.append(format_float(v))
        return out


def format_float(x: float) -> str:
    """17 significant digits: lossless text round-trip for IEEE doubles."""
    return "%.17g" % float(x)


# ---------------------------------------------------------------------------
# witness linear program
# ---------------------------------------------------------------------------

def _merge_ties(values: np.ndarray, residuals: np.ndarray):
    """Sorted distinct values with residual weights summed over ties and
    divided by the sample count."""
    v, inverse = np.unique(values, return_inverse=True)
    w = np.bincount(inverse, weights=residuals, minlength=v.size) / residuals.size
    return v, w


def _solve_witness_lp(v: np.ndarray, w: np.ndarray, lip: float, box: float):
    """Exact maximum of w . h under consecutive Lipschitz and box constraints.

    The returned witness is repaired to strict feasibility (clip to the box,
    then a forward pass through the chain), and the objective is recomputed
    from it, so the reported value is always attained by a feasible witness.
    """
    m = v.size
    if not np.any(w):
        return 0.0, np.zeros(m)
    if m == 1:
        h = box * np.sign(w[0])
        return float(abs(w[0]) * box), np.array([h])
    slack = lip * np.diff(v)
    diff = sparse.diags([np.full(m - 1, -1.0), np.ones(m - 1)], [0, 1],
                        shape=(m - 1, m), format="csr")
    res = linprog(-w, A_ub=sparse.vstack([diff, -diff], format="csr"),
                  b_ub=np.concatenate([slack, slack]),
                  bounds=(-box, box), method="highs")
    if not res.success:
        raise NumericalError(f"witness LP failed: {res.message}")
    h = np.clip(res.x, -box, box)
    for j in range(m - 1):
        lo, hi = h[j] - slack[j], h[j] + slack[j]
        if h[j + 1] < lo:
            h[j + 1] = lo
        elif h[j + 1] > hi:
            h[j + 1] = hi
    return max(float(w @ h), 0.0), h


def smooth_ce(preds: PredictionSet) -> tuple[float, LipschitzWitness]:
    """Smooth calibration error: the exact maximum of (1/n) sum h(p_i)(y_i - p_i)
    over 1-Lipschitz h: [0,1] -> [-1,1]."""
    if preds.space != PROBABILITY:
        raise InputError("smooth_ce expects a probability-space PredictionSet")
    p = preds.values
    v, w = _merge_ties(p, preds.labels - p)
    value, h = _solve_witness_lp(v, w, lip=1.0, box=1.0)
    return value, LipschitzWitness(v, w, h, value, 1.0, 1.0)


def dual_smooth_ce(preds: PredictionSet) -> tuple[float, LipschitzWitness]:
    """Logit-space smooth calibration error: the exact maximum of
    (1/n) sum h(g_i)(y_i - sigmoid(g_i)) over (1/4)-Lipschitz h: R -> [-1,1].

    Upper-bounds smooth_ce of the sigmoid-mapped sample, because any
    1-Lipschitz witness of the probabilities composes with sigmoid into a
    feasible (1/4)-Lipschitz witness of the logits.
    """
    if preds.space != LOGIT:
        raise InputError("dual_smooth_ce expects a logit-space PredictionSet")
    v, w = _merge_ties(preds.values, preds.labels - expit(preds.values))
    value, h = _solve_witness_lp(v, w, lip=0.25, box=1.0)
    return value, LipschitzWitness(v, w, h, value, 0.25, 1.0)


# ---------------------------------------------------------------------------
# post-processing gaps
# ---------------------------------------------------------------------------

def _chain_constraint(v: np.ndarray):
    m = v.size
    d = np.diff(v)
    diff = sparse.diags([np.full(m - 1, -1.0), np.ones(m - 1)], [0, 1],
                        shape=(m - 1, m), format="csr")
    return LinearConstraint(diff, -d, d)


def _minimize_chain(fun, jac, hess, x0, v, box):
    constraints = [_chain_constraint(v)] if v.size > 1 else []
    res = minimize(fun, x0, jac=jac, hess=hess, method="trust-constr",
                   constraints=constraints, bounds=Bounds(-box, box),
                   options={"gtol": 1e-12, "xtol": 1e-13, "barrier_tol": 1e-14,
                            "maxiter": 3000})
    return res.x


def pgap_sq(preds: PredictionSet) -> float:
    """Squared-loss post-processing gap: the drop in mean squared error
    achievable by adding a 1-Lipschitz, [-1,1]-bounded correction h(p) to the
    predictions. Sandwiched between smooth_ce^2 and 2 * smooth_ce.
    """
    if preds.space != PROBABILITY:
        raise InputError("pgap_sq expects a probability-space PredictionSet")
    p, y = preds.values, preds.labels
    n = preds.n
    v, inverse = np.unique(p, return_inverse=True)
    counts = np.bincount(inverse, minlength=v.size).astype(float)
    resid = np.bincount(inverse, weights=y - p, minlength=v.size)
    if not np.any(resid):
        return 0.0
    if v.size == 1:
        # unconstrained per-group optimum clipped to the box, exactly
        h = float(np.clip(resid[0] / counts[0], -1.0, 1.0))
        return max((2.0 * resid[0] * h - counts[0] * h * h) / n, 0.0)

    # (1/n) sum_i (y_i - p_i - h(p_i))^2 = base + (c h^2 - 2 r h)/n per group
    def fun(h):
        return float((counts @ (h * h) - 2.0 * (resid @ h)) / n)

    def jac(h):
        return (2.0 * counts * h - 2.0 * resid) / n

    hess_mat = sparse.diags(2.0 * counts / n, format="csc")
    x0 = np.clip(resid / counts, -1.0, 1.0)
    d = np.diff(v)
    for j in range(v.size - 1):
        x0[j + 1] = min(max(x0[j + 1], x0[j] - d[j]), x0[j] + d[j])
    h = _minimize_chain(fun, jac, lambda h: hess_mat, x0, v, box=1.0)
    return max(-min(fun(h), 0.0), 0.0)


def pgap_logistic(preds: PredictionSet) -> float:
    """Logistic-loss post-processing gap: the drop in mean logistic loss
    achievable by adding a 1-Lipschitz, [-4,4]-bounded correction h(g) to the
    logits. Sandwiched between 2 * dual_smooth_ce^2 and 4 * dual_smooth_ce.
    """
    if preds.space != LOGIT:
        raise InputError("pgap_logistic expects a logit-space PredictionSet")
    g, y = preds.values, preds.labels
    n = preds.n
    v, inverse = np.unique(g, return_inverse=True)
    counts = np.bincount(inverse, minlength=v.size).astype(float)
    ysum = np.bincount(inverse, weights=y, minlength=v.size)

    base = float(np.mean(np.logaddexp(0.0, g) - g * y))

    def risk(h):
        z = v + h
        return float((counts @ np.logaddexp(0.0, z) - ysum @ z) / n)

    if v.size == 1:
        from scipy.optimize import minimize_scalar
        res = minimize_scalar(lambda h: risk(np.array([h])), bounds=(-4.0, 4.0),
                              method="bounded", options={"xatol": 1e-12})
        low = min(float(res.fun), risk(np.array([-4.0])), risk(np.array([4.0])))
        return max(base - min(low, base), 0.0)

    def jac(h):
        return (counts * expit(v + h) - ysum) / n

    def hess(h):
        s = expit(v + h)
        return sparse.diags(counts * s * (1.0 - s) / n, format="csc")

    h = _minimize_chain(risk, jac, hess, np.zeros(v.size), v, box=4.0)
    return max(base - min(risk(h), base), 0.0)


# ---------------------------------------------------------------------------
# binned ECE and kernel calibration error
# ---------------------------------------------------------------------------

def default_bin_count(n: int) -> int:
    """Integer cube-root rule floor(n^(1/3)), clamped to at least one bin."""
    b = max(int(round(float(n) ** (1.0 / 3.0))), 1)
    while (b + 1) ** 3 <= n:
        b += 1
    while b > 1 and b**3 > n:
        b -= 1
    return b


def binned_ece(preds: PredictionSet, bins: int | None = None) -> tuple[float, int]:
    """Equal-width binned expected calibration error on [0, 1].

    The last bin is right-closed so p = 1 is counted; empty bins contribute 0.
    Returns (ece, bin_count) with bin_count = bins or floor(n^(1/3)).
    """
    if preds.space != PROBABILITY:
        raise InputError("binned_ece expects a probability-space PredictionSet")
    if bins is not None and bins <= 0:
        raise InputError(f"bins must be positive, got {bins}")
    b = bins if bins is not None else default_bin_count(preds.n)
    p, y = preds.values, preds.labels
    idx = np.minimum((p * b).astype(int), b - 1)
    per_bin = np.bincount(idx, weights=y - p, minlength=b)
    return float(np.sum(np.abs(per_bin)) / preds.n), b


def mmce(preds: PredictionSet, spec: KernelSpec | None = None) -> float:
    """Kernel (maximum mean) calibration error, plug-in V-statistic:

        sqrt( (1/n^2) sum_ij (y_i - p_i)(y_j - p_j) k(p_i, p_j) )

    with the radicand clamped at zero. By default the kernel is Laplace with
    bandwidth set by the median heuristic on the prediction values themselves
    (falling back to 1.0 when predictions are constant).
    """
    if preds.space != PROBABILITY:
        raise InputError("mmce expects a probability-space PredictionSet")
    p, y = preds.values, preds.labels
    if spec is None:
        if preds.n >= 2:
            sigma, _ = median_heuristic(p[:, None])
        else:
            sigma = 1.0
        spec = KernelSpec(LAPLACE, sigma)
    resid = y - p
    if not np.any(resid):
        return 0.0
    K = kernel_matrix(spec, p[:, None])
    rad = float(resid @ K @ resid) / (preds.n**2)
    return float(np.sqrt(max(rad, 0.0)))


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def witness_oracle(preds: PredictionSet, lip: float, box: float,
                   step: float) -> float:
    """Discretized dynamic program over witness values in {-box, ..., box}.

    Walks the sorted distinct prediction values, carrying the best achievable
    partial objective for every grid level and admitting transitions whose
    value change respects the chain constraint. Independent of the LP path;
    intended for small n. The result is within O(step) of the exact optimum.
    """
    if step <= 0:
        raise InputError(f"step must be positive, got {step}")
    residuals = preds.labels - preds.probs()
    v, w = _merge_ties(preds.values, residuals)
    levels = int(round(2.0 * box / step)) + 1
    grid = -box + step * np.arange(levels)
    best = w[0] * grid
    for j in range(1, v.size):
        reach = int(np.floor(lip * (v[j] - v[j - 1]) / step + 1e-9))
        if reach >= levels:
            best = np.full(levels, best.max())
        elif reach > 0:
            best = maximum_filter1d(best, size=2 * reach + 1, mode="constant",
                                    cval=-np.inf)
        best = best + w[j] * grid
    return float(best.max())


# ---------------------------------------------------------------------------
# combined report and prediction-file I/O
# ---------------------------------------------------------------------------

def accuracy(preds: PredictionSet) -> float:
    return float(np.mean((preds.probs() >= 0.5) == (preds.labels == 1)))


def metric_report(preds: PredictionSet, include_pgap: bool = False,
                  bins: int | None = None,
                  mmce_spec: KernelSpec | None = None) -> MetricReport:
    """Evaluate every applicable metric on one PredictionSet.

    Dual metrics are reported only for logit-space inputs; smooth_ce, binned
    ECE, and MMCE are evaluated on the (sigmoid-mapped) probabilities. The
    post-processing gaps are optional because they dominate the cost on large
    inputs.
    """
    if preds.space == LOGIT:
        prob_view = PredictionSet.probabilities(preds.probs(), preds.labels)
        dual, _ = dual_smooth_ce(preds)
        pl = pgap_logistic(preds) if include_pgap else None
    else:
        prob_view = preds
        dual = None
        pl = None
    smce, _ = smooth_ce(prob_view)
    ece, bin_count = binned_ece(prob_view, bins)
    return MetricReport(
        smce=smce,
        dual_smce=dual,
        pgap_sq=pgap_sq(prob_view) if include_pgap else None,
        pgap_logistic=pl,
        binned_ece=ece,
        bin_count=bin_count,
        mmce=mmce(prob_view, mmce_spec),
        accuracy=accuracy(preds),
        n=preds.n,
    )


def write_prediction_file(path, preds: PredictionSet) -> None:
    lines = [f"# space={preds.space}", "value,label"]
    for v, y in zip(preds.values, preds.labels):
        lines.append(f"{format_float(v)},{int(y)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_prediction_file(path) -> PredictionSet:
    """Parse a `value,label` CSV whose leading comment declares the space
    (`# space=probability` or `# space=logit`)."""
    space = None
    values, labels = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("space="):
                    space = body.split("=", 1)[1].strip()
                continue
            if line.lower().replace(" ", "") == "value,label":
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected `value,label`, got {line!r}")
            try:
                values.append(float(parts[0]))
                labels.append(int(parts[1]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if space is None:
        raise ParseError(f"{path}: missing `# space=...` declaration")
    if space not in SPACES:
        raise ParseError(f"{path}: unknown space {space!r}")
    if not values:
        raise InputError(f"{path}: no prediction rows")
    return PredictionSet(np.array(values), np.array(labels), space)
