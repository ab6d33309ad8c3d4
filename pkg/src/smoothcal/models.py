"""L2-regularized kernel models: closed-form ridge regression and
gradient-descent logistic regression, both with an unregularized bias.

The predictor is f(x) = sum_i alpha_i k(x, x_i) + b (the 1/n of the textbook
representer form is absorbed into alpha), or w . z(x) + b over random Fourier
features when a feature map is used. The regularizer is lambda * alpha' K alpha
(respectively lambda * ||w||^2); the bias is never penalized, which is why
large lambda drives the model toward the base-rate constant rather than zero.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import InputError, NumericalError, OptimizerError
from .kernels import (FAMILIES, KernelSpec, RffMap, gram_matrix, kernel_matrix,
                      make_rff_map, rff_features)
from .metrics import PredictionSet, format_float

SQUARED = "squared"
LOGISTIC = "logistic"

PROB_CLIP = 1e-6
KRR_JITTER = 1e-10


@dataclass
class OptimizerSettings:
    """Full-batch gradient descent settings for logistic training.

    Defaults: up to 1000 iterations at step size 0.01, stopping once the
    objective decrease falls below 1e-6. A proposal that fails to decrease the
    objective is rejected and the step halved; `divergence_limit` consecutive
    rejections abort training. err_n estimation (against a 10x longer
    reference run with step decay) is opt-in because of its cost.
    """

    max_iter: int = 1000
    step_size: float = 0.01
    tol: float = 1e-6
    divergence_limit: int = 50
    estimate_err_n: bool = False
    rff_threshold: int = 4000
    rff_features: int = 2000
    rff_seed: int = 0


@dataclass
class TrainReport:
    iterations: int
    final_grad_norm: float
    err_n: float | None
    converged: bool


@dataclass
class KernelModel:
    loss_family: str
    kernel: KernelSpec | RffMap
    coeffs: np.ndarray
    bias: float
    lam: float
    hilbert_norm_sq: float
    train_objective: float
    support_x: np.ndarray | None = None

    @property
    def coeff_kind(self) -> str:
        return "dual" if self.support_x is not None else "feature"

    @property
    def hilbert_norm(self) -> float:
        return float(np.sqrt(max(self.hilbert_norm_sq, 0.0)))


def _validate_training_inputs(X, y, lam):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size or y.size < 1:
        raise InputError(f"incompatible shapes X{X.shape}, y({y.size},)")
    if not np.all((y == 0) | (y == 1)):
        raise InputError("labels must be 0 or 1")
    if not np.isfinite(lam) or lam <= 0:
        raise InputError(f"lambda must be positive, got {lam}")
    return X, y


def _scores(model: KernelModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if model.coeff_kind == "dual":
        K = kernel_matrix(model.kernel, X, model.support_x)
        return K @ model.coeffs + model.bias
    return rff_features(model.kernel, X) @ model.coeffs + model.bias


def predict(model: KernelModel, X) -> np.ndarray:
    """Raw model outputs: regression values for squared loss, logits for
    logistic loss."""
    return _scores(model, X)


def predict_proba(model: KernelModel, X) -> np.ndarray:
    """Probability view of the raw outputs. Regression outputs are clipped to
    [1e-6, 1-1e-6]; logits pass through the sigmoid."""
    raw = _scores(model, X)
    if model.loss_family == SQUARED:
        return np.clip(raw, PROB_CLIP, 1.0 - PROB_CLIP)
    return expit(raw)


def prediction_set(model: KernelModel, X, y) -> PredictionSet:
    """PredictionSet in the model's natural space: clipped probabilities for
    ridge regression, logits for logistic regression."""
    y = np.asarray(y)
    if model.loss_family == SQUARED:
        return PredictionSet.probabilities(predict_proba(model, X), y)
    return PredictionSet.logits(predict(model, X), y)


def objective(model: KernelModel, X, y) -> float:
    """Regularized empirical risk of the model on the given data.

    Squared: (1/n) sum (y - f(x))^2 + lambda ||f||^2.
    Logistic: (1/n) sum [softplus(g(x)) - g(x) y] + lambda ||g||^2.
    The Hilbert norm is the model's own; the bias is not regularized.
    """
    X, y = _validate_training_inputs(X, y, model.lam)
    raw = _scores(model, X)
    if model.loss_family == SQUARED:
        loss = float(np.mean((y - raw) ** 2))
    else:
        loss = float(np.mean(np.logaddexp(0.0, raw) - raw * y))
    return loss + model.lam * model.hilbert_norm_sq


# ---------------------------------------------------------------------------
# kernel ridge regression (closed form)
# ---------------------------------------------------------------------------

def fit_krr(X, y, spec: KernelSpec | RffMap, lam: float) -> tuple[KernelModel, TrainReport]:
    """Exact minimizer of the squared objective with an unregularized bias.

    Solves the symmetric saddle system

        [K + n lam I   1] [alpha]   [y]
        [1'            0] [b    ] = [0]

    whose first block makes the alpha-gradient vanish and whose last row
    (1' alpha = 0) is equivalent to bias stationarity. A 1e-10 diagonal jitter
    guards against near-singular Gram matrices on almost-duplicate inputs.
    """
    X, y = _validate_training_inputs(X, y, lam)
    n = y.size
    if isinstance(spec, RffMap):
        return _fit_krr_features(X, y, spec, lam)
    K = gram_matrix(spec, X)
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = K
    M[np.arange(n), np.arange(n)] += n * lam + KRR_JITTER
    M[:n, n] = 1.0
    M[n, :n] = 1.0
    rhs = np.concatenate([y, [0.0]])
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(K + (n * lam + KRR_JITTER) * np.eye(n))
        raise NumericalError(
            f"ridge system is singular after jitter (cond ~ {cond:.3e})") from exc
    alpha, b = sol[:n], float(sol[n])

    fitted = K @ alpha + b
    grad_alpha = (2.0 / n) * (K @ (fitted - y)) + 2.0 * lam * (K @ alpha)
    grad_b = 2.0 * float(np.mean(fitted - y))
    grad_norm = max(float(np.max(np.abs(grad_alpha))), abs(grad_b))

    norm_sq = float(alpha @ K @ alpha)
    model = KernelModel(SQUARED, spec, alpha, b, float(lam), norm_sq,
                        float(np.mean((y - fitted) ** 2)) + lam * norm_sq,
                        support_x=X)
    return model, TrainReport(iterations=0, final_grad_norm=grad_norm,
                              err_n=0.0, converged=True)


def _fit_krr_features(X, y, rmap: RffMap, lam: float):
    n = y.size
    Z = rff_features(rmap, X)
    D = rmap.feature_count
    M = np.zeros((D + 1, D + 1))
    M[:D, :D] = Z.T @ Z
    M[np.arange(D), np.arange(D)] += n * lam + KRR_JITTER
    M[:D, D] = Z.sum(axis=0)
    M[D, :D] = Z.sum(axis=0)
    M[D, D] = n
    rhs = np.concatenate([Z.T @ y, [y.sum()]])
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("feature ridge system is singular after jitter") from exc
    w, b = sol[:D], float(sol[D])
    fitted = Z @ w + b
    grad_w = (2.0 / n) * (Z.T @ (fitted - y)) + 2.0 * lam * w
    grad_b = 2.0 * float(np.mean(fitted - y))
    grad_norm = max(float(np.max(np.abs(grad_w))), abs(grad_b))
    norm_sq = float(w @ w)
    model = KernelModel(SQUARED, rmap, w, b, float(lam), norm_sq,
                        float(np.mean((y - fitted) ** 2)) + lam * norm_sq)
    return model, TrainReport(0, grad_norm, 0.0, True)


# ---------------------------------------------------------------------------
# kernel logistic regression (gradient descent)
# ---------------------------------------------------------------------------

def _klr_objective(K, y, lam, alpha, b):
    g = K @ alpha + b
    return float(np.mean(np.logaddexp(0.0, g) - g * y) + lam * (alpha @ (K @ alpha)))


def klr_gradient(K, y, lam, alpha, b):
    """Analytic gradient of the logistic objective in (alpha, b).

    d/d alpha = K (sigmoid(g) - y)/n + 2 lam K alpha, d/d b = mean(sigmoid(g) - y).
    """
    n = y.size
    g = K @ alpha + b
    r = expit(g) - y
    return K @ r / n + 2.0 * lam * (K @ alpha), float(np.mean(r))


def _descend(K, y, lam, opts: OptimizerSettings, max_iter, decay_every=None):
    n = y.size
    alpha = np.zeros(n)
    b = 0.0
    step = opts.step_size
    prev = _klr_objective(K, y, lam, alpha, b)
    rejections = 0
    converged = False
    iterations = 0
    for it in range(max_iter):
        iterations = it + 1
        if decay_every and it > 0 and it % decay_every == 0:
            step *= 0.5
        ga, gb = klr_gradient(K, y, lam, alpha, b)
        cand_a = alpha - step * ga
        cand_b = b - step * gb
        cur = _klr_objective(K, y, lam, cand_a, cand_b)
        if not np.isfinite(cur) or cur > prev:
            rejections += 1
            step *= 0.5
            if rejections >= opts.divergence_limit:
                raise OptimizerError(
                    f"objective failed to decrease for {rejections} consecutive "
                    "proposals; try a smaller step size")
            continue
        rejections = 0
        alpha, b = cand_a, cand_b
        if prev - cur < opts.tol:
            prev = cur
            converged = True
            break
        prev = cur
    return alpha, b, prev, iterations, converged


def fit_klr(X, y, spec: KernelSpec | RffMap, lam: float,
            opts: OptimizerSettings | None = None) -> tuple[KernelModel, TrainReport]:
    """Approximate minimizer of the logistic objective by full-batch gradient
    descent from zero.

    Starting at zero guarantees the final objective stays below log 2, which
    pins the Hilbert norm under sqrt(log 2 / lambda). Inputs larger than
    opts.rff_threshold switch to the random-feature linear form for
    scalability; passing an RffMap uses it directly. When opts.estimate_err_n
    is set, the optimization error is measured against a reference run with
    10x the iterations and step halving every 2000 iterations.
    """
    opts = opts or OptimizerSettings()
    X, y = _validate_training_inputs(X, y, lam)
    n = y.size
    if isinstance(spec, KernelSpec) and n > opts.rff_threshold:
        spec = make_rff_map(spec.family, X.shape[1], opts.rff_features,
                            spec.bandwidth, opts.rff_seed)
    if isinstance(spec, RffMap):
        return _fit_klr_features(X, y, spec, lam, opts)

    K = gram_matrix(spec, X)
    alpha, b, obj, iterations, converged = _descend(K, y, lam, opts, opts.max_iter)
    err_n = None
    if opts.estimate_err_n:
        _, _, ref_obj, _, _ = _descend(K, y, lam, opts, opts.max_iter * 10,
                                       decay_every=2000)
        err_n = max(obj - min(ref_obj, obj), 0.0)
    ga, gb = klr_gradient(K, y, lam, alpha, b)
    grad_norm = max(float(np.max(np.abs(ga))), abs(gb))
    model = KernelModel(LOGISTIC, spec, alpha, float(b), float(lam),
                        float(alpha @ (K @ alpha)), obj, support_x=X)
    return model, TrainReport(iterations, grad_norm, err_n, converged)


def _fit_klr_features(X, y, rmap: RffMap, lam: float, opts: OptimizerSettings):
    n = y.size
    Z = rff_features(rmap, X)

    def obj_fn(w, b):
        g = Z @ w + b
        return float(np.mean(np.logaddexp(0.0, g) - g * y) + lam * (w @ w))

    def grad_fn(w, b):
        g = Z @ w + b
        r = expit(g) - y
        return Z.T @ r / n + 2.0 * lam * w, float(np.mean(r))

    def run(max_iter, decay_every=None):
        w = np.zeros(rmap.feature_count)
        b = 0.0
        step = opts.step_size
        prev = obj_fn(w, b)
        rejections = 0
        converged = False
        iterations = 0
        for it in range(max_iter):
            iterations = it + 1
            if decay_every and it > 0 and it % decay_every == 0:
                step *= 0.5
            gw, gb = grad_fn(w, b)
            cand_w, cand_b = w - step * gw, b - step * gb
            cur = obj_fn(cand_w, cand_b)
            if not np.isfinite(cur) or cur > prev:
                rejections += 1
                step *= 0.5
                if rejections >= opts.divergence_limit:
                    raise OptimizerError(
                        f"objective failed to decrease for {rejections} consecutive "
                        "proposals; try a smaller step size")
                continue
            rejections = 0
            w, b = cand_w, cand_b
            if prev - cur < opts.tol:
                prev = cur
                converged = True
                break
            prev = cur
        return w, b, prev, iterations, converged

    w, b, obj, iterations, converged = run(opts.max_iter)
    err_n = None
    if opts.estimate_err_n:
        _, _, ref_obj, _, _ = run(opts.max_iter * 10, decay_every=2000)
        err_n = max(obj - min(ref_obj, obj), 0.0)
    gw, gb = grad_fn(w, b)
    grad_norm = max(float(np.max(np.abs(gw))), abs(gb))
    model = KernelModel(LOGISTIC, rmap, w, float(b), float(lam), float(w @ w), obj)
    return model, TrainReport(iterations, grad_norm, err_n, converged)


def training_smce_bound(model: KernelModel, report: TrainReport) -> float:
    """sqrt(lambda + err_n): the guarantee on training smooth calibration
    error for squared-loss fits in a composition-closed function class (met by
    the one-dimensional Laplace kernel). Elsewhere it is a diagnostic to
    report alongside the measured value, not an assertion."""
    if model.loss_family != SQUARED:
        raise InputError("the training bound applies to squared-loss models")
    err = report.err_n if report.err_n is not None else 0.0
    return float(np.sqrt(model.lam + err))


# ---------------------------------------------------------------------------
# serialization (versioned flat file, lossless float round-trip)
# ---------------------------------------------------------------------------

MODEL_FORMAT = "smoothcal-model v1"


def save_model(path, model: KernelModel) -> None:
    buf = io.StringIO()
    buf.write(f"# {MODEL_FORMAT}\n")
    buf.write(f"loss_family={model.loss_family}\n")
    k = model.kernel
    if isinstance(k, RffMap):
        buf.write(f"kernel_kind=rff\nkernel_family={k.family}\n")
        buf.write(f"bandwidth={format_float(k.bandwidth)}\n")
        buf.write(f"rff_features={k.feature_count}\nrff_dim={k.dim}\nrff_seed={k.seed}\n")
    else:
        buf.write(f"kernel_kind=exact\nkernel_family={k.family}\n")
        buf.write(f"bandwidth={format_float(k.bandwidth)}\n")
    buf.write(f"lambda={format_float(model.lam)}\n")
    buf.write(f"bias={format_float(model.bias)}\n")
    buf.write(f"hilbert_norm_sq={format_float(model.hilbert_norm_sq)}\n")
    buf.write(f"train_objective={format_float(model.train_objective)}\n")
    buf.write(f"n_coeffs={model.coeffs.size}\n")
    buf.write("coeffs:\n")
    for c in model.coeffs:
        buf.write(format_float(c) + "\n")
    if model.support_x is not None:
        buf.write(f"support:{model.support_x.shape[0]}x{model.support_x.shape[1]}\n")
        for row in model.support_x:
            buf.write(",".join(format_float(v) for v in row) + "\n")
    Path(path).write_text(buf.getvalue())


def load_model(path) -> KernelModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != f"# {MODEL_FORMAT}":
        raise InputError(f"{path}: not a {MODEL_FORMAT} file")
    header: dict[str, str] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith(("coeffs:", "support:")):
        key, _, val = lines[i].partition("=")
        header[key.strip()] = val.strip()
        i += 1
    if i >= len(lines) or lines[i] != "coeffs:":
        raise InputError(f"{path}: missing coeffs block")
    n_coeffs = int(header["n_coeffs"])
    coeffs = np.array([float(lines[i + 1 + j]) for j in range(n_coeffs)])
    i += 1 + n_coeffs
    support = None
    if i < len(lines) and lines[i].startswith("support:"):
        rows, cols = (int(v) for v in lines[i].split(":", 1)[1].split("x"))
        support = np.array([[float(v) for v in lines[i + 1 + r].split(",")]
                            for r in range(rows)])
        if support.shape != (rows, cols):
            raise InputError(f"{path}: support block shape mismatch")

    family = header["kernel_family"]
    if family not in FAMILIES:
        raise InputError(f"{path}: unknown kernel family {family!r}")
    if header["kernel_kind"] == "rff":
        kernel = make_rff_map(family, int(header["rff_dim"]),
                              int(header["rff_features"]),
                              float(header["bandwidth"]), int(header["rff_seed"]))
    else:
        kernel = KernelSpec(family, float(header["bandwidth"]))
    return KernelModel(
        loss_family=header["loss_family"],
        kernel=kernel,
        coeffs=coeffs,
        bias=float(header["bias"]),
        lam=float(header["lambda"]),
        hilbert_norm_sq=float(header["hilbert_norm_sq"]),
        train_objective=float(header["train_objective"]),
        support_x=support,
    )


def models_equal(a: KernelModel, b: KernelModel) -> bool:
    """Bit-exact equality, used to verify serialization round-trips."""
    if (a.loss_family, a.coeff_kind) != (b.loss_family, b.coeff_kind):
        return False
    if not (a.bias == b.bias and a.lam == b.lam
            and a.hilbert_norm_sq == b.hilbert_norm_sq
            and a.train_objective == b.train_objective):
        return False
    if not np.array_equal(a.coeffs, b.coeffs):
        return False
    if (a.support_x is None) != (b.support_x is None):
        return False
    if a.support_x is not None and not np.array_equal(a.support_x, b.support_x):
        return False
    ka, kb = a.kernel, b.kernel
    if isinstance(ka, RffMap) != isinstance(kb, RffMap):
        return False
    if isinstance(ka, RffMap):
        return (ka.family == kb.family and ka.bandwidth == kb.bandwidth
                and ka.feature_count == kb.feature_count and ka.seed == kb.seed
                and np.array_equal(ka.frequencies, kb.frequencies)
                and np.array_equal(ka.phases, kb.phases))
    return ka == kb
