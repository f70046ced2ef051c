"""Exact GP regression with an isotropic squared-exponential kernel.

Inputs and outputs are standardized before training; the prior mean is zero in
standardized output units. Hyperparameters are learned by maximizing the log
marginal likelihood over log-parameters with multi-start L-BFGS-B, and the
Cholesky factor and Woodbury vector are cached so prediction never refactors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.optimize as so

from .dataset import Dataset, DataError

FORMAT_NAME = "vsagp/trained-gp"
FORMAT_VERSION = 1

_LOG_2PI = math.log(2.0 * math.pi)
# pivot^2 below this fraction of the largest diagonal entry counts as singular
_MIN_PIVOT_RATIO = 1e-14


class CholeskyFailure(np.linalg.LinAlgError):
    pass


class FitFailure(RuntimeError):
    pass


class NonFiniteInput(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    """SE kernel hyperparameters, stored as logs so every value stays positive."""

    log_signal_variance: float
    log_length_scale: float
    log_noise_variance: float

    @classmethod
    def from_values(cls, signal_variance, length_scale, noise_variance):
        vals = (signal_variance, length_scale, noise_variance)
        if not all(v > 0 for v in vals):
            raise ValueError(f"hyperparameters must be positive, got {vals}")
        return cls(*(math.log(v) for v in vals))

    @classmethod
    def from_array(cls, theta) -> "Hyperparams":
        return cls(*(float(t) for t in theta))

    def to_array(self) -> np.ndarray:
        return np.array([self.log_signal_variance, self.log_length_scale,
                         self.log_noise_variance])

    @property
    def signal_variance(self) -> float:
        return math.exp(self.log_signal_variance)

    @property
    def length_scale(self) -> float:
        return math.exp(self.log_length_scale)

    @property
    def noise_variance(self) -> float:
        return math.exp(self.log_noise_variance)

    def as_dict(self) -> dict:
        return {"signal_variance": self.signal_variance,
                "length_scale": self.length_scale,
                "noise_variance": self.noise_variance}


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    standard_deviations: np.ndarray

    MIN_STD = 1e-12

    @classmethod
    def fit(cls, data) -> "Standardizer":
        data = np.asarray(data, dtype=float)
        means = data.mean(axis=0)
        stds = np.maximum(data.std(axis=0), cls.MIN_STD)
        return cls(np.atleast_1d(means), np.atleast_1d(stds))

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        out = (x - self.means) / self.standard_deviations
        return out if x.ndim else out.reshape(())

    def invert(self, z):
        z = np.asarray(z, dtype=float)
        return z * self.standard_deviations + self.means

    def as_dict(self) -> dict:
        return {"means": self.means.tolist(),
                "standard_deviations": self.standard_deviations.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.array(d["means"], dtype=float),
                   np.array(d["standard_deviations"], dtype=float))


@dataclass(frozen=True)
class GPOptions:
    restarts: int = 5
    max_iter: int = 500
    gtol: float = 1e-6
    ftol: float = 1e-9
    max_line_search: int = 8
    init_low: float = 1e-2
    init_high: float = 10.0
    noise_floor: float = 1e-8
    noise_max: float = 1e2
    signal_variance_bounds: tuple = (1e-6, 1e6)
    length_scale_bounds: tuple = (1e-3, 1e3)
    jitter: float = 1e-10
    max_jitter: float = 1e-6
    seed: int = 0

    def log_bounds(self):
        return [tuple(math.log(b) for b in self.signal_variance_bounds),
                tuple(math.log(b) for b in self.length_scale_bounds),
                (math.log(self.noise_floor), math.log(self.noise_max))]


@dataclass(frozen=True)
class Prediction:
    mean: float  # physical output units
    variance: float  # standardized output units


@dataclass(frozen=True)
class TrainedGP:
    hyperparams: Hyperparams
    input_standardizer: Standardizer
    output_standardizer: Standardizer
    training_inputs: np.ndarray  # standardized
    cholesky_factor: np.ndarray  # lower factor of K + (noise + jitter) I
    woodbury_vector: np.ndarray
    jitter: float = 0.0
    channel: str = ""
    log_marginal_likelihood: float = float("nan")
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("training_inputs", "cholesky_factor", "woodbury_vector"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.woodbury_vector)


# ---------------------------------------------------------------------------
# kernel and likelihood


def sq_dists(A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kernel_eval(x, x_prime, h: Hyperparams) -> float:
    """sigma_f^2 * exp(-|x - x'|^2 / (2 l^2)) for a single pair."""
    d = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
    r2 = float(d @ d)
    return math.exp(h.log_signal_variance - 0.5 * r2 * math.exp(-2.0 * h.log_length_scale))


def kernel_matrix(A, B, h: Hyperparams) -> np.ndarray:
    D2 = sq_dists(A, B)
    return h.signal_variance * np.exp(-0.5 * D2 / h.length_scale ** 2)


def factor(K, jitter: float = 1e-10, max_jitter: float = 1e-6):
    """Cholesky of ``K + jitter*I``, escalating jitter tenfold up to ``max_jitter``.

    Returns ``(L, jitter_used)``.
    """
    K = np.array(K, dtype=float)
    if not np.all(np.isfinite(K)):
        raise CholeskyFailure("kernel matrix contains non-finite entries")
    return _factor_inplace(K, jitter, max_jitter)


def _factor_inplace(Ky, jitter, max_jitter):
    """Lower Cholesky factor of ``Ky + jitter*I`` (``Ky`` is overwritten)."""
    diag = np.einsum("ii->i", Ky)
    diag_max = float(diag.max())
    j = jitter
    base = diag.copy()
    while True:
        diag[:] = base + j
        L, info = sla.lapack.dpotrf(Ky, lower=1, clean=1, overwrite_a=0)
        if info == 0:
            piv = np.einsum("ii->i", L)
            if np.all(np.isfinite(piv)) and piv.min() ** 2 > _MIN_PIVOT_RATIO * diag_max:
                return L, j
        if j <= 0 or j * 10 > max_jitter * (1 + 1e-9):
            raise CholeskyFailure(
                f"kernel matrix not positive definite (jitter up to {j:g})")
        j *= 10


def _lml_terms(D2, y, theta, jitter, max_jitter, want_grad=True):
    sf2 = math.exp(theta[0])
    inv_l2 = math.exp(-2.0 * theta[1])
    sn2 = math.exp(theta[2])
    n = len(y)
    Kf = np.exp(D2 * (-0.5 * inv_l2))
    Kf *= sf2
    Ky = Kf.copy()
    Ky[np.diag_indices(n)] += sn2
    L, _ = _factor_inplace(Ky, jitter, max_jitter)
    alpha = sla.cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * _LOG_2PI
    if not want_grad:
        return lml, None
    # lower triangle of the inverse; the upper triangle of L is zero
    Kinv, info = sla.lapack.dpotri(L, lower=1, overwrite_c=1)
    if info != 0:
        raise CholeskyFailure(f"dpotri failed with info={info}")
    # sum_ij Kinv_ij M_ij for symmetric M from the lower triangle only
    P = Kinv * Kf
    tr_sf = 2.0 * P.sum() - np.trace(P)
    P *= D2  # diagonal of D2 is zero
    tr_l = 2.0 * P.sum()
    M = Kf * D2
    grad = np.array([
        0.5 * (float(alpha @ (Kf @ alpha)) - tr_sf),
        0.5 * inv_l2 * (float(alpha @ (M @ alpha)) - tr_l),
        0.5 * sn2 * (float(alpha @ alpha) - float(np.trace(Kinv))),
    ])
    return lml, grad


def log_marginal_likelihood(X, y, h: Hyperparams, jitter: float = 1e-10,
                            max_jitter: float = 1e-6) -> float:
    """log p(y | X, h) for standardized inputs ``X`` (n, d) and outputs ``y``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    lml, _ = _lml_terms(sq_dists(X, X), y, h.to_array(), jitter, max_jitter,
                        want_grad=False)
    return lml


def lml_gradient(X, y, h: Hyperparams, jitter: float = 1e-10,
                 max_jitter: float = 1e-6) -> np.ndarray:
    """Gradient of the log marginal likelihood w.r.t. (log sf2, log l, log sn2)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    _, grad = _lml_terms(sq_dists(X, X), y, h.to_array(), jitter, max_jitter)
    return grad


# ---------------------------------------------------------------------------
# training


def _optimize_from(D2, y, theta0, opts: GPOptions):
    fail_value = [None]

    def objective(theta):
        try:
            lml, grad = _lml_terms(D2, y, theta, opts.jitter, opts.max_jitter)
        except CholeskyFailure:
            # rejected step: worse than anything seen, flat so the line search backs off
            bad = fail_value[0] if fail_value[0] is not None else 1e25
            return bad + 1e10, np.zeros(3)
        fail_value[0] = -lml if fail_value[0] is None else max(fail_value[0], -lml)
        return -lml, -grad

    try:
        _lml_terms(D2, y, theta0, opts.jitter, opts.max_jitter, want_grad=False)
    except CholeskyFailure:
        return None
    res = so.minimize(objective, theta0, jac=True, method="L-BFGS-B",
                      bounds=opts.log_bounds(),
                      options={"maxiter": opts.max_iter, "gtol": opts.gtol,
                               "ftol": opts.ftol, "maxls": opts.max_line_search})
    try:
        lml, grad = _lml_terms(D2, y, res.x, opts.jitter, opts.max_jitter)
    except CholeskyFailure:
        return None
    return {"theta": np.array(res.x), "lml": lml, "grad": grad,
            "iterations": int(res.nit), "converged": bool(res.success),
            "message": str(res.message)}


def fit_standardized(Xs, ys, opts: GPOptions = GPOptions()):
    """Multi-start marginal-likelihood maximization on standardized data.

    Returns ``(Hyperparams, best_run, runs)``; raises FitFailure when every
    restart hits a singular kernel matrix.
    """
    D2 = sq_dists(Xs, Xs)
    rng = np.random.default_rng(opts.seed)
    lo, hi = math.log(opts.init_low), math.log(opts.init_high)
    starts = rng.uniform(lo, hi, size=(opts.restarts, 3))
    bounds = np.array(opts.log_bounds())
    starts = np.clip(starts, bounds[:, 0], bounds[:, 1])
    runs = [_optimize_from(D2, ys, theta0, opts) for theta0 in starts]
    ok = [r for r in runs if r is not None]
    if not ok:
        raise FitFailure(f"all {opts.restarts} restarts failed (singular kernel matrix)")
    best = max(ok, key=lambda r: r["lml"])  # first wins ties
    return Hyperparams.from_array(best["theta"]), best, runs


def fit(d: Dataset, channel: str, opts: GPOptions = GPOptions()) -> TrainedGP:
    """Train the GP mapping (angle, stiffness) to the pressure of one bellows."""
    if not isinstance(d, Dataset):
        raise DataError("fit expects a Dataset")
    y = d.outputs(channel)
    in_std = Standardizer.fit(d.inputs)
    out_std = Standardizer.fit(y)
    Xs = in_std.apply(d.inputs)
    ys = out_std.apply(y).ravel()
    h, best, runs = fit_standardized(Xs, ys, opts)
    info = {"iterations": best["iterations"], "converged": best["converged"],
            "gradient_norm": float(np.linalg.norm(best["grad"])),
            "failed_restarts": sum(r is None for r in runs)}
    return build(h, in_std, out_std, Xs, ys, jitter=opts.jitter,
                 max_jitter=opts.max_jitter, channel=channel, info=info)


def build(h: Hyperparams, in_std: Standardizer, out_std: Standardizer, Xs, ys,
          jitter=1e-10, max_jitter=1e-6, channel="", info=None) -> TrainedGP:
    """Factor the kernel matrix once and cache the Woodbury vector."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    ys = np.asarray(ys, dtype=float).ravel()
    K = kernel_matrix(Xs, Xs, h)
    K[np.diag_indices(len(ys))] += h.noise_variance
    L, used = factor(K, jitter, max_jitter)
    alpha = sla.cho_solve((L, True), ys, check_finite=False)
    lml = (-0.5 * float(ys @ alpha) - float(np.sum(np.log(np.diag(L))))
           - 0.5 * len(ys) * _LOG_2PI)
    return TrainedGP(h, in_std, out_std, Xs, L, alpha, jitter=used, channel=channel,
                     log_marginal_likelihood=lml, info=dict(info or {}))


# ---------------------------------------------------------------------------
# prediction


def _standardize_query(g: TrainedGP, X):
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput(f"query contains non-finite values: {X}")
    return g.input_standardizer.apply(np.atleast_2d(X))


def predict(g: TrainedGP, x_star) -> Prediction:
    """Predictive mean (physical units) and variance (standardized) at one query."""
    xs = _standardize_query(g, x_star)
    h = g.hyperparams
    k = kernel_matrix(g.training_inputs, xs, h)[:, 0]
    mean_std = float(k @ g.woodbury_vector)
    v = sla.solve_triangular(g.cholesky_factor, k, lower=True, check_finite=False)
    var = max(h.signal_variance - float(v @ v), 0.0)
    mean = float(g.output_standardizer.invert(mean_std)[0])
    return Prediction(mean, var)


def predict_mean(g: TrainedGP, X) -> np.ndarray:
    """Predictive means for a batch of queries; O(n) per query."""
    xs = _standardize_query(g, X)
    k = kernel_matrix(xs, g.training_inputs, g.hyperparams)
    return g.output_standardizer.invert(k @ g.woodbury_vector)


# ---------------------------------------------------------------------------
# persistence


def to_document(g: TrainedGP, include_cholesky: bool = True) -> dict:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "channel": g.channel,
        "kernel": "squared_exponential_isotropic",
        "hyperparams": g.hyperparams.as_dict(),
        "log_hyperparams": g.hyperparams.to_array().tolist(),
        "jitter": g.jitter,
        "log_marginal_likelihood": g.log_marginal_likelihood,
        "input_standardizer": g.input_standardizer.as_dict(),
        "output_standardizer": g.output_standardizer.as_dict(),
        "training_inputs": g.training_inputs.tolist(),
        "woodbury_vector": g.woodbury_vector.tolist(),
    }
    if include_cholesky:
        doc["cholesky_factor"] = g.cholesky_factor.tolist()
    return doc


def from_document(doc: dict) -> TrainedGP:
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"not a trained-GP document (format={doc.get('format')!r})")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported trained-GP version {doc.get('version')!r}")
    h = Hyperparams.from_array(doc["log_hyperparams"])
    Xs = np.array(doc["training_inputs"], dtype=float)
    jitter = float(doc["jitter"])
    if "cholesky_factor" in doc:
        L = np.array(doc["cholesky_factor"], dtype=float)
    else:
        K = kernel_matrix(Xs, Xs, h)
        K[np.diag_indices(len(Xs))] += h.noise_variance
        L, _ = factor(K, jitter, jitter)
    return TrainedGP(h, Standardizer.from_dict(doc["input_standardizer"]),
                     Standardizer.from_dict(doc["output_standardizer"]),
                     Xs, L, np.array(doc["woodbury_vector"], dtype=float),
                     jitter=jitter, channel=doc.get("channel", ""),
                     log_marginal_likelihood=float(doc["log_marginal_likelihood"]))


def save(g: TrainedGP, path, include_cholesky: bool = True) -> None:
    Path(path).write_text(json.dumps(to_document(g, include_cholesky)) + "\n")


def load(path) -> TrainedGP:
    return from_document(json.loads(Path(path).read_text()))
