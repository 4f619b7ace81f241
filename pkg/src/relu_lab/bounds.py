"""Bound quantities: effective sample size, k*, effective dimension, and
assembled upper/lower bound values with every suppressed constant set to 1.

The values are structural predictors for shape and rate comparisons, not
absolute risk predictions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

import numpy as np

from relu_lab.model import (
    Distribution,
    NoiseKind,
    ProblemInstance,
    Spectrum,
    StepsizeSchedule,
    ValidationError,
    as_vector,
)


class SaturationWarning(RuntimeWarning):
    """A contraction factor 1 - h*gamma*lambda went negative and was clamped."""


class TheoremId(str, Enum):
    BERNOULLI_UPPER = "BernoulliUpper"
    BERNOULLI_LOWER = "BernoulliLower"
    GAUSSIAN_UPPER = "GaussianUpper"
    GAUSSIAN_LOWER = "GaussianLower"
    MISSPECIFIED_UPPER = "MisspecifiedUpper"
    SGD_LOWER_STRUCTURAL = "SgdLowerStructural"


@dataclass(frozen=True)
class HypercontractivityParams:
    alpha: float = 3.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 1:
            raise ValidationError("alpha must be at least 1")
        if self.beta <= 0:
            raise ValidationError("beta must be positive")


@dataclass
class BoundReport:
    theorem: TheoremId
    n_eff: float
    k_star: int
    d_eff: float
    bias_term: float
    variance_term: float
    extra_terms: Dict[str, float] = field(default_factory=dict)
    factors: Dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.bias_term + self.variance_term + sum(self.extra_terms.values())

    def to_json_dict(self) -> dict:
        return {
            "n_eff": self.n_eff,
            "k_star": self.k_star,
            "d_eff": self.d_eff,
            "bias": self.bias_term,
            "variance": self.variance_term,
            "extras": {**self.extra_terms, **self.factors},
            "total": self.total,
            "theorem": self.theorem.value,
        }


def n_eff(N: int) -> float:
    """N / log2(N)."""
    if N <= 1:
        raise ValidationError("N must exceed 1")
    if N <= 100:
        warnings.warn(f"N={N} is below the N > 100 regime of the bounds", stacklevel=2)
    return N / math.log2(N)


def _lam(s) -> np.ndarray:
    return s.eigenvalues if isinstance(s, Spectrum) else np.asarray(s, dtype=np.float64)


def k_star(s, gamma0: float, n_eff: float) -> int:
    """max{k : lambda_k >= 1/(gamma0 n_eff)}, or 0 if no eigenvalue qualifies."""
    if gamma0 <= 0:
        raise ValidationError("gamma0 must be positive")
    lam = _lam(s)
    thr = 1.0 / (gamma0 * n_eff)
    hits = np.nonzero(lam >= thr)[0]
    return int(hits[-1] + 1) if hits.size else 0


def effective_dim(s, gamma0: float, n_eff: float, k: int) -> float:
    """k + n_eff^2 gamma0^2 sum_{i>k} lambda_i^2."""
    lam = _lam(s)
    if not 0 <= k <= lam.size:
        raise ValidationError(f"k={k} outside 0..{lam.size}")
    tail = lam[k:]
    return k + n_eff ** 2 * gamma0 ** 2 * float(np.dot(tail, tail))


def best_k(s, gamma0: float, n_eff: float) -> int:
    """k in 0..d minimising the effective dimension (first minimiser)."""
    lam = _lam(s)
    sq = lam * lam
    tails = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])
    d_eff = np.arange(lam.size + 1) + n_eff ** 2 * gamma0 ** 2 * tails
    return int(np.argmin(d_eff))


def bias_decay_norm(w0, w_star, s, sched: StepsizeSchedule, halving: float) -> float:
    """sum_i lambda_i (w0 - w*)_i^2 prod_t (1 - halving gamma_t lambda_i)^2.

    ``halving`` is 0.5 for the upper-bound contraction and 1.0 for the lower.
    Negative contraction factors are clamped to 0 with a SaturationWarning.
    """
    if halving not in (0.5, 1.0):
        raise ValidationError("halving must be 0.5 or 1.0")
    lam = _lam(s)
    diff = as_vector(w0, lam.size, "w0") - as_vector(w_star, lam.size, "w_star")
    gam, counts = np.unique(sched.values(), return_counts=True)
    factor = np.ones_like(lam)
    saturated = False
    for g, n in zip(gam, counts):
        f = 1.0 - halving * g * lam
        if np.any(f < 0):
            saturated = True
            f = np.maximum(f, 0.0)
        factor *= f ** (2 * int(n))
    if saturated:
        warnings.warn("contraction factor clamped at 0", SaturationWarning, stacklevel=2)
    return float(np.dot(lam, diff * diff * factor))


def _split_norm(v: np.ndarray, lam: np.ndarray, k: int, n_eff_: float, gamma0: float) -> float:
    """||v||^2 in the metric I_{0:k}/(n_eff gamma0) + H_{k:inf}."""
    head = float(np.dot(v[:k], v[:k])) / (n_eff_ * gamma0)
    return head + float(np.dot(lam[k:], v[k:] * v[k:]))


def theorem_bound(
    theorem_id,
    problem: ProblemInstance,
    gamma0: float,
    N: int,
    k: Optional[int] = None,
    hyper: Optional[HypercontractivityParams] = None,
    opt_proxy: Optional[float] = None,
    w0=None,
    sigma_sq: Optional[float] = None,
) -> BoundReport:
    """Evaluate one theorem's bound under the geometric-decay schedule.

    Lower bounds use k = k*; upper bounds default to the D_eff-minimising k.
    ``sigma_sq`` defaults to the problem's noise variance.
    """
    tid = TheoremId(theorem_id)
    lam = problem.eigenvalues
    w0 = np.zeros(problem.d) if w0 is None else as_vector(w0, problem.d, "w0")
    sig2 = problem.noise.sigma_sq if sigma_sq is None else float(sigma_sq)
    if hyper is None:
        hyper = HypercontractivityParams()
    trace = float(lam.sum())

    if tid in (TheoremId.BERNOULLI_UPPER, TheoremId.BERNOULLI_LOWER,
               TheoremId.SGD_LOWER_STRUCTURAL):
        if problem.distribution is not Distribution.BERNOULLI:
            raise ValidationError(f"{tid.value} needs symmetric Bernoulli features")
        limit = 1.0 if tid is TheoremId.SGD_LOWER_STRUCTURAL else 0.5
        if not gamma0 < limit:
            raise ValidationError(f"{tid.value} needs gamma0 < {limit}")
    elif tid is TheoremId.GAUSSIAN_UPPER:
        if not gamma0 < 1.0 / (4 * hyper.alpha * trace):
            raise ValidationError("GaussianUpper needs gamma0 < 1/(4 alpha tr(H))")
    elif tid is TheoremId.GAUSSIAN_LOWER:
        if not gamma0 < 1.0 / lam[0]:
            raise ValidationError("GaussianLower needs gamma0 < 1/lambda_1")
    elif tid is TheoremId.MISSPECIFIED_UPPER:
        if not gamma0 < 1.0 / (8 * hyper.alpha * trace):
            raise ValidationError("MisspecifiedUpper needs gamma0 < 1/(8 alpha tr(H))")
        if opt_proxy is None:
            raise ValidationError("MisspecifiedUpper needs an OPT estimate")
        if sig2 <= 0:
            raise ValidationError("MisspecifiedUpper needs a positive noise level sigma_sq")
    if tid is not TheoremId.MISSPECIFIED_UPPER and problem.noise.kind is NoiseKind.MISSPECIFIED:
        raise ValidationError(f"{tid.value} needs a well-specified problem")

    ne = n_eff(N)
    ks = k_star(lam, gamma0, ne)
    lower = tid in (TheoremId.BERNOULLI_LOWER, TheoremId.GAUSSIAN_LOWER,
                    TheoremId.SGD_LOWER_STRUCTURAL)
    if k is None:
        k = ks if lower else best_k(lam, gamma0, ne)
    d_eff = effective_dim(lam, gamma0, ne, k)
    sched = StepsizeSchedule.geometric(gamma0, N)
    halving = 1.0 if tid in (TheoremId.BERNOULLI_LOWER, TheoremId.SGD_LOWER_STRUCTURAL) else 0.5
    bias = bias_decay_norm(w0, problem.w_star, lam, sched, halving)
    diff = w0 - problem.w_star

    extras: Dict[str, float] = {}
    factors: Dict[str, float] = {}
    if tid is TheoremId.GAUSSIAN_UPPER:
        scale = hyper.alpha * _split_norm(diff, lam, k, ne, gamma0) + sig2
    elif tid is TheoremId.GAUSSIAN_LOWER:
        scale = hyper.beta * float(np.dot(lam[k:], diff[k:] ** 2)) + sig2
    elif tid is TheoremId.MISSPECIFIED_UPPER:
        w_star_h = float(np.dot(lam, problem.w_star ** 2))
        snr = hyper.alpha * (opt_proxy + w_star_h + _split_norm(diff, lam, k, ne, gamma0)) / sig2
        scale = (1.0 + snr) * sig2
        extras["OPT"] = float(opt_proxy)
        factors["SNR"] = snr
    else:
        scale = sig2
    return BoundReport(tid, ne, int(k), d_eff, bias, scale * d_eff / ne, extras, factors)


def predicted_rate(kind: str, N: int, r: Optional[float] = None) -> float:
    """Rate of the spectrum examples at N with unit constant (logs base 2)."""
    if N <= 100:
        warnings.warn(f"N={N} is below the N > 100 regime of the rates", stacklevel=2)
    L = math.log2(N)
    if kind == "power_law":
        if r is None or r <= 0:
            raise ValidationError("power_law needs r > 0")
        e = r / (1 + r)
        return N ** -e * L ** e
    if kind == "log_poly":
        if r is None or r <= 1:
            raise ValidationError("log_poly needs r > 1")
        return L ** -r
    if kind == "geometric":
        return L * L / N
    raise ValidationError(f"unknown spectrum kind {kind!r}")
