"""Exact and Monte-Carlo risk evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from relu_lab.data import draw_samples, relu
from relu_lab.model import (
    Distribution,
    NoiseKind,
    ProblemInstance,
    ValidationError,
    as_vector,
)

RHO_TOL = 1e-12


class UnsupportedSetting(ValidationError):
    """The requested quantity is undefined for this noise model."""


class RiskMethod(str, Enum):
    EXACT_BERNOULLI = "exact_bernoulli"
    EXACT_GAUSSIAN = "exact_gaussian"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class RiskReport:
    risk: float
    excess_risk: float
    h_dist_sq: float = float("nan")
    sandwich_lower: float = float("nan")
    sandwich_holds: Optional[bool] = None
    method: RiskMethod = RiskMethod.MONTE_CARLO
    stderr: Optional[float] = None
    excess_stderr: Optional[float] = None


def _bernoulli_gap(lam, w, v) -> np.ndarray:
    """Per-row E(relu(x.w) - relu(x.v))^2 over the 2d Bernoulli atoms."""
    pos = relu(w) - relu(v)
    neg = relu(-w) - relu(-v)
    return 0.5 * ((pos * pos + neg * neg) @ lam)


def _gaussian_gap(lam, w, v) -> np.ndarray:
    a2 = (w * w) @ lam
    b2 = (v * v) @ lam
    c = (w * v) @ lam
    ab = np.sqrt(a2 * b2)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(ab > 0, c / np.where(ab > 0, ab, 1.0), 0.0)
    if np.any(np.abs(rho) > 1 + RHO_TOL):
        raise ArithmeticError(f"correlation outside [-1, 1]: {rho}")
    rho = np.clip(rho, -1.0, 1.0)
    cross = ab * (np.sqrt(1 - rho * rho) + (math.pi - np.arccos(rho)) * rho) / math.pi
    return np.maximum(0.5 * a2 + 0.5 * b2 - cross, 0.0)


def excess_gap(problem: ProblemInstance, w, v=None) -> np.ndarray | float:
    """E(relu(x.w) - relu(x.v))^2 under the feature law; v defaults to w*.

    ``w`` may be a single vector or a stack of row vectors.
    """
    v = problem.w_star if v is None else np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != problem.d or v.shape[-1] != problem.d:
        raise ValidationError("dimension mismatch")
    lam = problem.eigenvalues
    if problem.distribution is Distribution.BERNOULLI:
        out = _bernoulli_gap(lam, w, v)
    else:
        out = _gaussian_gap(lam, w, v)
    return float(out) if np.ndim(out) == 0 else out


def excess_risk_exact(problem: ProblemInstance, w) -> float | np.ndarray:
    """Excess risk R(w) - R(w*) of a well-specified problem, in closed form.

    Bernoulli features: exact expectation over the 2d atoms.  Gaussian
    features: the arc-cosine identity
    E relu(u) relu(v) = ab (sqrt(1 - rho^2) + (pi - arccos rho) rho) / (2 pi).
    """
    return excess_gap(problem, w)


def risk_exact(problem: ProblemInstance, w) -> float | np.ndarray:
    """Population risk; misspecified problems use the corruption mixture."""
    noise = problem.noise
    gap = excess_gap(problem, w)
    if noise.kind is not NoiseKind.MISSPECIFIED:
        return gap + noise.sigma_sq
    eta = noise.corruption_prob
    return (1 - eta) * (gap + noise.sigma_sq) + eta * _second_moment_about(
        problem, np.asarray(w, dtype=np.float64), noise.corruption_value)


def _second_moment_about(problem: ProblemInstance, w: np.ndarray, c: float):
    """E(relu(x.w) - c)^2."""
    lam = problem.eigenvalues
    if problem.distribution is Distribution.BERNOULLI:
        pos = relu(w) - c
        neg = relu(-w) - c
        return 0.5 * ((pos * pos + neg * neg) @ lam)
    a2 = (w * w) @ lam
    return 0.5 * a2 - 2 * c * np.sqrt(a2 / (2 * math.pi)) + c * c


def opt_proxy_semi_analytic(problem: ProblemInstance) -> float:
    """Risk at w* under the corruption mixture.

    eta E(relu(x.w*) - c)^2 + (1 - eta) sigma^2, which for c = 0 is
    eta E relu(x.w*)^2 + (1 - eta) sigma^2.
    """
    noise = problem.noise
    if noise.kind is not NoiseKind.MISSPECIFIED:
        return noise.sigma_sq
    eta = noise.corruption_prob
    m = _second_moment_about(problem, problem.w_star, noise.corruption_value)
    return float(eta * m + (1 - eta) * noise.sigma_sq)


def _exact_method(problem: ProblemInstance) -> RiskMethod:
    if problem.distribution is Distribution.BERNOULLI:
        return RiskMethod.EXACT_BERNOULLI
    return RiskMethod.EXACT_GAUSSIAN


def risk_monte_carlo(problem: ProblemInstance, w, n_samples: int, rng,
                     chunk: int = 1 << 16) -> RiskReport:
    """Sample-mean risk with standard error.

    The excess-risk estimate is the mean of the per-sample loss difference
    against w* on the same draws (common random numbers).  ``rng`` is a
    numpy Generator or an integer seed.
    """
    if n_samples < 2:
        raise ValidationError("n_samples must be at least 2")
    w = as_vector(w, problem.d, "w")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    s1 = s2 = d1 = d2 = 0.0
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        batch = draw_samples(problem, rng, n)
        if batch.sparse:
            pred = relu(batch.sign * w[batch.index])
        else:
            pred = relu(batch.x @ w)
        loss = (pred - batch.label) ** 2
        diff = loss - (batch.clean_mean - batch.label) ** 2
        s1 += loss.sum()
        s2 += (loss * loss).sum()
        d1 += diff.sum()
        d2 += (diff * diff).sum()
        done += n
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean * mean, 0.0) * n_samples / (n_samples - 1)
    dmean = d1 / n_samples
    dvar = max(d2 / n_samples - dmean * dmean, 0.0) * n_samples / (n_samples - 1)
    return RiskReport(
        risk=float(mean),
        excess_risk=float(dmean),
        method=RiskMethod.MONTE_CARLO,
        stderr=float(math.sqrt(var / n_samples)),
        excess_stderr=float(math.sqrt(dvar / n_samples)),
    )


def landscape_report(problem: ProblemInstance, w) -> RiskReport:
    """Check 0.25 ||w - w*||_H^2 <= excess risk <= ||w - w*||_H^2."""
    if problem.noise.kind is NoiseKind.MISSPECIFIED:
        raise UnsupportedSetting("excess-risk landscape needs a well-specified problem")
    w = as_vector(w, problem.d, "w")
    diff = w - problem.w_star
    h_dist_sq = float(np.dot(problem.eigenvalues, diff * diff))
    excess = float(excess_risk_exact(problem, w))
    lower = 0.25 * h_dist_sq
    tol = 1e-10 * max(1.0, h_dist_sq)
    holds = (lower - tol <= excess <= h_dist_sq + tol)
    return RiskReport(
        risk=excess + problem.noise.sigma_sq,
        excess_risk=excess,
        h_dist_sq=h_dist_sq,
        sandwich_lower=lower,
        sandwich_holds=bool(holds),
        method=_exact_method(problem),
    )


def fourth_moment_diag_apply(problem: ProblemInstance, diag_a) -> np.ndarray:
    """Diagonal of E[(x^T A x) x x^T] for diagonal PSD A.

    Bernoulli: H diag(A).  Gaussian: 2 H^2 diag(A) + tr(H A) H.
    """
    lam = problem.eigenvalues
    a = as_vector(diag_a, problem.d, "diag_a")
    if np.any(a < 0):
        raise ValidationError("diag_a must be nonnegative")
    if problem.distribution is Distribution.BERNOULLI:
        return lam * a
    return 2.0 * lam * lam * a + float(np.dot(lam, a)) * lam

