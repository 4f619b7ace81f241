"""Problem model: spectra, noise models, problem instances and stepsize schedules.

The data covariance H is always diagonal, so it is carried around as its
spectrum only, and parameter vectors are coordinates in that eigenbasis
(plain 1-d float64 numpy arrays).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

TRACE_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class Distribution(str, Enum):
    BERNOULLI = "bernoulli"
    GAUSSIAN = "gaussian"


class NoiseKind(str, Enum):
    NOISELESS = "noiseless"
    WELL_SPECIFIED = "well_specified"
    MISSPECIFIED = "misspecified"


class ScheduleKind(str, Enum):
    GEOMETRIC = "geometric"
    CONSTANT = "constant"


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Spectrum:
    """Nonincreasing eigenvalues of the (diagonal) data covariance."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        lam = _frozen(self.eigenvalues)
        if lam.ndim != 1 or lam.size == 0:
            raise ValidationError("spectrum must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(lam)):
            raise ValidationError("spectrum entries must be finite")
        if np.any(lam < 0):
            raise ValidationError("spectrum entries must be nonnegative")
        if np.any(np.diff(lam) > 0):
            raise ValidationError("spectrum must be nonincreasing")
        if lam[0] <= 0:
            raise ValidationError("spectrum must have a positive leading eigenvalue")
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def d(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def trace(self) -> float:
        return float(self.eigenvalues.sum())

    def __len__(self) -> int:
        return self.d

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return np.array_equal(self.eigenvalues, other.eigenvalues)

    def __hash__(self):
        return hash(self.eigenvalues.tobytes())


def build_spectrum(
    kind: str,
    d: Optional[int] = None,
    *,
    r: Optional[float] = None,
    values: Optional[Sequence[float]] = None,
    normalize_trace: bool = False,
) -> Spectrum:
    """Build one of the standard spectra.

    ``power_law``: k^-(1+r); ``log_poly``: 1 / (k log^r(k+1)); ``geometric``:
    2^-k; ``explicit``: the given ``values``.  Indices k run from 1.
    """
    if kind == "explicit":
        if values is None:
            raise ValidationError("explicit spectrum needs values")
        lam = np.asarray(values, dtype=np.float64)
        if d is not None and d != lam.size:
            raise ValidationError(f"explicit spectrum has {lam.size} values, d={d}")
        if lam.size and not np.any(lam > 0):
            raise ValidationError("spectrum is identically zero")
    else:
        if d is None or d < 1:
            raise ValidationError("d must be a positive integer")
        k = np.arange(1, d + 1, dtype=np.float64)
        if kind == "power_law":
            if r is None or r <= 0:
                raise ValidationError("power_law needs r > 0")
            lam = k ** -(1.0 + r)
        elif kind == "log_poly":
            if r is None or r <= 1:
                raise ValidationError("log_poly needs r > 1")
            lam = 1.0 / (k * np.log(k + 1.0) ** r)
        elif kind == "geometric":
            lam = 2.0 ** -k
        else:
            raise ValidationError(f"unknown spectrum kind {kind!r}")
    if normalize_trace:
        lam = lam / lam.sum()
    return Spectrum(lam)


def as_vector(v, d: Optional[int] = None, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-d")
    if d is not None and arr.size != d:
        raise ValidationError(f"{name} has length {arr.size}, expected {d}")
    return arr


def h_quadratic_form(v, s: Union[Spectrum, np.ndarray]) -> float:
    """Return ||v||_H^2 = sum_i lambda_i v_i^2."""
    lam = s.eigenvalues if isinstance(s, Spectrum) else np.asarray(s, dtype=np.float64)
    v = as_vector(v, lam.size)
    return float(np.dot(lam, v * v))


@dataclass(frozen=True)
class NoiseModel:
    """Label noise.

    ``sigma_sq`` is the additive Gaussian noise variance.  For the
    misspecified model it is applied to the uncorrupted labels only and
    defaults to zero; a corrupted label is replaced by ``corruption_value``.
    """

    kind: NoiseKind = NoiseKind.NOISELESS
    sigma_sq: float = 0.0
    corruption_prob: float = 0.0
    corruption_value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.sigma_sq < 0:
            raise ValidationError("sigma_sq must be nonnegative")
        if self.kind is NoiseKind.NOISELESS and self.sigma_sq != 0:
            raise ValidationError("noiseless model requires sigma_sq = 0")
        if not 0.0 <= self.corruption_prob <= 1.0:
            raise ValidationError("corruption_prob must lie in [0, 1]")
        if self.kind is not NoiseKind.MISSPECIFIED and self.corruption_prob != 0:
            raise ValidationError("corruption_prob is only meaningful for misspecified noise")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(NoiseKind.NOISELESS)

    @classmethod
    def well_specified(cls, sigma_sq: float) -> "NoiseModel":
        return cls(NoiseKind.WELL_SPECIFIED, sigma_sq=sigma_sq)

    @classmethod
    def misspecified(cls, corruption_prob: float, corruption_value: float = 0.0,
                     sigma_sq: float = 0.0) -> "NoiseModel":
        return cls(NoiseKind.MISSPECIFIED, sigma_sq=sigma_sq,
                   corruption_prob=corruption_prob, corruption_value=corruption_value)

    @property
    def is_well_specified(self) -> bool:
        return self.kind is not NoiseKind.MISSPECIFIED


@dataclass(frozen=True)
class ProblemInstance:
    distribution: Distribution
    spectrum: Spectrum
    w_star: np.ndarray
    noise: NoiseModel = field(default_factory=NoiseModel.noiseless)

    def __post_init__(self):
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        w = _frozen(as_vector(self.w_star, self.spectrum.d, "w_star"))
        object.__setattr__(self, "w_star", w)
        if (self.distribution is Distribution.BERNOULLI
                and abs(self.spectrum.trace - 1.0) > TRACE_TOL):
            raise ValidationError(
                f"symmetric Bernoulli features need trace 1, got {self.spectrum.trace!r}")

    @property
    def d(self) -> int:
        return self.spectrum.d

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.spectrum.eigenvalues

    def with_w_star(self, w_star) -> "ProblemInstance":
        return ProblemInstance(self.distribution, self.spectrum, w_star, self.noise)

    def with_noise(self, noise: NoiseModel) -> "ProblemInstance":
        return ProblemInstance(self.distribution, self.spectrum, self.w_star, noise)


def default_phase_length(horizon: int) -> int:
    """K = max(1, floor(N / log2 N)); horizons below 2 use K = 1."""
    if horizon < 2:
        return 1
    return max(1, math.floor(horizon / math.log2(horizon)))


@dataclass(frozen=True)
class StepsizeSchedule:
    kind: ScheduleKind
    gamma0: float
    horizon: int
    phase_length: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not self.gamma0 > 0:
            raise ValidationError("gamma0 must be positive")
        if self.horizon < 0:
            raise ValidationError("horizon must be nonnegative")
        if self.kind is ScheduleKind.GEOMETRIC:
            k = self.phase_length if self.phase_length is not None else default_phase_length(self.horizon)
            if k < 1:
                raise ValidationError("phase length must be positive")
            object.__setattr__(self, "phase_length", int(k))

    @classmethod
    def geometric(cls, gamma0: float, horizon: int, phase_length: Optional[int] = None):
        return cls(ScheduleKind.GEOMETRIC, gamma0, horizon, phase_length)

    @classmethod
    def constant(cls, gamma0: float, horizon: int):
        return cls(ScheduleKind.CONSTANT, gamma0, horizon)

    def values(self) -> np.ndarray:
        """Stepsizes gamma_1..gamma_N as an array of length N."""
        t = np.arange(1, self.horizon + 1)
        if self.kind is ScheduleKind.CONSTANT:
            return np.full(self.horizon, self.gamma0)
        return self.gamma0 * np.exp2(-(t // self.phase_length).astype(np.float64))


def stepsize_at(sched: StepsizeSchedule, t: int) -> float:
    """Stepsize applied at step t (1 <= t <= N)."""
    if not 1 <= t <= sched.horizon:
        raise ValidationError(f"t={t} outside 1..{sched.horizon}")
    if sched.kind is ScheduleKind.CONSTANT:
        return float(sched.gamma0)
    return float(sched.gamma0 * 2.0 ** -(t // sched.phase_length))
