"""Feature and label sampling.

Symmetric Bernoulli features are never materialised as d-vectors: a draw
is a (coordinate, sign) pair.  Coordinates are zero-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from relu_lab.model import Distribution, NoiseKind, ProblemInstance, ValidationError

_MASK64 = (1 << 64) - 1


def derive_seed(base_seed: int, *keys: int) -> int:
    """Mix a base seed with integer keys into a 64-bit seed.

    Uses numpy's SeedSequence hashing with ``keys`` as the spawn key, so
    distinct key tuples give statistically independent streams.
    """
    ss = np.random.SeedSequence(entropy=int(base_seed) & _MASK64,
                                spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))


def relu(z):
    return np.maximum(z, 0.0)


@dataclass(frozen=True)
class SparseFeature:
    """x = sign * e_index."""

    index: int
    sign: float

    def dot(self, w: np.ndarray) -> float:
        return self.sign * w[self.index]

    def to_dense(self, d: int) -> np.ndarray:
        x = np.zeros(d)
        x[self.index] = self.sign
        return x


@dataclass(frozen=True)
class DenseFeature:
    coordinates: np.ndarray

    def dot(self, w: np.ndarray) -> float:
        return float(np.dot(self.coordinates, w))

    def to_dense(self, d: int) -> np.ndarray:
        return self.coordinates


FeatureSample = Union[SparseFeature, DenseFeature]


@dataclass(frozen=True)
class LabeledExample:
    feature: FeatureSample
    label: float
    clean_mean: float
    corrupted: bool = False


@dataclass
class SampleBatch:
    """n labelled draws in array form.

    Bernoulli batches fill ``index``/``sign``; Gaussian batches fill ``x``.
    """

    label: np.ndarray
    clean_mean: np.ndarray
    corrupted: np.ndarray
    index: Optional[np.ndarray] = None
    sign: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.label.size)

    @property
    def sparse(self) -> bool:
        return self.index is not None

    def feature(self, t: int) -> FeatureSample:
        if self.sparse:
            return SparseFeature(int(self.index[t]), float(self.sign[t]))
        return DenseFeature(self.x[t])

    def example(self, t: int) -> LabeledExample:
        return LabeledExample(self.feature(t), float(self.label[t]),
                              float(self.clean_mean[t]), bool(self.corrupted[t]))

    @classmethod
    def from_sparse(cls, index, sign, label) -> "SampleBatch":
        """Batch from an explicit (index, sign, label) sequence; clean means unknown."""
        label = np.asarray(label, dtype=np.float64)
        return cls(label=label, clean_mean=np.full(label.size, np.nan),
                   corrupted=np.zeros(label.size, dtype=bool),
                   index=np.asarray(index, dtype=np.int64),
                   sign=np.asarray(sign, dtype=np.float64))


def _draw_features(problem: ProblemInstance, rng: np.random.Generator, n: int):
    lam = problem.eigenvalues
    if problem.distribution is Distribution.BERNOULLI:
        cdf = np.cumsum(lam)
        cdf /= cdf[-1]
        u = rng.random((n, 2))
        index = np.searchsorted(cdf, u[:, 0], side="right")
        np.minimum(index, lam.size - 1, out=index)
        sign = np.where(u[:, 1] < 0.5, -1.0, 1.0)
        pre = sign * problem.w_star[index]
        return dict(index=index, sign=sign), pre
    x = rng.standard_normal((n, lam.size)) * np.sqrt(lam)
    return dict(x=x), x @ problem.w_star


def _labels(problem: ProblemInstance, noise_rng: np.random.Generator,
            corrupt_rng: np.random.Generator, clean: np.ndarray):
    noise = problem.noise
    n = clean.size
    corrupted = np.zeros(n, dtype=bool)
    label = clean.copy()
    if noise.sigma_sq > 0:
        label += np.sqrt(noise.sigma_sq) * noise_rng.standard_normal(n)
    if noise.kind is NoiseKind.MISSPECIFIED and noise.corruption_prob > 0:
        corrupted = corrupt_rng.random(n) < noise.corruption_prob
        label[corrupted] = noise.corruption_value
    return label, corrupted


def draw_samples(problem: ProblemInstance, rng: np.random.Generator, n: int) -> SampleBatch:
    """Draw n i.i.d. labelled examples."""
    feats, pre = _draw_features(problem, rng, n)
    clean = relu(pre)
    label, corrupted = _labels(problem, rng, rng, clean)
    return SampleBatch(label=label, clean_mean=clean, corrupted=corrupted, **feats)


def sample_feature(problem: ProblemInstance, rng: np.random.Generator) -> FeatureSample:
    feats, _ = _draw_features(problem, rng, 1)
    if "index" in feats:
        return SparseFeature(int(feats["index"][0]), float(feats["sign"][0]))
    return DenseFeature(feats["x"][0])


def label_for(problem: ProblemInstance, x: FeatureSample, rng: np.random.Generator) -> LabeledExample:
    if isinstance(x, DenseFeature) and x.coordinates.size != problem.d:
        raise ValidationError("feature dimension does not match the problem")
    clean = np.array([max(x.dot(problem.w_star), 0.0)])
    label, corrupted = _labels(problem, rng, rng, clean)
    return LabeledExample(x, float(label[0]), float(clean[0]), bool(corrupted[0]))


class SampleStream:
    """Per-replicate sample source.

    Features, additive noise and corruption draws come from three child
    generators of ``seed``, so the values produced do not depend on how the
    stream is chunked by ``take``.
    """

    def __init__(self, problem: ProblemInstance, seed: int):
        self.problem = problem
        self.seed = int(seed)
        children = np.random.SeedSequence(self.seed & _MASK64).spawn(3)
        self._feat, self._noise, self._corrupt = (np.random.Generator(np.random.PCG64(c))
                                                  for c in children)

    def take(self, n: int) -> SampleBatch:
        feats, pre = _draw_features(self.problem, self._feat, n)
        clean = relu(pre)
        label, corrupted = _labels(self.problem, self._noise, self._corrupt, clean)
        return SampleBatch(label=label, clean_mean=clean, corrupted=corrupted, **feats)
