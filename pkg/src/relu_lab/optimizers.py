"""GLM-tron and SGD for single-ReLU regression.

``run_batch`` advances many independent runs in lockstep, one row of the
weight matrix per run; each row reads its own :class:`SampleStream`, so a
row's trajectory does not depend on which other rows share the batch.
``run_training`` is the single-run entry point on top of it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from relu_lab.data import FeatureSample, SampleBatch, SampleStream, SparseFeature
from relu_lab.model import (
    ProblemInstance,
    ScheduleKind,
    StepsizeSchedule,
    ValidationError,
    as_vector,
    default_phase_length,
)
from relu_lab.risk import excess_gap

DIVERGENCE_THRESHOLD = 1e12
CHUNK = 512
FULL_VECTOR_MAX_D = 8


class Algorithm(str, Enum):
    GLMTRON = "glmtron"
    SGD = "sgd"


class Averaging(str, Enum):
    NONE = "none"
    FULL = "full"
    TAIL = "tail"


class DivergedRunError(ArithmeticError):
    def __init__(self, step: int):
        super().__init__(f"iterate exceeded {DIVERGENCE_THRESHOLD:g} at step {step}")
        self.step = step


# -- single steps -------------------------------------------------------------

def glmtron_step(w, x: FeatureSample, y: float, gamma: float) -> np.ndarray:
    """w - gamma (relu(x.w) - y) x."""
    w = np.array(w, dtype=np.float64)
    pre = x.dot(w)
    g = max(pre, 0.0) - y
    if isinstance(x, SparseFeature):
        w[x.index] -= gamma * g * x.sign
    else:
        w -= gamma * g * x.coordinates
    return w


def sgd_step(w, x: FeatureSample, y: float, gamma: float) -> np.ndarray:
    """w - gamma (relu(x.w) - y) x 1[x.w > 0]."""
    w = np.array(w, dtype=np.float64)
    if x.dot(w) > 0:
        return glmtron_step(w, x, y, gamma)
    return w


# -- runs ---------------------------------------------------------------------

@dataclass(frozen=True)
class RunOptions:
    record_trajectory: bool = False
    trajectory_stride: int = 1
    average: Averaging = Averaging.NONE
    full_vectors: Optional[bool] = None  # default: only when d <= 8

    def __post_init__(self):
        object.__setattr__(self, "average", Averaging(self.average))
        if self.trajectory_stride < 1:
            raise ValidationError("trajectory_stride must be positive")


@dataclass
class TrajectoryPoint:
    t: int
    excess_risk: float
    h_dist_sq: float
    w: Optional[np.ndarray] = None


@dataclass
class RunResult:
    final_iterate: np.ndarray
    seed: int
    steps_taken: int
    averaged_iterate: Optional[np.ndarray] = None
    trajectory: Optional[List[TrajectoryPoint]] = None


@dataclass
class BatchResult:
    final: np.ndarray                       # (R, d)
    diverged: np.ndarray                    # (R,) bool
    diverged_step: np.ndarray               # (R,) int, -1 if not diverged
    averaged: Optional[np.ndarray] = None   # (R, d)
    trajectories: Optional[List[List[TrajectoryPoint]]] = None
    snapshots: Dict[int, np.ndarray] = field(default_factory=dict)
    seeds: Sequence[int] = field(default_factory=tuple)


def _multipliers(kind: ScheduleKind, horizon: int, phase_length: Optional[int]) -> np.ndarray:
    """mult[t-1] with gamma_t = gamma0 * mult[t-1]."""
    if kind is ScheduleKind.CONSTANT:
        return np.ones(horizon)
    k = phase_length if phase_length is not None else default_phase_length(horizon)
    t = np.arange(1, horizon + 1)
    return np.exp2(-(t // k).astype(np.float64))


def _concat(batches: List[SampleBatch]) -> SampleBatch:
    first = batches[0]
    if first.sparse:
        return SampleBatch(
            label=np.stack([b.label for b in batches]),
            clean_mean=np.stack([b.clean_mean for b in batches]),
            corrupted=np.stack([b.corrupted for b in batches]),
            index=np.stack([b.index for b in batches]),
            sign=np.stack([b.sign for b in batches]),
        )
    return SampleBatch(
        label=np.stack([b.label for b in batches]),
        clean_mean=np.stack([b.clean_mean for b in batches]),
        corrupted=np.stack([b.corrupted for b in batches]),
        x=np.stack([b.x for b in batches]),
    )


def run_batch(
    algo: Algorithm,
    problem: ProblemInstance,
    gamma0: Sequence[float] | float,
    horizon: int,
    seeds: Sequence[int],
    w0=None,
    *,
    schedule: ScheduleKind = ScheduleKind.GEOMETRIC,
    phase_length: Optional[int] = None,
    opts: RunOptions = RunOptions(),
    samples: Optional[Sequence[SampleBatch]] = None,
    w_stars=None,
    snapshots: Sequence[int] = (),
) -> BatchResult:
    """Run len(seeds) independent trainings in lockstep.

    Row r uses initial stepsize ``gamma0[r]`` and the stream seeded by
    ``seeds[r]``; ``samples`` replaces the streams with fixed sample
    sequences (one batch per row).  ``w_stars`` gives each row its own
    teacher vector; ``snapshots`` lists steps t at which to copy the weight
    matrix (t = 0 is the initial point).  Diverged rows are frozen at the step
    where ``|w|_inf`` first exceeds the threshold.
    """
    algo = Algorithm(algo)
    schedule = ScheduleKind(schedule)
    d = problem.d
    n_rows = len(samples) if samples is not None else len(seeds)
    g0 = np.broadcast_to(np.asarray(gamma0, dtype=np.float64), (n_rows,)).copy()
    if np.any(g0 <= 0):
        raise ValidationError("stepsizes must be positive")
    if w0 is None:
        w0 = np.zeros(d)
    w0 = np.asarray(w0, dtype=np.float64)
    W = np.array(np.broadcast_to(w0, (n_rows, d)), dtype=np.float64)
    if W.shape[1] != d:
        raise ValidationError("w0 has the wrong dimension")
    mult = _multipliers(schedule, horizon, phase_length)
    if w_stars is None:
        teachers = np.broadcast_to(problem.w_star, (n_rows, d))
    else:
        teachers = np.asarray(w_stars, dtype=np.float64)
        if teachers.shape != (n_rows, d):
            raise ValidationError("w_stars must have one row per run")
    snap_at = set(int(t) for t in snapshots)
    snaps: Dict[int, np.ndarray] = {}
    if 0 in snap_at:
        snaps[0] = W.copy()

    avg = opts.average
    avg_start = 0 if avg is Averaging.FULL else horizon // 2
    acc = np.zeros_like(W) if avg is not Averaging.NONE else None

    diverged = np.zeros(n_rows, dtype=bool)
    div_step = np.full(n_rows, -1, dtype=np.int64)
    live = np.ones(n_rows)  # zeroed for diverged rows
    rows = np.arange(n_rows)
    sgd = algo is Algorithm.SGD

    full_vec = opts.full_vectors if opts.full_vectors is not None else d <= FULL_VECTOR_MAX_D
    trajs: Optional[List[List[TrajectoryPoint]]] = None
    if opts.record_trajectory:
        trajs = [[] for _ in range(n_rows)]

    def record(t: int):
        ex = np.atleast_1d(excess_gap(problem, W, teachers))
        diff = W - teachers
        hd = (diff * diff) @ problem.eigenvalues
        for r in range(n_rows):
            trajs[r].append(TrajectoryPoint(t, float(ex[r]), float(hd[r]),
                                            W[r].copy() if full_vec else None))

    if trajs is not None:
        record(0)

    streams = None
    if samples is None:
        if w_stars is None:
            streams = [SampleStream(problem, s) for s in seeds]
        else:
            streams = [SampleStream(problem.with_w_star(v), s) for v, s in zip(teachers, seeds)]
    else:
        for b in samples:
            if len(b) < horizon:
                raise ValidationError("fixed sample sequence shorter than the horizon")

    t = 0
    while t < horizon:
        c = min(CHUNK, horizon - t)
        if streams is not None:
            chunk = _concat([s.take(c) for s in streams])
        else:
            chunk = _concat([_slice(b, t, t + c) for b in samples])
        for j in range(c):
            t += 1
            if acc is not None and t - 1 >= avg_start:
                acc += W
            gam = g0 * (mult[t - 1] * live)
            y = chunk.label[:, j]
            if chunk.sparse:
                idx = chunk.index[:, j]
                s = chunk.sign[:, j]
                wi = W[rows, idx]
                pre = s * wi
                g = np.maximum(pre, 0.0) - y
                if sgd:
                    g = g * (pre > 0)
                wi = wi - gam * g * s
                W[rows, idx] = wi
                bad = np.abs(wi) > DIVERGENCE_THRESHOLD
            else:
                x = chunk.x[:, j, :]
                pre = np.einsum("rd,rd->r", x, W)
                g = np.maximum(pre, 0.0) - y
                if sgd:
                    g = g * (pre > 0)
                W -= (gam * g)[:, None] * x
                bad = np.abs(W).max(axis=1) > DIVERGENCE_THRESHOLD
            bad |= ~np.isfinite(pre)
            if bad.any():
                new = bad & ~diverged
                if new.any():
                    diverged |= new
                    div_step[new] = t
                    live[new] = 0.0
            if trajs is not None and (t % opts.trajectory_stride == 0 or t == horizon):
                record(t)
            if t in snap_at:
                snaps[t] = W.copy()

    averaged = None
    if acc is not None:
        count = horizon - avg_start
        averaged = acc / count if count > 0 else W.copy()
    return BatchResult(final=W, diverged=diverged, diverged_step=div_step,
                       averaged=averaged, trajectories=trajs, snapshots=snaps,
                       seeds=tuple(seeds))


def _slice(b: SampleBatch, lo: int, hi: int) -> SampleBatch:
    return SampleBatch(
        label=b.label[lo:hi], clean_mean=b.clean_mean[lo:hi], corrupted=b.corrupted[lo:hi],
        index=None if b.index is None else b.index[lo:hi],
        sign=None if b.sign is None else b.sign[lo:hi],
        x=None if b.x is None else b.x[lo:hi],
    )


def run_training(
    algo: Algorithm,
    problem: ProblemInstance,
    sched: StepsizeSchedule,
    w0=None,
    seed: int = 0,
    opts: RunOptions = RunOptions(),
    samples: Optional[SampleBatch] = None,
) -> RunResult:
    """Train from ``w0`` on N = sched.horizon fresh samples and return w_N.

    Raises :class:`DivergedRunError` when the iterate blows up.
    """
    if w0 is None:
        w0 = np.zeros(problem.d)
    w0 = as_vector(w0, problem.d, "w0")
    if opts.average is not Averaging.NONE and sched.kind is not ScheduleKind.CONSTANT:
        warnings.warn("iterate averaging is normally paired with a constant stepsize",
                      stacklevel=2)
    res = run_batch(algo, problem, sched.gamma0, sched.horizon, [seed], w0,
                    schedule=sched.kind, phase_length=sched.phase_length, opts=opts,
                    samples=None if samples is None else [samples])
    if res.diverged[0]:
        raise DivergedRunError(int(res.diverged_step[0]))
    return RunResult(
        final_iterate=res.final[0],
        seed=seed,
        steps_taken=sched.horizon,
        averaged_iterate=None if res.averaged is None else res.averaged[0],
        trajectory=None if res.trajectories is None else res.trajectories[0],
    )
