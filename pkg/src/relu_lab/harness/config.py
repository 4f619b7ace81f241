"""Experiment configuration.

Config files are TOML with sections ``problem``, ``schedule``,
``experiment`` and ``output``.  Spectrum and noise keys use dotted names
(``spectrum.kind``, ``noise.sigma_sq``, ...) inside ``[problem]``; run
options live under ``run.*`` in ``[experiment]``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from relu_lab.data import derive_seed, make_rng
from relu_lab.model import (
    NoiseKind,
    NoiseModel,
    ProblemInstance,
    ScheduleKind,
    ValidationError,
    build_spectrum,
)
from relu_lab.optimizers import Algorithm, RunOptions

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_GAMMA_GRID = (0.5, 0.25, 0.1, 0.075, 0.05, 0.025, 0.01)


class ExperimentKind(str, Enum):
    FIGURE1_GRID = "figure1"
    TRAJECTORY_2D = "traj2d"
    COV_SANDWICH = "covcheck"
    SGD_FAILURE = "sgdfail"
    TRON_VS_SGD = "compare"
    RATE_SLOPE = "rateslope"
    MISSPECIFIED_PLATEAU = "misspec"
    SANDWICH = "sandwich"
    BOUNDS = "bounds"


# Stable integer codes for seed derivation; never renumber.
EXPERIMENT_CODES = {k: i for i, k in enumerate(ExperimentKind)}
ALGORITHM_CODES = {Algorithm.GLMTRON: 0, Algorithm.SGD: 1}


@dataclass(frozen=True)
class ProblemSpec:
    """Declarative problem description, resolved by :meth:`build`."""

    distribution: str = "bernoulli"
    spectrum_kind: str = "power_law"
    spectrum_r: Optional[float] = 1.0
    spectrum_d: Optional[int] = 16
    spectrum_normalize: bool = True
    spectrum_values: Optional[Sequence[float]] = None
    w_star: Union[str, Sequence[float]] = "inverse"
    w0: Union[str, Sequence[float]] = "zeros"
    w0_scale: float = 1.0
    noise_kind: str = "well_specified"
    sigma_sq: float = 0.01
    corruption_prob: float = 0.0
    corruption_value: float = 0.0

    def build(self) -> ProblemInstance:
        spec = build_spectrum(self.spectrum_kind, self.spectrum_d, r=self.spectrum_r,
                              values=self.spectrum_values,
                              normalize_trace=self.spectrum_normalize)
        w_star = _vector_rule(self.w_star, spec.d, None, 1.0)
        kind = NoiseKind(self.noise_kind)
        if kind is NoiseKind.NOISELESS:
            noise = NoiseModel.noiseless()
        elif kind is NoiseKind.WELL_SPECIFIED:
            noise = NoiseModel.well_specified(self.sigma_sq)
        else:
            noise = NoiseModel.misspecified(self.corruption_prob, self.corruption_value,
                                            self.sigma_sq)
        return ProblemInstance(self.distribution, spec, w_star, noise)

    def initial_point(self, problem: ProblemInstance, base_seed: int) -> np.ndarray:
        """w0 rule: zeros | w_star | gaussian | perturb | explicit list.

        (``gaussian_per_run`` is handled by :meth:`initial_points`.)

        ``gaussian`` draws N(0, w0_scale^2 / d) coordinates; ``perturb`` adds
        a random direction of squared length w0_scale * sigma^2 to w*.  Both
        are fixed per base seed and shared by every run of the experiment.
        """
        if self.w0 == "gaussian_per_run":
            raise ValidationError("gaussian_per_run initialisation has no single w0")
        return _vector_rule(self.w0, problem.d, problem, self.w0_scale, base_seed)

    def initial_points(self, problem: ProblemInstance, base_seed: int,
                       keys: Sequence[Sequence[int]]) -> np.ndarray:
        """One initial point per key tuple.

        ``gaussian_per_run`` draws N(0, w0_scale^2 / d) afresh for every key
        (the harness keys by instance, N and replicate, so both algorithms
        and every stepsize start from the same point); other rules repeat
        the shared w0.
        """
        d = problem.d
        if self.w0 != "gaussian_per_run":
            return np.tile(self.initial_point(problem, base_seed), (len(keys), 1))
        out = np.empty((len(keys), d))
        for i, k in enumerate(keys):
            rng = make_rng(derive_seed(base_seed, 0x1A1D, *k))
            out[i] = rng.standard_normal(d) * self.w0_scale / np.sqrt(d)
        return out


def _vector_rule(rule, d: int, problem: Optional[ProblemInstance], scale: float,
                 base_seed: int = 0) -> np.ndarray:
    if not isinstance(rule, str):
        v = np.asarray(rule, dtype=np.float64)
        if v.shape != (d,):
            raise ValidationError(f"vector has length {v.size}, expected {d}")
        return v
    if rule == "zeros":
        return np.zeros(d)
    if rule == "ones":
        return np.ones(d)
    if rule == "inverse":
        return 1.0 / np.arange(1, d + 1)
    if problem is None:
        raise ValidationError(f"unknown w_star rule {rule!r}")
    if rule == "w_star":
        return np.array(problem.w_star)
    rng = make_rng(derive_seed(base_seed, 0xC0FFEE))
    if rule == "gaussian":
        return rng.standard_normal(d) * scale / np.sqrt(d)
    if rule == "perturb":
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        return problem.w_star + np.sqrt(scale * problem.noise.sigma_sq) * u
    raise ValidationError(f"unknown w0 rule {rule!r}")


@dataclass
class ExperimentConfig:
    experiment: ExperimentKind
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    schedule_kind: ScheduleKind = ScheduleKind.GEOMETRIC
    gamma0: float = 0.25
    N: int = 1000
    K: Optional[int] = None
    algorithms: List[Algorithm] = field(default_factory=lambda: [Algorithm.GLMTRON, Algorithm.SGD])
    sample_sizes: List[int] = field(default_factory=list)
    gamma_grid: List[float] = field(default_factory=lambda: list(DEFAULT_GAMMA_GRID))
    gamma_grid_sgd: Optional[List[float]] = None
    replicates: int = 1
    base_seed: int = 0
    run: RunOptions = field(default_factory=RunOptions)
    checkpoints: List[int] = field(default_factory=list)
    trials: int = 100
    alpha: float = 3.0
    beta: float = 1.0
    mc_samples: int = 100_000
    comparison_constant: float = 3.0
    theorem: str = "BernoulliUpper"
    k: Optional[int] = None
    opt_proxy: Optional[float] = None
    instances: List[ProblemSpec] = field(default_factory=list)
    output_dir: Path = Path("results")
    threads: int = 1

    def __post_init__(self):
        self.experiment = ExperimentKind(self.experiment)
        self.schedule_kind = ScheduleKind(self.schedule_kind)
        self.algorithms = [Algorithm(a) for a in self.algorithms]
        if self.replicates < 1:
            raise ValidationError("replicates must be at least 1")
        if any(n < 0 for n in self.sample_sizes):
            raise ValidationError("sample sizes must be nonnegative")
        grids = self.gamma_grid + (self.gamma_grid_sgd or [])
        if any(g <= 0 for g in grids):
            raise ValidationError("stepsize grid values must be positive")
        if self.gamma0 <= 0:
            raise ValidationError("gamma0 must be positive")

    def seed_for(self, *keys: int) -> int:
        return derive_seed(self.base_seed, EXPERIMENT_CODES[self.experiment], *keys)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_PROBLEM_KEYS = {
    "distribution": "distribution",
    "spectrum.kind": "spectrum_kind",
    "spectrum.r": "spectrum_r",
    "spectrum.d": "spectrum_d",
    "spectrum.normalize": "spectrum_normalize",
    "spectrum.values": "spectrum_values",
    "w_star": "w_star",
    "w0": "w0",
    "w0_scale": "w0_scale",
    "noise.kind": "noise_kind",
    "noise.sigma_sq": "sigma_sq",
    "noise.corruption_prob": "corruption_prob",
    "noise.corruption_value": "corruption_value",
}


def _flatten(d: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def problem_from_dict(table: Dict[str, Any], base: Optional[ProblemSpec] = None) -> ProblemSpec:
    flat = _flatten(table)
    unknown = set(flat) - set(_PROBLEM_KEYS)
    if unknown:
        raise ValidationError(f"unknown problem keys: {sorted(unknown)}")
    kw = {_PROBLEM_KEYS[k]: v for k, v in flat.items()}
    if kw.get("spectrum_kind") == "explicit" and "spectrum_d" not in kw:
        kw["spectrum_d"] = None
    return replace(base or ProblemSpec(), **kw)


_EXPERIMENT_KEYS = {
    "kind": "experiment",
    "algo": "algorithms",
    "algorithms": "algorithms",
    "sample_sizes": "sample_sizes",
    "gamma_grid": "gamma_grid",
    "gamma_grid_sgd": "gamma_grid_sgd",
    "replicates": "replicates",
    "seed": "base_seed",
    "checkpoints": "checkpoints",
    "trials": "trials",
    "alpha": "alpha",
    "beta": "beta",
    "mc_samples": "mc_samples",
    "comparison_constant": "comparison_constant",
    "theorem": "theorem",
    "k": "k",
    "opt_proxy": "opt_proxy",
}


def config_from_dict(raw: Dict[str, Any], experiment: Optional[str] = None) -> ExperimentConfig:
    raw = dict(raw)
    kw: Dict[str, Any] = {}
    problem = problem_from_dict(raw.pop("problem", {}))
    kw["problem"] = problem

    sched = _flatten(raw.pop("schedule", {}))
    for key, name in (("kind", "schedule_kind"), ("gamma0", "gamma0"), ("N", "N"), ("K", "K")):
        if key in sched:
            kw[name] = sched.pop(key)
    if sched:
        raise ValidationError(f"unknown schedule keys: {sorted(sched)}")

    exp = dict(raw.pop("experiment", {}))
    instances = exp.pop("instances", [])
    kw["instances"] = [problem_from_dict(t, problem) for t in instances]
    flat = _flatten(exp)
    run_kw = {}
    for key in list(flat):
        if key.startswith("run."):
            run_kw[key[4:]] = flat.pop(key)
    if run_kw:
        unknown = set(run_kw) - {"record_trajectory", "trajectory_stride", "average"}
        if unknown:
            raise ValidationError(f"unknown run keys: {sorted(unknown)}")
        kw["run"] = RunOptions(**run_kw)
    for key, value in flat.items():
        if key not in _EXPERIMENT_KEYS:
            raise ValidationError(f"unknown experiment key {key!r}")
        name = _EXPERIMENT_KEYS[key]
        if name == "algorithms" and isinstance(value, str):
            value = [value]
        kw[name] = value

    out = _flatten(raw.pop("output", {}))
    if "dir" in out:
        kw["output_dir"] = Path(out.pop("dir"))
    if "threads" in out:
        kw["threads"] = int(out.pop("threads"))
    if out:
        raise ValidationError(f"unknown output keys: {sorted(out)}")
    if raw:
        raise ValidationError(f"unknown sections: {sorted(raw)}")
    if experiment is not None:
        if "experiment" in kw and ExperimentKind(kw["experiment"]) != ExperimentKind(experiment):
            raise ValidationError(
                f"config is for {kw['experiment']!r}, subcommand is {experiment!r}")
        kw["experiment"] = experiment
    if "experiment" not in kw:
        raise ValidationError("experiment.kind is missing")
    return ExperimentConfig(**kw)


def load_config(path: Union[str, Path], experiment: Optional[str] = None) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return config_from_dict(raw, experiment)
