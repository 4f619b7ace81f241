from pathlib import Path

import numpy as np
import pytest

from relu_lab.model import NoiseModel, ProblemInstance, build_spectrum

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(label: str, ok: bool, detail: str, seconds: float):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail} ({seconds:.1f}s)")
    return record


def random_spectrum(rng, d, normalize=True):
    lam = np.sort(rng.uniform(0.01, 1.0, size=d))[::-1]
    return build_spectrum("explicit", values=lam, normalize_trace=normalize)


def bernoulli_problem(lam, w_star, sigma_sq=0.0):
    spec = build_spectrum("explicit", values=lam, normalize_trace=True)
    noise = NoiseModel.well_specified(sigma_sq) if sigma_sq > 0 else NoiseModel.noiseless()
    return ProblemInstance("bernoulli", spec, w_star, noise)


def gaussian_problem(lam, w_star, sigma_sq=0.0):
    spec = build_spectrum("explicit", values=lam)
    noise = NoiseModel.well_specified(sigma_sq) if sigma_sq > 0 else NoiseModel.noiseless()
    return ProblemInstance("gaussian", spec, w_star, noise)
