import math

import numpy as np
import pytest

from relu_lab.data import make_rng
from relu_lab.model import NoiseModel, ProblemInstance, ValidationError, build_spectrum
from relu_lab.risk import (
    RiskMethod,
    UnsupportedSetting,
    excess_gap,
    excess_risk_exact,
    fourth_moment_diag_apply,
    landscape_report,
    opt_proxy_semi_analytic,
    risk_exact,
    risk_monte_carlo,
)

from conftest import bernoulli_problem, gaussian_problem
from oracles import bernoulli_enumerated_gap, gaussian_mc_gap


def test_bernoulli_matches_enumeration():
    rng = make_rng(0)
    for _ in range(50):
        d = int(rng.integers(1, 8))
        lam = np.sort(rng.uniform(0.05, 1, d))[::-1]
        p = bernoulli_problem(lam, rng.standard_normal(d))
        w = rng.standard_normal(d)
        ref = bernoulli_enumerated_gap(p.eigenvalues, w, p.w_star)
        assert excess_risk_exact(p, w) == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_gaussian_matches_monte_carlo():
    rng = make_rng(1)
    lam = np.array([1.0, 0.4, 0.1])
    p = gaussian_problem(lam, [1.0, -0.5, 0.3])
    w = np.array([0.2, 0.7, -1.0])
    mean, se = gaussian_mc_gap(lam, w, p.w_star, 400_000, rng)
    assert abs(excess_risk_exact(p, w) - mean) < 4 * se


def test_gaussian_scale_identity():
    # colinear teacher and student: Delta(c w*) = (c - 1)^2 ||w*||_H^2 / 2 for c >= 0
    p = gaussian_problem([1.0, 0.3], [0.7, -1.2])
    h = float(np.dot(p.eigenvalues, p.w_star ** 2))
    for c in (0.0, 0.5, 1.0, 2.5):
        assert excess_risk_exact(p, c * p.w_star) == pytest.approx((c - 1) ** 2 * h / 2, abs=1e-14)


def test_gaussian_antipodal_hits_lower_constant():
    p = gaussian_problem([1.0, 0.3], [0.7, -1.2])
    rep = landscape_report(p, -p.w_star)
    assert rep.excess_risk == pytest.approx(rep.sandwich_lower, rel=1e-12)
    assert rep.sandwich_holds


def test_zero_at_teacher_and_row_vectorisation():
    p = bernoulli_problem([0.5, 0.5], [1.0, -1.0])
    assert excess_risk_exact(p, p.w_star) == 0.0
    W = np.array([[0.0, 0.0], [1.0, -1.0], [2.0, 2.0]])
    got = excess_gap(p, W)
    assert got.shape == (3,)
    for row, g in zip(W, got):
        assert g == pytest.approx(excess_risk_exact(p, row))


def test_failure_floor_value():
    # a student stuck at 0 on the negative coordinate pays lambda_i w*_i^2 / 2
    p = bernoulli_problem([0.8, 0.2], [1.0, -1.0])
    assert excess_risk_exact(p, np.array([1.0, 0.0])) == pytest.approx(0.1)
    assert excess_risk_exact(p, np.zeros(2)) == pytest.approx(0.5)


def test_risk_adds_noise():
    p = gaussian_problem([1.0], [1.0], sigma_sq=0.3)
    assert risk_exact(p, [0.5]) == pytest.approx(excess_risk_exact(p, [0.5]) + 0.3)


def test_monte_carlo_agrees_with_exact():
    p = bernoulli_problem([0.5, 0.3, 0.2], [1.0, -1.0, 0.5], sigma_sq=0.2)
    w = np.array([0.3, 0.2, -0.1])
    mc = risk_monte_carlo(p, w, 400_000, 3)
    assert mc.method is RiskMethod.MONTE_CARLO
    assert abs(mc.risk - risk_exact(p, w)) < 4 * mc.stderr
    assert abs(mc.excess_risk - excess_risk_exact(p, w)) < 4 * mc.excess_stderr
    with pytest.raises(ValidationError):
        risk_monte_carlo(p, w, 1, 0)


def test_misspecified_risk_and_proxy():
    spec = build_spectrum("explicit", values=[1.0, 0.5])
    p = ProblemInstance("gaussian", spec, [1.0, -1.0], NoiseModel.misspecified(0.1, 0.0, 0.05))
    # E relu(z)^2 = a^2 / 2 for z ~ N(0, a^2)
    a2 = 1.0 + 0.5
    expected = 0.1 * a2 / 2 + 0.9 * 0.05
    assert opt_proxy_semi_analytic(p) == pytest.approx(expected)
    assert risk_exact(p, p.w_star) == pytest.approx(expected)
    mc = risk_monte_carlo(p, p.w_star, 400_000, 9)
    assert abs(mc.risk - expected) < 4 * mc.stderr
    w = np.array([0.5, 0.1])
    mc = risk_monte_carlo(p, w, 400_000, 10)
    assert abs(mc.risk - risk_exact(p, w)) < 4 * mc.stderr


def test_misspecified_nonzero_corruption_value():
    spec = build_spectrum("explicit", values=[1.0])
    p = ProblemInstance("gaussian", spec, [1.0], NoiseModel.misspecified(0.3, 2.0))
    # E(relu(z) - 2)^2 = 1/2 - 4 E relu(z) + 4 with E relu(z) = 1/sqrt(2 pi)
    m = 0.5 - 4 / math.sqrt(2 * math.pi) + 4
    assert opt_proxy_semi_analytic(p) == pytest.approx(0.3 * m)


def test_landscape_rejects_misspecified():
    spec = build_spectrum("explicit", values=[1.0])
    p = ProblemInstance("gaussian", spec, [1.0], NoiseModel.misspecified(0.1))
    with pytest.raises(UnsupportedSetting):
        landscape_report(p, [0.0])


def test_fourth_moment_bernoulli_exact():
    lam = np.array([0.5, 0.3, 0.2])
    p = bernoulli_problem(lam, np.zeros(3))
    a = np.array([2.0, 1.0, 3.0])
    # x = +-e_i: (x^T A x) x_j^2 = a_i [i == j]
    ref = np.array([sum(lam[i] * a[i] * (i == j) for i in range(3)) for j in range(3)])
    np.testing.assert_allclose(fourth_moment_diag_apply(p, a), ref)


def test_fourth_moment_gaussian_mc():
    lam = np.array([1.0, 0.5])
    p = gaussian_problem(lam, np.zeros(2))
    a = np.array([1.0, 2.0])
    x = make_rng(4).standard_normal((1_000_000, 2)) * np.sqrt(lam)
    q = (x * x) @ a
    mc = (q[:, None] * x * x).mean(axis=0)
    np.testing.assert_allclose(fourth_moment_diag_apply(p, a), mc, rtol=0.02)
    with pytest.raises(ValidationError):
        fourth_moment_diag_apply(p, [-1.0, 0.0])
