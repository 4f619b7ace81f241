import math

import numpy as np
import pytest

from relu_lab.bounds import (
    HypercontractivityParams,
    SaturationWarning,
    TheoremId,
    best_k,
    bias_decay_norm,
    effective_dim,
    k_star,
    n_eff,
    predicted_rate,
    theorem_bound,
)
from relu_lab.model import NoiseModel, ProblemInstance, StepsizeSchedule, ValidationError, build_spectrum

from conftest import bernoulli_problem, gaussian_problem


def test_n_eff():
    assert n_eff(1024) == pytest.approx(102.4)
    with pytest.raises(ValidationError):
        n_eff(1)
    with pytest.warns(UserWarning):
        n_eff(64)


def test_k_star_by_hand():
    lam = np.array([1.0, 0.1, 0.01, 0.001])
    # threshold 1/(gamma0 n_eff) = 1/(0.5 * 40) = 0.05
    assert k_star(lam, 0.5, 40.0) == 2
    assert k_star(lam, 0.5, 4.0) == 1     # threshold 0.5
    assert k_star(lam, 0.5, 400.0) == 3   # threshold 0.005
    assert k_star(lam, 1e-6, 10.0) == 0


def test_effective_dim_and_best_k():
    lam = np.array([1.0, 0.5, 0.1, 0.01])
    assert effective_dim(lam, 0.5, 10.0, 2) == pytest.approx(2 + 25 * (0.01 + 0.0001))
    brute = min(range(5), key=lambda k: effective_dim(lam, 0.5, 10.0, k))
    assert best_k(lam, 0.5, 10.0) == brute
    with pytest.raises(ValidationError):
        effective_dim(lam, 0.5, 10.0, 5)


def test_bias_decay_norm_explicit_product():
    lam = np.array([0.6, 0.4])
    diff = np.array([1.0, -2.0])
    sched = StepsizeSchedule.geometric(0.3, 50)
    for h in (0.5, 1.0):
        prod = np.ones(2)
        for g in sched.values():
            prod *= (1 - h * g * lam) ** 2
        ref = float(np.sum(lam * diff ** 2 * prod))
        assert bias_decay_norm(diff, np.zeros(2), lam, sched, h) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ValidationError):
        bias_decay_norm(diff, np.zeros(2), lam, sched, 0.7)


def test_bias_saturation_warns():
    with pytest.warns(SaturationWarning):
        v = bias_decay_norm([1.0], [0.0], [1.0], StepsizeSchedule.constant(3.0, 5), 1.0)
    assert v == 0.0


def test_theorem_bound_structure():
    p = bernoulli_problem(1.0 / np.arange(1, 33) ** 2, 1.0 / np.arange(1, 33), sigma_sq=0.01)
    rep = theorem_bound("BernoulliUpper", p, 0.25, 4096)
    assert rep.total == pytest.approx(rep.bias_term + rep.variance_term)
    assert rep.variance_term == pytest.approx(0.01 * rep.d_eff / rep.n_eff)
    low = theorem_bound("BernoulliLower", p, 0.25, 4096)
    assert low.k_star == k_star(p.eigenvalues, 0.25, low.n_eff)
    assert low.bias_term <= rep.bias_term
    js = rep.to_json_dict()
    assert set(js) == {"n_eff", "k_star", "d_eff", "bias", "variance", "extras", "total", "theorem"}


def test_theorem_ranges():
    p = bernoulli_problem([0.5, 0.5], [1.0, 1.0], sigma_sq=0.1)
    with pytest.raises(ValidationError):
        theorem_bound("BernoulliUpper", p, 0.5, 1000)
    theorem_bound(TheoremId.SGD_LOWER_STRUCTURAL, p, 0.9, 1000)
    g = gaussian_problem([1.0, 0.5], [1.0, 1.0], sigma_sq=0.1)
    with pytest.raises(ValidationError):
        theorem_bound("GaussianUpper", g, 1 / 18, 1000)  # needs < 1/(12 * 1.5)
    theorem_bound("GaussianUpper", g, 0.05, 1000)
    with pytest.raises(ValidationError):
        theorem_bound("BernoulliUpper", g, 0.1, 1000)


def test_misspecified_bound():
    spec = build_spectrum("explicit", values=[1.0, 0.5])
    p = ProblemInstance("gaussian", spec, [1.0, 1.0], NoiseModel.misspecified(0.1, 0.0, 0.2))
    with pytest.raises(ValidationError):
        theorem_bound("MisspecifiedUpper", p, 0.01, 1000)
    rep = theorem_bound("MisspecifiedUpper", p, 0.01, 1000, opt_proxy=0.3,
                        hyper=HypercontractivityParams(3.0, 1.0))
    assert rep.extra_terms["OPT"] == 0.3
    snr = rep.factors["SNR"]
    assert rep.variance_term == pytest.approx((1 + snr) * 0.2 * rep.d_eff / rep.n_eff)
    assert rep.total == pytest.approx(rep.bias_term + rep.variance_term + 0.3)
    with pytest.raises(ValidationError):
        theorem_bound("GaussianUpper", p, 0.01, 1000)


def test_hyper_params_validated():
    with pytest.raises(ValidationError):
        HypercontractivityParams(alpha=0.5)
    with pytest.raises(ValidationError):
        HypercontractivityParams(beta=0.0)


def test_predicted_rate():
    assert predicted_rate("power_law", 1024, 1.0) == pytest.approx(math.sqrt(10 / 1024))
    assert predicted_rate("geometric", 1024) == pytest.approx(100 / 1024)
    assert predicted_rate("log_poly", 1024, 2.0) == pytest.approx(0.01)
    with pytest.raises(ValidationError):
        predicted_rate("log_poly", 1024, 1.0)


def test_bias_decay_small_cases():
    sched = StepsizeSchedule.constant(0.5, 2)
    assert bias_decay_norm([1.0], [0.0], [1.0], sched, 0.5) == pytest.approx(0.31640625)
    lam = np.array([0.7, 0.3])
    assert bias_decay_norm([1.0, 2.0], [0.0, 0.0], lam, StepsizeSchedule.geometric(0.2, 0), 0.5) \
        == pytest.approx(0.7 + 0.3 * 4)
    assert bias_decay_norm([1.0, 2.0], [1.0, 2.0], lam, sched, 1.0) == 0.0


def test_bias_halving_ordering_and_variance_linearity():
    p = bernoulli_problem([0.5, 0.3, 0.2], [1.0, -1.0, 2.0], sigma_sq=0.1)
    sched = StepsizeSchedule.geometric(0.4, 500)
    up = bias_decay_norm(np.zeros(3), p.w_star, p.eigenvalues, sched, 0.5)
    lo = bias_decay_norm(np.zeros(3), p.w_star, p.eigenvalues, sched, 1.0)
    assert lo <= up
    a = theorem_bound("BernoulliUpper", p, 0.2, 500, sigma_sq=0.1).variance_term
    b = theorem_bound("BernoulliUpper", p, 0.2, 500, sigma_sq=0.3).variance_term
    assert b == pytest.approx(3 * a)
