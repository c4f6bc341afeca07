import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from possic.core import Gamma, Indicator, Normal, StudentT
from possic.inference import (
    NormalGammaState,
    TestReport,
    bvm_approximation,
    credibility_test,
    credible_interval,
    fisher_information,
    gamma_marginal,
    identifiability_probe,
    indicator_model,
    loss_model,
    map_asymptotic_law,
    map_estimate,
    marginal_likelihood,
    mle,
    normal_cubic,
    normal_gamma_update,
    normal_location,
    observed_information,
    posterior,
    ratio_posterior,
    score_variance,
    student_marginal,
    tempered,
    test_threshold,
)
from possic.transform import pushforward

FLAT = Indicator((-math.inf, math.inf))


def _sup_gap(pf, ref, lo, hi, n=2001):
    x = np.linspace(lo, hi, n)
    return float(np.max(np.abs(np.asarray(pf(x)) - np.asarray(ref(x)))))


# -- posterior --------------------------------------------------------------


def test_single_observation_flat_prior():
    post = posterior(FLAT, normal_location(1.0), [0.0])
    assert _sup_gap(post, Normal(0, 1), -6, 6) <= 1e-12


def test_flat_prior_gives_sample_mean_normal():
    ys = np.array([0.3, -1.2, 2.5, 0.7, 1.1])
    post = posterior(FLAT, normal_location(2.0), ys)
    ref = Normal(ys.mean(), 2.0 / ys.size)
    assert _sup_gap(post, ref, ys.mean() - 5, ys.mean() + 5) <= 1e-12


def test_normal_prior_conjugate_oracle():
    ys = np.array([1.0, 2.0, 0.5])
    mu0, s0, s2 = -1.0, 0.5, 2.0
    post = posterior(Normal(mu0, s0), normal_location(s2), ys)
    prec = 1 / s0 + ys.size / s2
    ref = Normal((mu0 / s0 + ys.sum() / s2) / prec, 1 / prec)
    assert _sup_gap(post, ref, -4, 4) <= 1e-10


def test_posterior_rejects_empty_and_nan():
    with pytest.raises(ValueError):
        posterior(FLAT, normal_location(), [])
    with pytest.raises(ValueError):
        posterior(FLAT, normal_location(), [float("nan")])


def test_point_prior_posterior():
    post = posterior(Indicator(0.5), normal_location(), [3.0, 4.0])
    assert post.mode().value == 0.5


# -- marginal likelihood ----------------------------------------------------


def test_marginal_likelihood_examples():
    assert marginal_likelihood(Normal(0, 1), indicator_model((-10, 10)), [1.0, 2.0]) == 1.0
    assert marginal_likelihood(FLAT, normal_location(), [0.4, 1.7]) == pytest.approx(
        math.exp(-(0.65**2)), rel=1e-9)  # the sup over theta of the joint likelihood of two points
    assert marginal_likelihood(FLAT, normal_location(), [0.4]) == pytest.approx(1.0)
    assert marginal_likelihood(Indicator(0.0), normal_location(1.0), [2.0]) == pytest.approx(math.exp(-2))


def test_marginal_likelihood_in_unit_interval():
    v = marginal_likelihood(Normal(5, 0.1), normal_location(), [-3.0, -2.0])
    assert 0.0 <= v < 1e-10


# -- MAP and credible intervals ---------------------------------------------


def test_map_examples():
    assert map_estimate(Normal(2.5, 0.1)).value == 2.5
    ys = np.array([0.2, 0.9, 1.3, -0.4])
    post = posterior(FLAT, normal_location(), ys)
    assert map_estimate(post).value == pytest.approx(ys.mean(), abs=1e-9)
    assert mle(normal_location(), ys) == pytest.approx(ys.mean(), abs=1e-9)


def test_map_equivariance_under_monotone_map():
    post = Normal(0.4, 0.3)
    img = pushforward(post, np.exp, (1e-3, 30), inverse=np.log)
    assert map_estimate(img).value == pytest.approx(math.exp(0.4))


def test_credible_interval_normal():
    m, s = 1.5, 0.7
    ci = credible_interval(Normal(m, s * s), 0.05)
    half = s * math.sqrt(-2 * math.log(0.05))
    assert half / s == pytest.approx(2.4477, abs=1e-4)
    assert ci.lower == pytest.approx(m - half, abs=1e-9)
    assert ci.upper == pytest.approx(m + half, abs=1e-9)


def test_credible_interval_shrinks_near_one():
    ci = credible_interval(Normal(1, 1), 1 - 1e-12)
    assert ci.upper - ci.lower <= 1e-5


def test_credible_interval_indicator():
    ci = credible_interval(Indicator((0, 1)), 0.3)
    assert (ci.lower, ci.upper) == (0.0, 1.0)
    assert ci.lower_at_edge and ci.upper_at_edge


# -- information ------------------------------------------------------------


def test_observed_information_normal():
    ys = np.arange(7.0)
    assert observed_information(normal_location(2.0), ys, ys.mean()) == pytest.approx(3.5)
    assert observed_information(normal_location(1.0), [0.3], 0.3) == pytest.approx(1.0)


def test_observed_information_finite_difference():
    from possic.inference import LikelihoodModel

    m = normal_location(1.5)
    numeric = LikelihoodModel(logpdf=m.logpdf, conditional=m.conditional)  # derivatives by differences
    ys = np.array([0.1, 0.5, 1.9])
    assert observed_information(numeric, ys, ys.mean()) == pytest.approx(2.0, rel=1e-6)


def test_fisher_information_examples():
    for t in (-2.0, 0.0, 3.0):
        assert fisher_information(normal_location(0.5), t) == pytest.approx(2.0)
    assert fisher_information(normal_cubic(1.0), 0.0) == 0.0
    assert fisher_information(normal_cubic(1.0), 2.0) == pytest.approx(144.0)


def test_fisher_information_tempered():
    base = normal_location(0.5)
    assert fisher_information(tempered(base, 3.0), 1.0) == pytest.approx(3 * fisher_information(base, 1.0))


def test_identifiability():
    assert identifiability_probe(normal_location(), np.linspace(-3, 3, 13))
    assert not identifiability_probe(indicator_model((-1, 1)), np.linspace(-3, 3, 13))


# -- Bernstein-von Mises ----------------------------------------------------


def test_bvm_exact_for_normal_location():
    rng = np.random.default_rng(3)
    for n in (1, 10, 100):
        ys = 0.7 + rng.normal(size=n)
        bvm = bvm_approximation(normal_location(1.0), ys, theta0=0.7)
        post = posterior(FLAT, normal_location(1.0), ys)
        assert _sup_gap(bvm, post, ys.mean() - 4, ys.mean() + 4) <= 1e-12


def test_bvm_zero_score():
    ys = np.full(5, 1.25)
    bvm = bvm_approximation(normal_location(2.0), ys, theta0=1.25)
    assert bvm == Normal(1.25, 0.4)


def test_bvm_gap_shrinks_for_non_normal_model():
    # strictly convex, smooth, non-quadratic loss in theta - y
    loss = lambda t, y: (t - y) ** 2 / 2 + (t - y) ** 4 / 12  # noqa: E731
    model = loss_model(loss, y_mode=lambda t: t,
                       d_theta=lambda t, y: (t - y) + (t - y) ** 3 / 3,
                       d2_theta=lambda t, y: 1 + (t - y) ** 2)
    rng = np.random.default_rng(11)
    data = rng.normal(size=256) * 0.5
    gaps = []
    for n in (8, 32, 128):
        ys = data[:n]
        post = posterior(FLAT, model, ys)
        bvm = bvm_approximation(model, ys, theta0=0.0)
        c = bvm.mode().value
        s = math.sqrt(bvm.variance().value)
        gaps.append(_sup_gap(post, bvm, c - 6 * s, c + 6 * s))
    assert gaps[0] > gaps[1] > gaps[2]


# -- asymptotic laws and tests ---------------------------------------------


def test_map_asymptotic_law_location():
    assert map_asymptotic_law(normal_location(2.0), 0.3) == Normal(0, 2.0)
    assert score_variance(normal_location(2.0), 0.0).value == pytest.approx(0.5)


def test_map_asymptotic_law_loss_model():
    # L(theta, y) = a (theta - y)^2 / 2 + b theta^2 / 2; at y = theta
    # the variance is (dydtheta L / dtheta2 L)^2 / dy2 L
    a, b = 2.0, 1.0
    loss = lambda t, y: a * (t - y) ** 2 / 2 + b * (t * t) / 2  # noqa: E731
    model = loss_model(loss, y_mode=lambda t: t,
                       d_theta=lambda t, y: a * (t - y) + b * t,
                       d2_theta=lambda t, y: a + b + 0.0 * t,
                       d_y_d_theta=lambda t, y: -a + 0.0 * t,
                       d2_y=lambda t, y: a + 0.0 * t)
    law = map_asymptotic_law(model, 0.0)
    assert law.variance().value == pytest.approx((a / (a + b)) ** 2 / a, rel=1e-6)


def test_threshold_values():
    assert test_threshold(0.05, 1.0) == pytest.approx(math.sqrt(0.05), abs=1e-15)
    assert test_threshold(0.05, 1.0) == pytest.approx(0.22360, abs=1e-5)


def test_credibility_test_calibration():
    ys = np.array([-1.0, 0.5, 0.5])  # mean exactly 0
    rep = credibility_test(FLAT, normal_location(1.0), ys, 0.0, 0.05)
    assert isinstance(rep, TestReport)
    assert rep.beta_limit == pytest.approx(1.0, abs=1e-10)
    assert rep.threshold == pytest.approx(math.sqrt(0.05), abs=1e-10)
    assert rep.lam == 1.0 and rep.reject is False
    assert rep.to_dict()["lambda"] == 1.0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=20), st.floats(-2, 2), st.floats(0.3, 3))
def test_log_lambda_identity(ys, theta0, s2):
    ys = np.array(ys)
    rep = credibility_test(FLAT, normal_location(s2), ys, theta0, 0.05)
    expected = ys.size * (ys.mean() - theta0) ** 2 / s2
    assert -2 * math.log(rep.lam) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_credibility_test_rejects_far_hypothesis():
    rep = credibility_test(FLAT, normal_location(1.0), np.full(20, 2.0), 0.0, 0.05)
    assert rep.reject


# -- normal-gamma model -----------------------------------------------------


def test_normal_gamma_update_example():
    s = normal_gamma_update(NormalGammaState(), [1.0, 3.0])
    assert s.as_tuple() == (2.0, 2.0, 1.0, 1.0)
    g = gamma_marginal(s)
    assert g.mode().value == 1.0
    vhat = np.var([1.0, 3.0])
    assert g.mode().value == 1 / vhat


def test_normal_gamma_update_with_prior_mean_data():
    s0 = NormalGammaState(k=3, mu=1.5, alpha=2, beta=1)
    s = normal_gamma_update(s0, [1.5, 1.5])
    assert s.mu == 1.5
    assert s.beta == 1.0


def test_sequential_equals_batch():
    s0 = NormalGammaState(k=1, mu=0.2, alpha=1, beta=0.5)
    ys = np.array([0.3, 1.4, -0.2, 0.9])
    batch = normal_gamma_update(s0, ys)
    seq = s0
    for y in ys:
        seq = normal_gamma_update(seq, [y])
    np.testing.assert_allclose(seq.as_tuple(), batch.as_tuple(), rtol=1e-12)


def test_inverse_precision_mode_is_vhat():
    from possic.transform import reciprocal_pushforward

    ys = np.array([0.5, 2.0, 4.5, 1.0])
    s = normal_gamma_update(NormalGammaState(), ys)
    assert reciprocal_pushforward(gamma_marginal(s)).mode().value == pytest.approx(np.var(ys), rel=1e-14)


def test_student_marginal_example():
    s = normal_gamma_update(NormalGammaState(), [1.0, 3.0])
    t = student_marginal(s)
    assert t == StudentT(2, 2, 0.5)
    assert t.mode().value == 2.0
    assert t.variance().value == 0.5


def test_student_marginal_vs_grid_sup():
    s = NormalGammaState(k=3, mu=0.4, alpha=2.5, beta=1.7)
    t = student_marginal(s)
    taus = np.linspace(1e-4, 40, 20001)
    g = Gamma(s.alpha, s.beta)(taus)
    mus = np.linspace(-4, 4, 161)
    joint = g[None, :] * np.exp(-s.k * taus[None, :] * (mus[:, None] - s.mu) ** 2 / 2)
    assert np.max(np.abs(joint.max(axis=1) - t(mus))) <= 1e-3


def test_student_marginal_degenerate():
    with pytest.raises(ValueError):
        student_marginal(NormalGammaState())


# -- ratio of means ---------------------------------------------------------


def test_ratio_of_points():
    out = ratio_posterior(Indicator(2.0), Indicator(4.0), np.linspace(-2, 2, 81))
    assert out(0.5) == 1.0
    assert np.count_nonzero(out.values) == 1
    assert out.mode().value == 0.5


def test_ratio_mode_and_tails():
    a, b = StudentT(9, 1.1, 0.1), StudentT(9, 0.02, 0.0011)
    r = np.union1d(np.linspace(-500, 500, 2001), [-1e4, 1e4])
    out = ratio_posterior(a, b, r)
    assert out.mode().value == pytest.approx(1.1 / 0.02, rel=1e-12)
    # as |r| grows the sup is attained with mu' -> 0
    for R in (-1e4, 1e4):
        assert out(R) == pytest.approx(float(b(0.0)), abs=5e-2)


def test_ratio_matches_brute_force_sup():
    a, b = Normal(1.0, 0.04), Normal(0.5, 0.01)
    r = np.linspace(-2, 6, 81)
    out = ratio_posterior(a, b, r)
    m = np.linspace(-1, 2, 300001)
    ref = np.array([np.max(a(rr * m) * b(m)) for rr in r])
    assert np.max(np.abs(out(r) - ref)) <= 1e-6


def test_ratio_grid_without_mode_is_not_rescaled():
    a, b = Normal(1.0, 0.04), Normal(0.5, 0.01)
    r = np.linspace(3.0, 6.0, 31)  # the mode 2 lies outside
    out = ratio_posterior(a, b, r)
    m = np.linspace(-1, 2, 300001)
    ref = np.array([np.max(a(rr * m) * b(m)) for rr in r])
    assert np.max(ref) < 0.9
    assert np.max(np.abs(out(r) - ref)) <= 1e-6
    assert out.mode().value == pytest.approx(2.0, rel=1e-12)
