import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adro import debias, models
from adro.debias import (
    K_n,
    NewtonOptions,
    adjust_closed_form_linear,
    adjust_newton,
    adjust_special_case,
    empirical_C,
    empirical_H,
    empirical_curvature_fn,
    existence_check,
    invert_F_bisection,
    isotropic_linear_curvature_fn,
    population_curvature_mc,
)
from adro.dual import WdroConfig, fit_dro
from adro.errors import BracketFailureError, DegenerateParameterError, IllConditionedCurvatureError
from adro.models import Dataset, GlmModel, LabelKind
from adro.synthetic import LINEAR_BETA_STAR, LOGISTIC_BETA_STAR, DistributionSpec, generate_linear, generate_logistic

LOGISTIC = GlmModel.logistic()
LINEAR = GlmModel.linear(0.1)
POISSON = GlmModel.poisson()


def _collinear_residual(H, beta):
    u = np.asarray(beta) / np.linalg.norm(beta)
    return np.linalg.norm(H - (H @ u) * u)


def test_empirical_C_examples():
    data = generate_linear(50, seed=0)
    C = empirical_C(LINEAR, data, [1.0, 2.0])
    np.testing.assert_allclose(C, data.features.T @ data.features / 50, atol=1e-14)
    np.testing.assert_allclose(C, empirical_C(LINEAR, data, [-3.0, 0.1]), atol=1e-14)
    one = Dataset([[1.0, 0.0]], [1.0], LabelKind.BINARY_PM1)
    beta = np.array([0.3, 0.7])
    k = models.d2loss_dt2(LOGISTIC, 0.3, 1)
    np.testing.assert_allclose(empirical_C(LOGISTIC, one, beta), [[k, 0], [0, 0]], atol=1e-15)


def test_empirical_H_examples():
    X = np.random.default_rng(0).normal(size=(20, 2))
    beta = np.array([0.5, -1.0])
    exact = Dataset(X, X @ beta, LabelKind.REAL)
    np.testing.assert_array_equal(empirical_H(LINEAR, exact, beta, 1.0), 0.0)
    data = generate_logistic(100, seed=1)
    np.testing.assert_array_equal(empirical_H(LOGISTIC, data, beta, 0.0), 0.0)
    with pytest.raises(DegenerateParameterError):
        empirical_H(LOGISTIC, data, [0.0, 0.0], 1.0)


def test_population_H_linear_value():
    # H(beta*) = tau sigma beta*/||beta*|| for the isotropic linear model
    _, H = isotropic_linear_curvature_fn(1.0, 0.1, 1.0)(np.array(LINEAR_BETA_STAR))
    np.testing.assert_allclose(H, [0.094868, -0.031623], atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3).filter(lambda b: np.linalg.norm(b) > 1e-3),
       st.integers(0, 2**31 - 1), st.floats(0.0, 3.0))
def test_curvature_structure(beta, seed, tau):
    beta = np.array(beta)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 3))
    y = rng.choice([-1.0, 1.0], size=40)
    data = Dataset(X, y, LabelKind.BINARY_PM1)
    C = empirical_C(LOGISTIC, data, beta)
    np.testing.assert_array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-10
    H = empirical_H(LOGISTIC, data, beta, tau)
    assert _collinear_residual(H, beta) <= 1e-10 * max(np.linalg.norm(H), 1e-300)


def test_logistic_C_matches_population():
    beta = np.array(LOGISTIC_BETA_STAR)
    data = generate_logistic(50_000, seed=17)
    pop = population_curvature_mc(LOGISTIC, DistributionSpec("logistic", beta), beta, 1.0, 400_000, seed=3)
    np.testing.assert_allclose(empirical_C(LOGISTIC, data, beta), pop.C, atol=0.02)


def test_K_n_identities(rng):
    zero = isotropic_linear_curvature_fn(0.0, 0.1, 1.0)
    z = rng.normal(size=2)
    np.testing.assert_array_equal(K_n(z, zero, 100), z)
    tau, sigma, c, n = 2.0, 0.1, 1.5, 300
    iso = isotropic_linear_curvature_fn(tau, sigma, c)
    for _ in range(20):
        z = rng.normal(size=2)
        expected = z * (1 - tau * sigma / (c * np.sqrt(n) * np.linalg.norm(z)))
        np.testing.assert_allclose(K_n(z, iso, n), expected, atol=1e-14)


def test_K_n_bounded_by_correction(rng):
    data = generate_logistic(300, seed=2)
    fn = empirical_curvature_fn(LOGISTIC, data, 1.5)
    for _ in range(20):
        z = rng.normal(size=2)
        C, H = fn(z)
        bound = np.linalg.norm(np.linalg.solve(C, H)) / np.sqrt(300)
        assert np.linalg.norm(K_n(z, fn, 300) - z) <= bound * (1 + 1e-12)


def test_closed_form_examples():
    out = adjust_closed_form_linear([0.6, 0.8], 2.0, 0.1, 1.0, 400)
    np.testing.assert_allclose(out, [0.606, 0.808], atol=1e-15)
    np.testing.assert_array_equal(adjust_closed_form_linear([0.6, 0.8], 0.0, 0.1, 1.0, 400), [0.6, 0.8])
    b = np.array([-1.3, 0.2])
    a = adjust_closed_form_linear(b, 1.7, 0.3, 0.9, 50)
    np.testing.assert_allclose(a / np.linalg.norm(a), b / np.linalg.norm(b), atol=1e-15)
    assert np.linalg.norm(a) - np.linalg.norm(b) == pytest.approx(1.7 * 0.3 / (0.9 * np.sqrt(50)), abs=1e-14)


def test_newton_isotropic_matches_closed_form():
    res = adjust_newton([0.6, 0.8], isotropic_linear_curvature_fn(2.0, 0.1, 1.0), 400)
    np.testing.assert_allclose(res.beta_adro, [0.606, 0.808], atol=1e-8)
    assert res.residual_norm < 1e-10
    assert res.existence_verified


def test_newton_zero_tau_is_identity():
    data = generate_logistic(200, seed=1)
    beta = np.array([0.3, 0.9])
    res = adjust_newton(beta, empirical_curvature_fn(LOGISTIC, data, 0.0), 200)
    np.testing.assert_array_equal(res.beta_adro, beta)
    assert res.adjustment_distance == 0.0


def test_logistic_round_trip_and_distance_bound():
    n = 1000
    data = generate_logistic(n, seed=7)
    fit = fit_dro(LOGISTIC, data, WdroConfig(tau=1.0, n=n))
    fn = empirical_curvature_fn(LOGISTIC, data, 1.0)
    opts = NewtonOptions()
    res = adjust_newton(fit.beta_dro, fn, n, opts)
    assert np.max(np.abs(K_n(res.beta_adro, fn, n) - fit.beta_dro)) < opts.tol
    C, H = fn(res.beta_adro)
    assert res.adjustment_distance <= np.linalg.norm(np.linalg.solve(C, H)) * (1 + 1e-6) / np.sqrt(n)
    # the adjustment pushes the norm outward, undoing the shrinkage of the robust fit
    assert np.linalg.norm(res.beta_adro) > np.linalg.norm(fit.beta_dro)


def test_ill_conditioned_curvature_reported():
    X = np.column_stack([np.linspace(-1, 1, 30), np.zeros(30)])
    data = Dataset(X, np.where(X[:, 0] > 0, 1.0, -1.0), LabelKind.BINARY_PM1)
    with pytest.raises(IllConditionedCurvatureError):
        K_n(np.array([1.0, 0.5]), empirical_curvature_fn(LOGISTIC, data, 1.0), 30)


def test_existence_margin():
    iso = isotropic_linear_curvature_fn(2.0, 0.1, 1.0)
    z = np.array([0.6, 0.8])
    assert existence_check(iso, z, 100) == pytest.approx(9.8, abs=1e-6)
    assert existence_check(isotropic_linear_curvature_fn(0.0, 0.1, 1.0), z, 100) == pytest.approx(10.0)
    margins = [existence_check(iso, z, n) for n in (4, 100, 10_000)]
    assert margins[0] < margins[1] < margins[2]


def _iso_fns(tau, sigma, c):
    return (lambda z: tau * sigma / np.linalg.norm(z)), (lambda z: 1.0 / c)


def test_bisection_examples():
    h_fn, c_fn = _iso_fns(1.0, 0.1, 1.0)
    assert invert_F_bisection([1.0, 0.0], 100, h_fn, c_fn, 1.0) == pytest.approx(1.01, abs=1e-9)
    h0, c0 = _iso_fns(0.0, 0.1, 1.0)
    assert invert_F_bisection([1.0, 0.0], 100, h0, c0, 1.0) == 1.0
    np.testing.assert_allclose(adjust_special_case([0.6, 0.8], 400, *_iso_fns(2.0, 0.1, 1.0)),
                               adjust_closed_form_linear([0.6, 0.8], 2.0, 0.1, 1.0, 400), atol=1e-9)


def test_bisection_bracket_failure():
    # F(x) - target stays negative on the whole search interval
    with pytest.raises(BracketFailureError):
        invert_F_bisection([1.0, 0.0], 100, lambda z: 10.0 * np.linalg.norm(z) ** 3, lambda z: 1.0, 1.0)


def test_population_linear_isotropic():
    beta = np.array(LINEAR_BETA_STAR)
    pop = population_curvature_mc(LINEAR, DistributionSpec("linear", beta, sigma=0.1), beta, 2.0, 200_000, seed=1)
    assert np.all(np.abs(pop.C - np.eye(2)) <= 3 * pop.C_se + 1e-12)
    assert np.all(np.abs(pop.H - 0.2 * beta) <= 3 * pop.H_se + 1e-12)


def test_population_logistic_collinear():
    beta = np.array(LOGISTIC_BETA_STAR)
    _, H = population_curvature_mc(LOGISTIC, DistributionSpec("logistic", beta), beta, 1.0, 1_000_000, seed=0)
    cosang = H @ beta / (np.linalg.norm(H) * np.linalg.norm(beta))
    assert np.arccos(min(1.0, cosang)) < 1e-3


def test_population_poisson_seed_consistency():
    beta = np.array([0.4, -0.3])
    spec = DistributionSpec("poisson", beta)
    a = population_curvature_mc(POISSON, spec, beta, 1.0, 200_000, seed=1)
    b = population_curvature_mc(POISSON, spec, beta, 1.0, 200_000, seed=2)
    assert np.all(np.abs(a.C - b.C) <= 3 * np.hypot(a.C_se, b.C_se))
    assert np.all(np.abs(a.H - b.H) <= 3 * np.hypot(a.H_se, b.H_se))


def test_estimate_nuisance():
    data = generate_linear(20_000, seed=5)
    sigma, c = debias.estimate_linear_nuisance(data, np.array(LINEAR_BETA_STAR))
    assert sigma == pytest.approx(0.1, rel=0.02)
    assert c == pytest.approx(1.0, rel=0.02)


def test_newton_failure_carries_last_iterate():
    # small n, large tau: the correction grows faster than sqrt(n) along the path, so K_n has no preimage nearby
    from adro.errors import NewtonFailedError
    data = generate_logistic(200, seed=347926109)
    fit = fit_dro(LOGISTIC, data, WdroConfig(tau=2.0, n=200))
    fn = empirical_curvature_fn(LOGISTIC, data, 2.0)
    with pytest.raises(NewtonFailedError) as info:
        adjust_newton(fit.beta_dro, fn, 200)
    assert info.value.last_iterate is not None
    assert existence_check(fn, info.value.last_iterate, 200) < 0
