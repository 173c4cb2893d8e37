import json
import math

import numpy as np
import pytest

from estfun.asymptotics import (
    LimitSpec,
    NoninvertibleJacobianError,
    QuadratureError,
    VhatMode,
    inv_sqrt_psd,
    limit_ar1,
    limit_ergodic,
    limit_ergodic_quadrature,
    limit_fixed_T,
    limit_fixed_T_constant,
    limit_longitudinal_ou,
    limit_ou_euler,
    normal_quantile,
    ou_stationary_density,
    sandwich,
    theta_bar_ar2_misspec,
    theta_bar_ou,
)
from estfun.catalog import make_ar1_ls, make_ergodic_moment, make_hf_ergodic, make_hf_fixed_T, mean_kernel
from estfun.core import Dataset, reweight
from estfun.simulate import Rng, SdeModel, simulate_ar, simulate_ou_exact, simulate_sde_euler
from estfun.solver import estimate


def test_normal_quantile_values():
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-9)
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.995) == pytest.approx(2.5758293035489004, abs=1e-9)


def test_sandwich_sample_mean():
    z = Rng(51).generator().standard_normal(20_000)
    d = Dataset(z)
    g = make_ergodic_moment(mean_kernel())
    out = estimate(g, d)
    rep = sandwich(g, d, out.theta)
    n = z.size
    assert rep.avar[0, 0] == pytest.approx(1.0, abs=0.05)
    half = 0.5 * (rep.ci_upper - rep.ci_lower)[0]
    assert half == pytest.approx(1.96 * z.std() / math.sqrt(n), rel=1e-3)
    assert rep.ci_lower[0] < out.theta[0] < rep.ci_upper[0]


def test_sandwich_ar1_avar():
    x = simulate_ar([0.5], 1.0, 100_000, Rng(52)).values
    d = Dataset(x)
    g = make_ar1_ls()
    rep = sandwich(g, d, estimate(g, d).theta)
    assert rep.avar[0, 0] == pytest.approx(0.75, abs=0.05)
    np.testing.assert_allclose(rep.V_hat, rep.V_hat.T, atol=1e-12)


def test_sandwich_deterministic_data():
    d = Dataset(np.full(10, 2.0))
    g = make_ergodic_moment(mean_kernel())
    rep = sandwich(g, d, [2.0], theta_ref=[2.0])
    assert np.all(rep.V_hat == 0.0)
    assert np.all(rep.ci_upper - rep.ci_lower == 0.0)


def test_sandwich_supplied_mode_and_errors():
    z = Rng(53).generator().standard_normal(1000)
    d = Dataset(z)
    g = make_ergodic_moment(mean_kernel())
    rep = sandwich(g, d, [0.0], vhat_mode=VhatMode.SUPPLIED, V_supplied=[[4.0]])
    assert rep.avar[0, 0] == pytest.approx(4.0)
    with pytest.raises(ValueError):
        sandwich(g, d, [0.0], vhat_mode="supplied")
    with pytest.raises(NoninvertibleJacobianError):
        sandwich(_flat(), d, [0.0])


def _flat():
    from estfun.core import CompactBox, EstimatingFunction, ScalingMatrix

    return EstimatingFunction("flat", 1, 1, lambda t, d: d.values[:, None] * 0.0 + 1.0, lambda d: 1.0,
                              CompactBox([-1.0], [1.0]), ScalingMatrix.sqrt_n(1), jac_sum=lambda t, d: 0.0)


def test_report_json_fields():
    d = Dataset(Rng(54).generator().standard_normal(200))
    g = make_ergodic_moment(mean_kernel())
    rep = sandwich(g, d, estimate(g, d).theta, theta_ref=[0.0])
    doc = json.loads(rep.to_json())
    assert set(doc) == {"theta_hat", "W_hat", "V_hat", "studentized", "ci_lower", "ci_upper", "level"}
    assert doc["level"] == 0.95


def test_studentized_is_standardized_deviation():
    d = Dataset(Rng(55).generator().standard_normal(5000))
    g = make_ergodic_moment(mean_kernel())
    th = estimate(g, d).theta
    rep = sandwich(g, d, th, theta_ref=[0.0])
    assert rep.studentized[0] == pytest.approx(-th[0] / rep.se[0], rel=1e-10)


def test_inv_sqrt_psd_clamps():
    m = np.array([[4.0, 0.0], [0.0, 0.0]])
    r = inv_sqrt_psd(m)
    assert r[0, 0] == pytest.approx(0.5)
    assert r[1, 1] == pytest.approx(1e6)


def test_sandwich_reweighting_invariance():
    d = simulate_ou_exact(1.0, 1.0, 0.01, 20_000, Rng(56), x0=None)
    g = make_hf_ergodic(SdeModel.ou())
    th = estimate(g, d).theta
    B = np.array([[2.0, -0.7], [0.3, 1.5]])
    a = sandwich(g, d, th)
    b = sandwich(reweight(g, B), d, th)
    np.testing.assert_allclose(b.avar, a.avar, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(b.se, a.se, rtol=1e-8)


def test_theta_bar_ar2():
    assert theta_bar_ar2_misspec(0.4, 0.0) == 0.4
    assert theta_bar_ar2_misspec(0.5, 0.2) == pytest.approx(0.625, abs=1e-15)
    assert theta_bar_ar2_misspec(0.0, 0.5) == 0.0
    with pytest.raises(ValueError):
        theta_bar_ar2_misspec(0.5, 0.6)


def test_theta_bar_ar2_long_run():
    x = simulate_ar([0.5, 0.2], 1.0, 400_000, Rng(57)).values
    assert np.dot(x[:-1], x[1:]) / np.dot(x[:-1], x[:-1]) == pytest.approx(0.625, abs=0.005)


def test_theta_bar_ou():
    assert theta_bar_ou(1.0, 1e-6) == pytest.approx(1 - 5e-7, abs=1e-9)
    assert round(theta_bar_ou(1.0, 0.5), 6) == 0.786939
    assert theta_bar_ou(1.0, 0.01) == pytest.approx(0.99502, abs=5e-6)
    # saturation at 1/Delta far from theta0
    assert theta_bar_ou(1.0, 10.0) == pytest.approx((1 - math.exp(-10)) / 10, rel=1e-15)
    assert abs(theta_bar_ou(1.0, 10.0) - 0.1) < 1e-5
    with pytest.raises(ValueError):
        theta_bar_ou(0.0, 1.0)


def test_limit_fixed_T_examples():
    model = SdeModel.ou()
    for seed in range(3):
        path = simulate_sde_euler(model, (1.0, 1.0), 1e-3, 1000, Rng(58, seed))
        assert limit_fixed_T(model, path, 1.0, 1.0).G == 0.0
        lim = limit_fixed_T(model, path, 2.0, 1.0)
        assert lim.G == pytest.approx(-0.75, rel=1e-12)
        lim0 = limit_fixed_T(model, path, 1.0, 1.0)
        assert lim0.W == pytest.approx(-4.0, rel=1e-12)
        assert lim0.varZ == pytest.approx(8.0, rel=1e-12)
        assert lim0.varZ / lim0.W ** 2 == pytest.approx(0.5, rel=1e-12)
    assert limit_fixed_T_constant(1.0).avar[0, 0] == 0.5


def test_limit_ergodic_at_truth_and_closed_forms():
    model = SdeModel.ou()
    for alpha0, beta0 in ((1.0, 1.0), (0.5, 2.0), (3.0, 0.7)):
        dens = ou_stationary_density(alpha0, beta0)
        lim = limit_ergodic(model, dens, (alpha0, beta0), (alpha0, beta0))
        assert np.all(np.abs(lim.G) < 1e-12) and abs(lim.W[0, 1]) < 1e-12 and lim.W[1, 0] == 0.0
        w11 = -(beta0 ** 2 / (2 * alpha0)) / beta0 ** 2
        w22 = -4.0 / beta0 ** 2
        assert lim.W[0, 0] == pytest.approx(w11, rel=1e-6)
        assert lim.W[1, 1] == pytest.approx(w22, rel=1e-6)
        np.testing.assert_allclose(np.diag(lim.varZ), [-w11, -2 * w22], rtol=1e-6)
        cov = lim.limit_covariance()
        np.testing.assert_allclose(np.diag(cov), [2 * alpha0, beta0 ** 2 / 2], rtol=1e-6)


def test_limit_ergodic_away_from_truth():
    model = SdeModel.ou()
    dens = ou_stationary_density(1.0, 1.0)
    lim = limit_ergodic(model, dens, (1.5, 2.0), (1.0, 1.0))
    m2 = 0.5
    # G1 = mu(-x/c (-x + 1.5 x)) = -0.5 m2 / 4 ; G2 = 2*2/16 (1 - 4)
    assert lim.G[0] == pytest.approx(-0.5 * m2 / 4.0, rel=1e-6)
    assert lim.G[1] == pytest.approx(-0.75, rel=1e-6)
    # W11 = -mu(x^2)/c ; W12 = mu(x dc/c^2 (a0 - a)) = mu(x^2) 4/16 0.5
    assert lim.W[0, 0] == pytest.approx(-m2 / 4.0, rel=1e-6)
    assert lim.W[0, 1] == pytest.approx(m2 * 0.125, rel=1e-6)


def test_limit_ergodic_bad_density():
    with pytest.raises(QuadratureError):
        limit_ergodic(SdeModel.ou(), lambda x: 2 * ou_stationary_density(1.0, 1.0)(x), (1.0, 1.0), (1.0, 1.0))


def test_limit_ergodic_quadrature_spec():
    spec = limit_ergodic_quadrature(SdeModel.ou(), (1.0, 1.0))
    np.testing.assert_allclose(spec.theta_bar, [1.0, 1.0])
    np.testing.assert_allclose(spec.avar, np.diag([2.0, 0.5]), rtol=1e-6, atol=1e-9)
    with pytest.raises(ValueError):
        limit_ergodic_quadrature(SdeModel.brownian(), (1.0, 1.0))


def test_limit_specs():
    assert limit_ar1(0.5).avar[0, 0] == 0.75
    phi = math.exp(-0.5)
    assert limit_ou_euler(1.0, 0.5).avar[0, 0] == pytest.approx((1 - phi ** 2) / 0.25)
    assert limit_longitudinal_ou(1.0, 0.5, 5).theta_bar[0] == 1.0
    with pytest.raises(ValueError):
        LimitSpec([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], ("n", "n"))


def test_jacobian_estimates_converge_to_limit_W():
    model = SdeModel.ou()
    erg, fixed = make_hf_ergodic(model), make_hf_fixed_T(model)
    W_erg, W_fix = [], []
    for i in range(20):
        d = simulate_ou_exact(1.0, 1.0, 0.01, 100_000, Rng(59, i), x0=None)
        W_erg.append(sandwich(erg, d, estimate(erg, d).theta).W_hat)
        h = simulate_sde_euler(model, (1.0, 1.0), 1.0 / 5000, 5000, Rng(60, i), substeps=5)
        W_fix.append(sandwich(fixed, h, estimate(fixed, h).theta).W_hat[0, 0])
    W_erg = np.mean(W_erg, axis=0)
    assert W_erg[0, 0] == pytest.approx(-0.5, rel=0.02)
    assert W_erg[1, 1] == pytest.approx(-4.0, rel=0.02)
    assert np.mean(W_fix) == pytest.approx(-4.0, rel=0.02)
