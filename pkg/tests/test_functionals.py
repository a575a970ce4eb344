import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcal import basis1d as b1
from funcal import funcspace as fs
from funcal import functionals as fn

MASTER_W = 2 * np.pi / fn.MASTER_N
GRID2_W = 2 * np.pi / fn.GRID2_N


@pytest.fixture(scope="module")
def fourier11():
    return b1.build_basis("fourier_modal", 11)


def _tf(basis, a):
    return fs.TestFunction(basis, np.asarray(a, dtype=float))


def test_linear_on_basis_element(fourier11):
    model = fn.linear_model(lambda x: fourier11.evaluate(1, x))
    theta = _tf(fourier11, np.eye(11)[1])
    assert abs(fn.evaluate(model, theta) - 1.0) < 1e-12


def test_sine_functional_reduces_to_coefficient_sum(fourier11):
    k = np.array([0.0, 2.0, 0.0, 0.0, -0.7, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0])

    def K(x):
        return k @ fourier11.values_matrix(x)

    model = fn.sine_model(K)
    a = np.array([0.1, 0.5, -0.2, 0.3, 0.4, 0.0, 0.1, -0.2, 0.6, 0.0, 0.0])
    val = fn.evaluate(model, _tf(fourier11, a))
    assert abs(val - np.sin(np.dot(k, a))) < 1e-12


def test_hopf_normalization_at_zero(fourier11):
    zero = _tf(fourier11, np.zeros(11))
    assert fn.evaluate(fn.hopf_gaussian(q=4), zero) == pytest.approx(1.0)
    assert fn.evaluate(fn.hopf_uniform(3), zero) == pytest.approx(1.0)


def test_hopf_gaussian_derivatives_at_zero(fourier11):
    model = fn.hopf_gaussian(q=4)
    zero = _tf(fourier11, np.zeros(11))
    d1 = fn.functional_derivative(model, zero, 1)
    assert np.abs(d1.values).max() == 0.0
    d2 = fn.functional_derivative(model, zero, 2)
    C0 = fn._cov_gaussian_q(4, d2.x, d2.y)
    assert np.abs(d2.values + C0).max() < 1e-12


def test_sine_derivative_at_zero_is_kernel(fourier11):
    model = fn.sine_model(fn.kernel_K1)
    zero = _tf(fourier11, np.zeros(11))
    d1 = fn.functional_derivative(model, zero, 1)
    assert np.abs(d1.values - fn.kernel_K1(d1.x)).max() < 1e-12


def test_quadratic_kernel_stored_symmetric():
    model = fn.builtin_quadratic()
    K2 = model.params["K2"]
    assert np.abs(K2 - K2.T).max() < 1e-12


def test_symmetrization_preserves_quadratic_form():
    x = np.linspace(0, 2 * np.pi, 128, endpoint=False)
    w = 2 * np.pi / 128
    H2 = fn.kernel_H2(x[:, None], x[None, :])
    K2 = fn.symmetrize_kernel(H2)
    rng = np.random.default_rng(5)
    for _ in range(10):
        c = rng.standard_normal(4)
        tv = (c[0] * np.sin(x) + c[1] * np.cos(x) + c[2] * np.sin(2 * x)
              + c[3] * np.cos(3 * x))
        a = w * w * (tv @ H2 @ tv)
        b = w * w * (tv @ K2 @ tv)
        assert abs(a - b) < 1e-10


def test_symmetrize_identity_on_symmetric_input():
    x = np.linspace(0, 1, 32)
    S = np.cos(np.subtract.outer(x, x))
    assert np.array_equal(fn.symmetrize_kernel(S), S)


def test_symmetrize_annihilates_antisymmetric():
    x = np.linspace(0, 1, 32)
    A = np.subtract.outer(x, x)
    assert np.abs(fn.symmetrize_kernel(A)).max() == 0.0


def test_symmetrize_three_arguments():
    rng = np.random.default_rng(2)
    T = rng.standard_normal((5, 5, 5))
    S = fn.symmetrize_kernel(T)
    for perm in ((0, 2, 1), (1, 0, 2), (2, 1, 0)):
        assert np.abs(S - S.transpose(perm)).max() < 1e-14


def test_hopf_linear_coeffs_isolate_modes(fourier11):
    F21 = b1.build_basis("fourier_modal", 21)
    theta = _tf(F21, b1.project(lambda x: np.sin(3 * x), F21))
    s, c = fn.hopf_linear_coeffs(theta, 5)
    assert abs(s[2] - np.pi / np.sqrt(5)) < 1e-10
    assert np.abs(np.delete(s, 2)).max() < 1e-12
    assert np.abs(c).max() < 1e-12


def test_hopf_linear_coeffs_zero_and_cosine(fourier11):
    zero = _tf(fourier11, np.zeros(11))
    s, c = fn.hopf_linear_coeffs(zero, 4)
    assert np.abs(s).max() == 0.0 and np.abs(c).max() == 0.0
    theta = _tf(fourier11, b1.project(np.cos, fourier11))
    s, c = fn.hopf_linear_coeffs(theta, 1)
    assert abs(c[0] - np.pi) < 1e-10


def test_uniform_g_limits_and_decay():
    g = fn.GCoefficients("uniform")
    z0 = np.array([0.0])
    assert abs(g.G0(z0)[0] - 1.0) < 1e-14
    assert abs(g.G1(z0)[0]) < 1e-14
    assert abs(g.G2(z0)[0] - 1.0) < 1e-14
    zbig = np.array([200.0])
    assert abs(g.G0(zbig)[0]) < 1e-2
    assert abs(g.G1(zbig)[0]) < 1e-2
    assert abs(g.G2(zbig)[0]) < 1e-1


def test_uniform_g_series_matches_trig_branch():
    g = fn.GCoefficients("uniform")
    z = np.array([0.0099, 0.0101])
    for G in (g.G0, g.G2):
        vals = G(z)
        # series (first entry) and trig (second) agree through the switch
        mid = G(np.array([0.01]))
        assert abs(vals[0] - mid[0]) < 3e-6
        assert abs(vals[1] - mid[0]) < 3e-6
    w = np.sqrt(3.0) * 0.0099
    exact = np.sin(w) / (np.sqrt(3.0) * 0.0099 ** 2) - np.cos(w) / 0.0099
    assert abs(g.G1(np.array([0.0099]))[0].imag - exact) < 1e-12


def _mollified_delta(basis, center, width=0.3):
    x, w = fn._master(basis.domain)
    bump = np.exp((np.cos(x - center) - 1.0) / width ** 2)
    bump /= w * np.sum(bump)
    V = basis.values_matrix(x)
    return V @ (w * bump)


_ANALYTIC_MODELS = [
    ("linear", lambda: fn.builtin_linear()),
    ("quadratic", lambda: fn.builtin_quadratic()),
    ("sine", lambda: fn.sine_model(fn.kernel_K1)),
    ("hopf_gaussian", lambda: fn.hopf_gaussian(q=5)),
    ("hopf_uniform", lambda: fn.hopf_uniform(5)),
    ("exp_neg_norm_sq", lambda: fn.exp_neg_norm_sq()),
]


@pytest.mark.parametrize("name,make", _ANALYTIC_MODELS)
def test_first_derivative_matches_gateaux_quotient(name, make):
    model = make()
    basis = b1.build_basis("fourier_modal", 21)
    rng = np.random.default_rng(17)
    eps = 1e-5
    centers = 2 * np.pi * (np.arange(8) + 0.5) / 8
    for _ in range(5):
        a = 0.5 * rng.standard_normal(21)
        theta = _tf(basis, a)
        d1 = fn.functional_derivative(model, theta, 1)
        w = 2 * np.pi / d1.x.size
        scale = np.abs(d1.values).max()
        for xc in centers:
            eta = _mollified_delta(basis, xc)
            eta_tf = _tf(basis, eta)
            x_eval = d1.x
            eta_vals = eta_tf.evaluate(x_eval)
            predicted = np.sum(w * d1.values * eta_vals)
            quotient = (fn.evaluate(model, _tf(basis, a + eps * eta))
                        - fn.evaluate(model, _tf(basis, a - eps * eta))) \
                / (2 * eps)
            assert abs(quotient - predicted) <= 1e-4 * max(abs(predicted),
                                                           0.05 * scale)


@pytest.mark.parametrize("name,make", _ANALYTIC_MODELS)
def test_second_derivative_symmetric(name, make):
    model = make()
    basis = b1.build_basis("fourier_modal", 13)
    rng = np.random.default_rng(3)
    theta = _tf(basis, 0.4 * rng.standard_normal(13))
    d2 = fn.functional_derivative(model, theta, 2)
    assert np.abs(d2.values - d2.values.T).max() < 1e-10


def test_riemann_lebesgue_decay(fourier11):
    model = fn.hopf_gaussian(q=3)
    svals = np.linspace(0.2, 25.0, 40)
    vals = [fn.evaluate(model, _tf(fourier11, s * np.eye(11)[1]))
            for s in svals]
    assert all(np.diff(vals) < 0)
    assert vals[-1] < 1e-10


@given(st.integers(min_value=1, max_value=4), st.integers(min_value=0, max_value=500))
@settings(max_examples=20, deadline=None)
def test_hopf_gaussian_rank_one_reduction(q, seed):
    basis = fn.hopf_basis(q)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(2 * q)
    val = fn.evaluate(fn.hopf_gaussian(q=q), fs.TestFunction(basis, a))
    ref = np.exp(-np.pi / (2 * q) * np.sum(a * a))
    assert abs(val - ref) < 1e-10


def test_hopf_series_matches_gaussian_closed_form():
    basis = b1.build_basis("fourier_modal", 11)
    rng = np.random.default_rng(9)
    theta = _tf(basis, 0.3 * rng.standard_normal(11))
    model = fn.hopf_gaussian(q=3)
    d1a = fn.functional_derivative(model, theta, 1)
    d1b = fn._hopf_series_derivative(theta, 3, "gaussian", 1)
    assert np.abs(d1a.values - d1b.values).max() < 1e-12
    d2a = fn.functional_derivative(model, theta, 2)
    d2b = fn._hopf_series_derivative(theta, 3, "gaussian", 2)
    assert np.abs(d2a.values - d2b.values).max() < 1e-12


def test_white_noise_value_only(fourier11):
    model = fn.white_noise()
    theta = _tf(fourier11, 2.0 * np.eye(11)[1])
    assert abs(fn.evaluate(model, theta) - np.exp(-2.0)) < 1e-12
    for order in (1, 2):
        with pytest.raises(NotImplementedError):
            fn.functional_derivative(model, theta, order)


def test_exp_neg_norm_sq_value_and_first_derivative(fourier11):
    model = fn.exp_neg_norm_sq()
    theta = _tf(fourier11, 2.0 * np.eye(11)[1])
    assert abs(fn.evaluate(model, theta) - np.exp(-4.0)) < 1e-12
    d1 = fn.functional_derivative(model, theta, 1)
    ref = -2.0 * theta.evaluate(d1.x) * np.exp(-4.0)
    assert np.abs(d1.values - ref).max() < 1e-12


def test_exp_neg_norm_sq_second_derivative_restricted(fourier11):
    # projecting the restricted kernel back gives (4 a a^T - 2 I) exp(-|a|^2)
    model = fn.exp_neg_norm_sq()
    a = np.zeros(11)
    a[1], a[4] = 1.0, -0.5
    theta = _tf(fourier11, a)
    d2 = fn.functional_derivative(model, theta, 2)
    V = fourier11.values_matrix(d2.x)
    M = GRID2_W ** 2 * (V @ d2.values @ V.T)
    f = np.exp(-np.sum(a * a))
    ref = (4.0 * np.outer(a, a) - 2.0 * np.eye(11)) * f
    assert np.abs(M - ref).max() < 1e-10


def test_custom_cylindrical_evaluate_and_no_derivative(fourier11):
    model = fn.custom_cylindrical(lambda a: a[0] ** 2 + np.sin(a[1]),
                                  fourier11)
    theta = _tf(fourier11, np.array([2.0, 0.5] + [0.0] * 9))
    assert abs(fn.evaluate(model, theta) - (4.0 + np.sin(0.5))) < 1e-12
    with pytest.raises(NotImplementedError):
        fn.functional_derivative(model, theta, 1)


def test_domain_mismatch_rejected():
    model = fn.builtin_linear()
    B = b1.build_basis("legendre", 4)
    theta = _tf(B, np.zeros(4))
    with pytest.raises(ValueError):
        fn.evaluate(model, theta)


def test_uniform_second_derivative_large_q_excluded(fourier11):
    model = fn.hopf_uniform(12)
    theta = _tf(fourier11, np.zeros(11))
    with pytest.raises(NotImplementedError):
        fn.functional_derivative(model, theta, 2)


def test_evaluate_batch_matches_pointwise(fourier11):
    nodes = fs.gaussian_ensemble(fourier11, 6, 1.0, 16, 4)
    for model in (fn.builtin_linear(), fn.builtin_quadratic(),
                  fn.hopf_gaussian(q=3), fn.hopf_uniform(3)):
        batch = fn.evaluate_batch(model, nodes)
        single = np.array([fn.evaluate(model, nd) for nd in nodes])
        assert np.abs(batch - single).max() < 1e-12


def test_kernel_csv_round_trip(tmp_path):
    x = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    k1 = fn.Kernel1(x, fn.kernel_K1(x))
    p1 = tmp_path / "k1.csv"
    fn.export_kernel_csv(k1, p1)
    back = fn.import_kernel_csv(p1)
    assert np.abs(back.x - k1.x).max() < 1e-15
    assert np.abs(back.values - k1.values).max() < 1e-15
    k2 = fn.Kernel2(x, x, fn.kernel_H2(x[:, None], x[None, :]))
    p2 = tmp_path / "k2.csv"
    fn.export_kernel_csv(k2, p2)
    back2 = fn.import_kernel_csv(p2)
    assert np.abs(back2.values - k2.values).max() < 1e-15
