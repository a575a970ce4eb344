import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcal import basis1d as b1


def test_trig_nodal_m20_has_21_orthonormal_elements():
    B = b1.build_basis("trig_nodal", 20)
    assert B.m == 21
    G = B.gram()
    assert np.abs(G - np.eye(21)).max() < 1e-10
    # before normalization the nodal functions have squared norm 2*pi/21
    scale = np.sqrt(2 * np.pi / 21)
    V = B.values_matrix() * scale
    raw_gram = V @ (B.quad_weights[:, None] * V.T)
    assert np.abs(raw_gram - (2 * np.pi / 21) * np.eye(21)).max() < 1e-10


def test_trig_nodal_closed_form():
    B = b1.build_basis("trig_nodal", 20)
    n = B.m
    x = np.linspace(0.1, 2 * np.pi - 0.1, 13)
    for k in (0, 4, 20):
        xk = 2 * np.pi * k / n
        d = (x - xk) / 2
        ref = np.sin(n * d) / (n * np.sin(d)) / np.sqrt(2 * np.pi / n)
        assert np.abs(B.evaluate(k, x) - ref).max() < 1e-12


def test_trig_nodal_odd_parameter_rejected():
    with pytest.raises(ValueError):
        b1.build_basis("trig_nodal", 7)


def test_legendre_m6_orthonormal():
    B = b1.build_basis("legendre", 6)
    assert B.domain == (-1.0, 1.0)
    assert np.abs(B.gram() - np.eye(6)).max() < 1e-10


def test_poly_bc0_m3_gram_identity_and_boundary():
    B = b1.build_basis("poly_bc0", 3)
    assert np.abs(B.gram() - np.eye(3)).max() < 1e-10
    for k in range(3):
        assert abs(B.evaluate(k, np.array([0.0]))[0]) < 1e-12


def test_poly_bc0_stays_orthonormal_at_high_degree():
    B = b1.build_basis("poly_bc0", 24)
    assert np.abs(B.gram() - np.eye(24)).max() < 1e-10


def test_gram_schmidt_example_matches_poly_bc0():
    fns = [lambda x, k=k: x * np.cos(k * np.arccos(np.clip(x / np.pi - 1,
                                                           -1.0, 1.0)))
           for k in range(3)]
    B = b1.gram_schmidt(fns)
    assert B.kind == "custom"
    assert np.abs(B.gram() - np.eye(3)).max() < 1e-10
    P = b1.build_basis("poly_bc0", 3)
    for k in range(3):
        diff = np.abs(B.coefficients[k] - P.evaluate(k, B.master_x)).max()
        assert diff < 1e-10


def test_gram_schmidt_rejects_proportional_inputs():
    with pytest.raises(np.linalg.LinAlgError, match="rank deficiency"):
        b1.gram_schmidt([np.sin, lambda x: 2.0 * np.sin(x)])


def test_fourier_modal_advection_skew_and_spectrum():
    B = b1.build_basis("fourier_modal", 11)
    C = b1.advection_matrix(B).entries
    assert np.abs(C + C.T).max() < 1e-10
    ev = np.sort_complex(np.linalg.eigvals(C))
    assert np.abs(ev.real).max() < 1e-10
    assert np.allclose(np.sort(ev.imag), np.arange(-5, 6), atol=1e-10)


def test_advection_matrix_constant_basis_is_zero():
    B = b1.build_basis("fourier_modal", 1)
    C = b1.advection_matrix(B).entries
    assert C.shape == (1, 1)
    assert abs(C[0, 0]) < 1e-12


def test_poly_bc0_advection_eigenvalues_in_right_half_plane():
    B = b1.build_basis("poly_bc0", 8)
    C = b1.advection_matrix(B).entries
    assert np.linalg.eigvals(C).real.min() > 0.0


def test_poly_bc0_advection_m2_values():
    # frozen from an independent quadrature computation; diagonal entries
    # are 3/(4*pi) and 5/(4*pi) exactly
    C = b1.advection_matrix(b1.build_basis("poly_bc0", 2)).entries
    ref = np.array([[0.238732414637843, -0.10273407401025],
                    [0.71913851807175, 0.397887357729738]])
    assert np.abs(C - ref).max() < 1e-12
    assert abs(C[0, 0] - 3 / (4 * np.pi)) < 1e-13
    assert abs(C[1, 1] - 5 / (4 * np.pi)) < 1e-13


def test_project_basis_element_gives_unit_vector():
    B = b1.build_basis("fourier_modal", 11)
    a = b1.project(lambda x: B.evaluate(3, x), B)
    assert np.abs(a - np.eye(11)[3]).max() < 1e-12


def test_project_sine_onto_poly_bc0():
    B = b1.build_basis("poly_bc0", 10)
    a = b1.project(np.sin(B.quad_nodes), B)
    x = B.master_x
    resid = np.sin(x) - a @ B.values_matrix(x)
    assert np.abs(resid).max() < 1e-3


def test_project_zero_function():
    B = b1.build_basis("legendre", 5)
    a = b1.project(lambda x: np.zeros_like(x), B)
    assert np.abs(a).max() == 0.0


def test_semigroup_norm_preserved_for_periodic_advection():
    C = b1.advection_matrix(b1.build_basis("fourier_modal", 9)).entries
    for t in (0.5, 1.0, 5.0):
        Z = b1.matrix_exponential(C, t)
        assert abs(np.linalg.norm(Z, 2) - 1.0) < 1e-8


def test_matrix_exponential_nonnormal_matches_scipy():
    from scipy.linalg import expm
    rng = np.random.default_rng(3)
    C = rng.standard_normal((5, 5))
    assert np.abs(b1.matrix_exponential(C, 0.7) - expm(-0.7 * C)).max() < 1e-10


@pytest.mark.parametrize("kind,m", [("fourier_modal", 7), ("fourier_modal", 12),
                                    ("trig_nodal", 10), ("legendre", 9),
                                    ("poly_bc0", 12)])
def test_gram_identity_all_kinds(kind, m):
    B = b1.build_basis(kind, m)
    assert np.abs(B.gram() - np.eye(B.m)).max() < 1e-10


@given(st.sampled_from(["fourier_modal", "legendre", "poly_bc0"]),
       st.integers(min_value=2, max_value=9),
       st.integers(min_value=0, max_value=200))
@settings(max_examples=25, deadline=None)
def test_projection_idempotent(kind, m, seed):
    B = b1.build_basis(kind, m)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(B.m)
    f = a @ B.values_matrix()
    a2 = b1.project(f, B)
    assert np.abs(a2 - a).max() < 1e-9


def test_derivatives_match_finite_differences():
    h = 1e-6
    for kind, m in (("fourier_modal", 9), ("trig_nodal", 12),
                    ("legendre", 7), ("poly_bc0", 7)):
        B = b1.build_basis(kind, m)
        lo, hi = B.domain
        x = np.linspace(lo + 0.1, hi - 0.1, 11)
        for k in range(B.m):
            fd = (B.evaluate(k, x + h) - B.evaluate(k, x - h)) / (2 * h)
            assert np.abs(B.derivative(k, x) - fd).max() < 1e-5, (kind, k)


def test_json_round_trip_all_kinds():
    x = np.array([0.3, 1.9, 4.4])
    for kind, m in (("fourier_modal", 8), ("trig_nodal", 10), ("poly_bc0", 5)):
        B = b1.build_basis(kind, m)
        doc = B.to_json()
        payload = json.loads(doc)
        assert set(payload) == {"kind", "domain", "m", "coefficients"}
        B2 = b1.Basis1D.from_json(doc)
        for k in range(B.m):
            assert np.abs(B2.evaluate(k, x) - B.evaluate(k, x)).max() < 1e-12


def test_json_round_trip_custom():
    B = b1.gram_schmidt([np.sin, np.cos, lambda x: np.sin(2 * x)])
    B2 = b1.Basis1D.from_json(B.to_json())
    x = np.array([0.7, 2.2, 5.0])
    assert np.abs(B2.evaluate(1, x) - B.evaluate(1, x)).max() < 1e-12


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        b1.build_basis("hermite", 4)
