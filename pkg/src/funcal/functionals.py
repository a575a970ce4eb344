"""Analytic target functionals with closed-form values and derivatives.

Every approximation scheme in this package is benchmarked against the
functionals defined here: linear and quadratic integral functionals with
smooth periodic kernels, the sine functional, Hopf characteristic
functionals of Gaussian and uniform random Fourier fields, the white-noise
characteristic functional, and exp(-||theta||^2). Values are computed by
trapezoidal quadrature on a fine master grid (spectrally accurate for the
periodic kernels involved); first and second functional derivatives are
returned as grid functions.

Conventions: the first functional derivative of F at theta is the function
x -> dF([theta + eps*delta_x])/d(eps); second derivatives are symmetric
kernels of (x, y). Derivatives whose distributional parts cannot be
represented as grid functions are either excluded (white noise) or returned
restricted to the test function's space (exp(-||theta||^2), order 2).
"""
from collections import namedtuple

import numpy as np

from .basis1d import Basis1D, _trapezoid_rule

MASTER_N = 4096
GRID2_N = 512

Kernel1 = namedtuple("Kernel1", ["x", "values"])
Kernel2 = namedtuple("Kernel2", ["x", "y", "values"])


def _master(domain):
    a, b = domain
    x = a + (b - a) * np.arange(MASTER_N) / MASTER_N
    return x, (b - a) / MASTER_N


def _grid2(domain):
    a, b = domain
    x = a + (b - a) * np.arange(GRID2_N) / GRID2_N
    return x, (b - a) / GRID2_N


def _sample(kernel, x):
    if callable(kernel):
        return np.asarray(kernel(x), dtype=float)
    k = np.asarray(kernel, dtype=float)
    if k.shape != x.shape:
        raise ValueError(
            f"kernel grid has {k.shape} samples, expected {x.shape}")
    return k


def _sample2(kernel, x):
    if callable(kernel):
        return np.asarray(kernel(x[:, None], x[None, :]), dtype=float)
    k = np.asarray(kernel, dtype=float)
    n = x.size
    if k.shape != (n, n):
        raise ValueError(
            f"two-point kernel grid has shape {k.shape}, expected {(n, n)}")
    return k


def _check_domain(model, theta):
    d1, d2 = model.domain, theta.basis.domain
    if abs(d1[0] - d2[0]) > 1e-12 or abs(d1[1] - d2[1]) > 1e-12:
        raise ValueError(
            f"test function domain {d2} does not match model domain {d1}")


class GCoefficients:
    """The scalar maps G_n(z) = E[b^n exp(izb)] for a coefficient law.

    Gaussian: G0 = exp(-z^2/2), G1 = iz exp(-z^2/2), G2 = (1-z^2) exp(-z^2/2).
    Uniform on [-sqrt(3), sqrt(3)]: trigonometric ratios with removable
    singularities at z = 0, evaluated by series for |z| < 1e-4.
    """

    def __init__(self, kind):
        if kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown coefficient law {kind!r}")
        self.kind = kind

    # the trigonometric forms lose up to 8 digits to cancellation near 0,
    # so the series region is wider than the strict 0/0 neighborhood
    _SMALL = 1e-2

    def G0(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "gaussian":
            return np.exp(-z * z / 2.0)
        small = np.abs(z) < self._SMALL
        zs = np.where(small, 1.0, z)
        out = np.sin(np.sqrt(3.0) * zs) / (np.sqrt(3.0) * zs)
        series = 1.0 - z * z / 2.0 + 3.0 * z ** 4 / 40.0 - 3.0 * z ** 6 / 560.0
        return np.where(small, series, out)

    def G1(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "gaussian":
            return 1j * z * np.exp(-z * z / 2.0)
        small = np.abs(z) < self._SMALL
        zs = np.where(small, 1.0, z)
        w = np.sqrt(3.0) * zs
        out = np.sin(w) / (np.sqrt(3.0) * zs * zs) - np.cos(w) / zs
        series = z - 0.3 * z ** 3 + 9.0 * z ** 5 / 280.0 - z ** 7 / 560.0
        return 1j * np.where(small, series, out)

    def G2(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "gaussian":
            return (1.0 - z * z) * np.exp(-z * z / 2.0)
        small = np.abs(z) < self._SMALL
        zs = np.where(small, 1.0, z)
        w = np.sqrt(3.0) * zs
        out = (2.0 * np.cos(w) / (zs * zs) + np.sqrt(3.0) * np.sin(w) / zs
               - 2.0 * np.sin(w) / (np.sqrt(3.0) * zs ** 3))
        series = (1.0 - 0.9 * z * z + 9.0 * z ** 4 / 56.0
                  - 117.0 * z ** 6 / 10080.0)
        return np.where(small, series, out)


class FunctionalModel:
    """A nonlinear functional with closed-form value and derivatives."""

    VARIANTS = ("linear", "quadratic", "sine", "hopf_gaussian",
                "hopf_uniform", "white_noise", "exp_neg_norm_sq",
                "custom_cylindrical")

    def __init__(self, variant, domain=(0.0, 2.0 * np.pi), **params):
        if variant not in self.VARIANTS:
            raise ValueError(f"unknown functional variant {variant!r}")
        self.variant = variant
        self.domain = (float(domain[0]), float(domain[1]))
        self.params = params

    # thin method wrappers over the module-level operations
    def evaluate(self, theta):
        return evaluate(self, theta)

    def functional_derivative(self, theta, order):
        return functional_derivative(self, theta, order)


def linear_model(K1, domain=(0.0, 2.0 * np.pi)):
    """F([theta]) = int K1(x) theta(x) dx."""
    x, w = _master(domain)
    return FunctionalModel("linear", domain, K1=_sample(K1, x), x=x, w=w)


def quadratic_model(K0, K1, H2, domain=(0.0, 2.0 * np.pi)):
    """F([theta]) = K0 + int K1 theta + int int H2(x,y) theta(x) theta(y).

    The two-point kernel is stored symmetrized; this leaves the functional
    unchanged.
    """
    x, w = _master(domain)
    x2, w2 = _grid2(domain)
    H = _sample2(H2, x2)
    K2 = 0.5 * (H + H.T)
    K1m = _sample(K1, x)
    # K1 restricted to the coarser two-point grid (stride divides exactly)
    if callable(K1):
        K1c = np.asarray(K1(x2), dtype=float)
    else:
        K1c = K1m[::MASTER_N // GRID2_N]
    return FunctionalModel("quadratic", domain, K0=float(K0), K1=K1m,
                           K1c=K1c, K2=K2, K2_fn=H2 if callable(H2) else None,
                           x=x, w=w, x2=x2, w2=w2)


def sine_model(K, domain=(0.0, 2.0 * np.pi)):
    """F([theta]) = sin(int K(x) theta(x) dx)."""
    x, w = _master(domain)
    return FunctionalModel("sine", domain, K=_sample(K, x), x=x, w=w)


def hopf_gaussian(q=None, C0=None, domain=(0.0, 2.0 * np.pi)):
    """Characteristic functional of a Gaussian random field.

    With integer q the field is the random Fourier sum with q sine and q
    cosine modes and iid N(0,1) coefficients, so the covariance is
    C0(x,y) = (1/q) sum_k [sin(kx)sin(ky) + cos(kx)cos(ky)] and the value
    is exp(-(1/2) sum_k (s_k^2 + c_k^2)). Alternatively pass an explicit
    covariance grid or callable C0(x,y).
    """
    if (q is None) == (C0 is None):
        raise ValueError("pass exactly one of q or C0")
    if q is not None:
        return FunctionalModel("hopf_gaussian", domain, q=int(q), C0=None)
    x2, w2 = _grid2(domain)
    return FunctionalModel("hopf_gaussian", domain, q=None,
                           C0=_sample2(C0, x2), x2=x2, w2=w2,
                           C0_fn=C0 if callable(C0) else None)


def hopf_uniform(q):
    """Characteristic functional of the uniform random Fourier field."""
    return FunctionalModel("hopf_uniform", (0.0, 2.0 * np.pi), q=int(q))


def white_noise(domain=(0.0, 2.0 * np.pi)):
    """Characteristic functional of Gaussian white noise: exp(-int theta^2/2).

    Value-only: both functional derivatives involve distributional kernels
    and are excluded.
    """
    return FunctionalModel("white_noise", domain)


def exp_neg_norm_sq(domain=(0.0, 2.0 * np.pi)):
    """F([theta]) = exp(-int theta^2 dx)."""
    return FunctionalModel("exp_neg_norm_sq", domain)


def custom_cylindrical(f, basis):
    """F([theta]) = f(a_1, ..., a_m) with a_k the projections onto a basis."""
    return FunctionalModel("custom_cylindrical", basis.domain, f=f,
                           basis=basis)


# -- built-in kernels --------------------------------------------------------

def kernel_K1(x):
    """Smooth periodic one-point kernel used by the benchmark functionals."""
    return np.exp(np.sin(x)) * (1.0 + np.sin(np.cos(x) - 2.0)) - 0.5


def kernel_H2(x, y):
    """Smooth periodic two-point kernel (not symmetric)."""
    return np.sin(np.cos(x) + np.sin(y)) * np.sin(y) + 0.5 * np.cos(np.cos(x))


def builtin_linear():
    return linear_model(kernel_K1)


def builtin_quadratic():
    return quadratic_model(5.0, kernel_K1, kernel_H2)


def hopf_basis(q):
    """Orthonormal Fourier basis {sin(kx), cos(kx)}_{k<=q}/sqrt(pi), m = 2q.

    The Hopf functionals of the random Fourier field are exactly rank one
    with respect to this basis.
    """
    coeffs = []
    for k in range(1, q + 1):
        coeffs.append((1, k))
        coeffs.append((2, k))
    m = 2 * q
    quad = _trapezoid_rule((0.0, 2.0 * np.pi), max(4 * m, 64))
    return Basis1D("fourier_modal", (0.0, 2.0 * np.pi), m, quad, coeffs)


# -- operations ---------------------------------------------------------------

def _theta_values(theta, x):
    return theta.evaluate(x)


def hopf_linear_coeffs(theta, q):
    """Projections s_k = (1/sqrt(q)) int theta sin(kx), c_k likewise with cos."""
    x, w = _master((0.0, 2.0 * np.pi))
    tv = _theta_values(theta, x)
    k = np.arange(1, q + 1)
    s = (np.sin(np.outer(k, x)) @ (w * tv)) / np.sqrt(q)
    c = (np.cos(np.outer(k, x)) @ (w * tv)) / np.sqrt(q)
    return s, c


def evaluate(model, theta):
    """Closed-form value of the functional at a test function."""
    _check_domain(model, theta)
    v = model.params
    if model.variant == "linear":
        tv = _theta_values(theta, v["x"])
        return float(v["w"] * np.sum(v["K1"] * tv))
    if model.variant == "quadratic":
        tv = _theta_values(theta, v["x"])
        lin = v["w"] * np.sum(v["K1"] * tv)
        tc = _theta_values(theta, v["x2"])
        quad = v["w2"] ** 2 * (tc @ v["K2"] @ tc)
        return float(v["K0"] + lin + quad)
    if model.variant == "sine":
        tv = _theta_values(theta, v["x"])
        return float(np.sin(v["w"] * np.sum(v["K"] * tv)))
    if model.variant == "hopf_gaussian":
        if v["q"] is not None:
            s, c = hopf_linear_coeffs(theta, v["q"])
            return float(np.exp(-0.5 * (np.sum(s * s) + np.sum(c * c))))
        tc = _theta_values(theta, v["x2"])
        return float(np.exp(-0.5 * v["w2"] ** 2 * (tc @ v["C0"] @ tc)))
    if model.variant == "hopf_uniform":
        g = GCoefficients("uniform")
        s, c = hopf_linear_coeffs(theta, v["q"])
        return float(np.prod(g.G0(s)) * np.prod(g.G0(c)))
    if model.variant == "white_noise":
        x, w = _master(model.domain)
        tv = _theta_values(theta, x)
        return float(np.exp(-0.5 * w * np.sum(tv * tv)))
    if model.variant == "exp_neg_norm_sq":
        x, w = _master(model.domain)
        tv = _theta_values(theta, x)
        return float(np.exp(-w * np.sum(tv * tv)))
    if model.variant == "custom_cylindrical":
        return float(v["f"](theta.coeffs_in(v["basis"])))
    raise ValueError(model.variant)


def evaluate_batch(model, nodes):
    """Vectorized evaluate over a NodeSet (same values as evaluate per node)."""
    theta0 = nodes.nodes[0]
    _check_domain(model, theta0)
    basis = nodes.basis
    A = nodes.coefficient_array()
    v = model.params
    if model.variant == "linear":
        V = basis.values_matrix(v["x"])
        return (A @ V) @ (v["w"] * v["K1"])
    if model.variant == "quadratic":
        V = basis.values_matrix(v["x"])
        lin = (A @ V) @ (v["w"] * v["K1"])
        Vc = basis.values_matrix(v["x2"])
        T = A @ Vc
        quad = v["w2"] ** 2 * np.einsum("ni,ij,nj->n", T, v["K2"], T,
                                        optimize=True)
        return v["K0"] + lin + quad
    if model.variant in ("hopf_gaussian", "hopf_uniform") and v.get("q"):
        q = v["q"]
        x, w = _master((0.0, 2.0 * np.pi))
        V = basis.values_matrix(x)
        k = np.arange(1, q + 1)
        S = (A @ V) @ (w * np.sin(np.outer(k, x)).T) / np.sqrt(q)
        C = (A @ V) @ (w * np.cos(np.outer(k, x)).T) / np.sqrt(q)
        if model.variant == "hopf_gaussian":
            return np.exp(-0.5 * (np.sum(S * S, axis=1) + np.sum(C * C, axis=1)))
        g = GCoefficients("uniform")
        return np.prod(g.G0(S), axis=1) * np.prod(g.G0(C), axis=1)
    return np.array([evaluate(model, nd) for nd in nodes])


def _cov_gaussian_q(q, x, y):
    kk = np.arange(1, q + 1)
    return (np.sin(np.outer(x, kk)) @ np.sin(np.outer(kk, y))
            + np.cos(np.outer(x, kk)) @ np.cos(np.outer(kk, y))) / q


def functional_derivative(model, theta, order):
    """First or second functional derivative as a grid function.

    Returns Kernel1(x, values) for order 1, Kernel2(x, y, values) for
    order 2. Variants without an analytic grid-function derivative raise
    NotImplementedError.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    _check_domain(model, theta)
    v = model.params
    if model.variant == "white_noise":
        raise NotImplementedError(
            "white noise is value-only: its functional derivatives involve "
            "distributional kernels")
    if model.variant == "custom_cylindrical":
        raise NotImplementedError(
            "custom cylindrical functionals carry no analytic derivative")
    if model.variant == "linear":
        x, _ = _master(model.domain)
        if order == 1:
            return Kernel1(x, v["K1"].copy())
        x2, _ = _grid2(model.domain)
        return Kernel2(x2, x2, np.zeros((x2.size, x2.size)))
    if model.variant == "quadratic":
        if order == 1:
            x = v["x"]
            tv = _theta_values(theta, v["x2"])
            if v["K2_fn"] is not None:
                Kxy = 0.5 * (v["K2_fn"](x[:, None], v["x2"][None, :])
                             + v["K2_fn"](v["x2"][None, :], x[:, None]))
                row = Kxy @ (v["w2"] * tv)
                return Kernel1(x, v["K1"] + 2.0 * row)
            row = v["K2"] @ (v["w2"] * tv)
            return Kernel1(v["x2"], v["K1c"] + 2.0 * row)
        return Kernel2(v["x2"], v["x2"], 2.0 * v["K2"].copy())
    if model.variant == "sine":
        x, w = _master(model.domain)
        tv = _theta_values(theta, x)
        z = w * np.sum(v["K"] * tv)
        if order == 1:
            return Kernel1(x, np.cos(z) * v["K"])
        x2, _ = _grid2(model.domain)
        stride = MASTER_N // GRID2_N
        Kc = v["K"][::stride]
        return Kernel2(x2, x2, -np.sin(z) * np.outer(Kc, Kc))
    if model.variant == "hopf_gaussian":
        return _hopf_gaussian_derivative(model, theta, order)
    if model.variant == "hopf_uniform":
        return _hopf_series_derivative(theta, v["q"], "uniform", order)
    if model.variant == "exp_neg_norm_sq":
        x, w = _master(model.domain)
        tv = _theta_values(theta, x)
        val = np.exp(-w * np.sum(tv * tv))
        if order == 1:
            return Kernel1(x, -2.0 * tv * val)
        # distributional part restricted to the test function's space:
        # -2 delta(x - y) projects to -2 sum_k phi_k(x) phi_k(y)
        x2, _ = _grid2(model.domain)
        V = theta.basis.values_matrix(x2)
        t2 = theta.a @ V
        ker = (4.0 * np.outer(t2, t2) - 2.0 * V.T @ V) * val
        return Kernel2(x2, x2, ker)
    raise ValueError(model.variant)


def _hopf_gaussian_derivative(model, theta, order):
    v = model.params
    if v["q"] is not None:
        q = v["q"]
        s, c = hopf_linear_coeffs(theta, q)
        val = float(np.exp(-0.5 * (np.sum(s * s) + np.sum(c * c))))
        x, _ = _master(model.domain)
        k = np.arange(1, q + 1)
        if order == 1:
            # r(x) = int C0(x, y) theta(y) dy
            r = (s @ np.sin(np.outer(k, x)) + c @ np.cos(np.outer(k, x))) \
                / np.sqrt(q)
            return Kernel1(x, -r * val)
        x2, _ = _grid2(model.domain)
        r2 = (s @ np.sin(np.outer(k, x2)) + c @ np.cos(np.outer(k, x2))) \
            / np.sqrt(q)
        C0 = _cov_gaussian_q(q, x2, x2)
        return Kernel2(x2, x2, (np.outer(r2, r2) - C0) * val)
    x2, w2 = v["x2"], v["w2"]
    tc = _theta_values(theta, x2)
    r = v["C0"] @ (w2 * tc)
    val = float(np.exp(-0.5 * w2 ** 2 * (tc @ v["C0"] @ tc)))
    if order == 1:
        return Kernel1(x2, -r * val)
    return Kernel2(x2, x2, (np.outer(r, r) - v["C0"]) * val)


def _hopf_series_derivative(theta, q, kind, order):
    """Derivatives of the product-form Hopf functional via the G maps."""
    if order == 2 and q > 10:
        raise NotImplementedError(
            "second derivative of the product-form Hopf functional is "
            "implemented for q <= 10 only (dense cross terms)")
    g = GCoefficients(kind)
    s, c = hopf_linear_coeffs(theta, q)
    G0s, G0c = g.G0(s), g.G0(c)
    G1s, G1c = g.G1(s), g.G1(c)
    Is, Ic = np.prod(G0s), np.prod(G0c)

    def leave_one_out(G0v, G1v):
        out = np.empty(q, dtype=complex)
        for k in range(q):
            out[k] = G1v[k] * np.prod(np.delete(G0v, k))
        return out

    Iks = leave_one_out(G0s, G1s)
    Ikc = leave_one_out(G0c, G1c)
    if order == 1:
        x, _ = _master((0.0, 2.0 * np.pi))
        k = np.arange(1, q + 1)
        SIN, COS = np.sin(np.outer(k, x)), np.cos(np.outer(k, x))
        vals = 1j / np.sqrt(q) * (Ic * (Iks @ SIN) + Is * (Ikc @ COS))
        assert np.abs(vals.imag).max() < 1e-12 * max(1.0, np.abs(vals).max())
        return Kernel1(x, vals.real)
    G2s, G2c = g.G2(s), g.G2(c)
    Jks = leave_one_out(G0s, G2s)
    Jkc = leave_one_out(G0c, G2c)
    x2, _ = _grid2((0.0, 2.0 * np.pi))
    k = np.arange(1, q + 1)
    SIN, COS = np.sin(np.outer(k, x2)), np.cos(np.outer(k, x2))
    ker = np.zeros((x2.size, x2.size), dtype=complex)
    # mixed sine/cosine terms: the double sum factorizes
    us, uc = Iks @ SIN, Ikc @ COS
    ker -= (np.outer(us, uc) + np.outer(uc, us)) / q
    # distinct-index same-kind terms
    Ms = np.zeros((q, q), dtype=complex)
    Mc = np.zeros((q, q), dtype=complex)
    for k1 in range(q):
        for k2 in range(q):
            if k1 == k2:
                continue
            Ms[k1, k2] = G1s[k1] * G1s[k2] * np.prod(np.delete(G0s, [k1, k2]))
            Mc[k1, k2] = G1c[k1] * G1c[k2] * np.prod(np.delete(G0c, [k1, k2]))
    ker -= Ic * (SIN.T @ Ms @ SIN) / q
    ker -= Is * (COS.T @ Mc @ COS) / q
    # coincident-index terms
    ker -= Ic * (SIN.T * Jks) @ SIN / q
    ker -= Is * (COS.T * Jkc) @ COS / q
    assert np.abs(ker.imag).max() < 1e-12 * max(1.0, np.abs(ker).max())
    return Kernel2(x2, x2, ker.real)


def symmetrize_kernel(H):
    """Average an n-argument kernel grid over all argument permutations."""
    H = np.asarray(H, dtype=float)
    if H.ndim == 2:
        return 0.5 * (H + H.T)
    if H.ndim == 3:
        return (H + H.transpose(0, 2, 1) + H.transpose(1, 0, 2)
                + H.transpose(1, 2, 0) + H.transpose(2, 0, 1)
                + H.transpose(2, 1, 0)) / 6.0
    raise ValueError("only two- and three-argument kernels are supported")


# -- kernel CSV interchange ---------------------------------------------------

def export_kernel_csv(kernel, path):
    """Write a Kernel1 as (x, value) rows or a Kernel2 as (x, y, value) rows."""
    with open(path, "w") as fh:
        if isinstance(kernel, Kernel1):
            fh.write("x,value\n")
            for xi, vi in zip(kernel.x, kernel.values):
                fh.write(f"{xi:.17g},{vi:.17g}\n")
            return
        fh.write("x,y,value\n")
        for i, xi in enumerate(kernel.x):
            for j, yj in enumerate(kernel.y):
                fh.write(f"{xi:.17g},{yj:.17g},{kernel.values[i, j]:.17g}\n")


def import_kernel_csv(path):
    """Read back a kernel written by export_kernel_csv."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] == 2:
        return Kernel1(data[:, 0], data[:, 1])
    if data.shape[1] != 3:
        raise ValueError("expected 2 or 3 columns")
    x = np.unique(data[:, 0])
    y = np.unique(data[:, 1])
    vals = data[:, 2].reshape(x.size, y.size)
    return Kernel2(x, y, vals)
