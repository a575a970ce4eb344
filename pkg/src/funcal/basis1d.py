"""One-dimensional orthonormal bases on an interval.

This module builds the finite-dimensional function spaces everything else
restricts to: Fourier modal and nodal trigonometric bases on a periodic
interval, normalized Legendre polynomials, and the polynomial basis obtained
by orthonormalizing x*T_k(x/pi - 1) on [0, 2*pi] (functions vanishing at the
left endpoint). Each basis carries its own quadrature rule, exact for
products of basis elements, plus evaluation and differentiation of every
element. The advection matrix C_jk = int phi_k phi_j' dx drives the
functional transport problems in :mod:`funcal.fde`.
"""
import json

import numpy as np

MASTER_GRID_SIZE = 4096

_PERIODIC_KINDS = ("fourier_modal", "trig_nodal")
_POLY_KINDS = ("legendre", "poly_bc0")
_KINDS = _PERIODIC_KINDS + _POLY_KINDS + ("custom",)


class Basis1D:
    """An m-element orthonormal function system on an interval.

    Parameters
    ----------
    kind : str
        One of ``fourier_modal``, ``trig_nodal``, ``legendre``, ``poly_bc0``,
        ``custom``.
    domain : tuple of float
        Interval endpoints (a, b).
    m : int
        Number of basis elements.
    quadrature : (nodes, weights)
        Rule under which the Gram matrix is the identity.
    coefficients : ndarray
        Per-kind coefficient table: Fourier mode descriptors, nodal centers,
        or polynomial (Chebyshev-series) coefficients. For ``custom``,
        values on the master grid.
    """

    def __init__(self, kind, domain, m, quadrature, coefficients):
        if kind not in _KINDS:
            raise ValueError(f"unsupported basis kind {kind!r}")
        self.kind = kind
        self.domain = (float(domain[0]), float(domain[1]))
        self.m = int(m)
        self.quad_nodes = np.asarray(quadrature[0], dtype=float)
        self.quad_weights = np.asarray(quadrature[1], dtype=float)
        self.coefficients = coefficients
        self._master_x = master_grid(self.domain, periodic=self.is_periodic)
        self._quad_values = None
        self._quad_dvalues = None

    @property
    def is_periodic(self):
        return self.kind in _PERIODIC_KINDS

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, k, x):
        """Value of basis element phi_k at points x."""
        x = np.asarray(x, dtype=float)
        return _eval_element(self, k, x, derivative=False)

    def derivative(self, k, x):
        """Value of d(phi_k)/dx at points x."""
        x = np.asarray(x, dtype=float)
        return _eval_element(self, k, x, derivative=True)

    def values_matrix(self, x=None):
        """Matrix V[k, i] = phi_k(x_i); defaults to the quadrature grid."""
        if x is None:
            if self._quad_values is None:
                self._quad_values = np.array(
                    [self.evaluate(k, self.quad_nodes) for k in range(self.m)])
            return self._quad_values
        x = np.asarray(x, dtype=float)
        return np.array([self.evaluate(k, x) for k in range(self.m)])

    def derivative_matrix(self, x=None):
        """Matrix V'[k, i] = phi_k'(x_i); defaults to the quadrature grid."""
        if x is None:
            if self._quad_dvalues is None:
                self._quad_dvalues = np.array(
                    [self.derivative(k, self.quad_nodes) for k in range(self.m)])
            return self._quad_dvalues
        x = np.asarray(x, dtype=float)
        return np.array([self.derivative(k, x) for k in range(self.m)])

    def inner(self, f_values, g_values):
        """Quadrature inner product of two functions sampled on the rule."""
        return float(np.sum(self.quad_weights * f_values * g_values))

    def gram(self):
        """Gram matrix under the stored quadrature."""
        V = self.values_matrix()
        return V @ (self.quad_weights[:, None] * V.T)

    @property
    def master_x(self):
        return self._master_x

    # -- serialization ------------------------------------------------------

    def to_json(self):
        """JSON document {kind, domain, m, coefficients}."""
        if self.kind == "custom":
            coeff = np.asarray(self.coefficients).tolist()
        elif self.kind in _POLY_KINDS:
            coeff = [np.asarray(c).tolist() for c in self.coefficients]
        else:
            coeff = np.asarray(self.coefficients).tolist()
        return json.dumps({"kind": self.kind, "domain": list(self.domain),
                           "m": self.m, "coefficients": coeff})

    @classmethod
    def from_json(cls, doc):
        d = json.loads(doc)
        kind, domain, m = d["kind"], tuple(d["domain"]), d["m"]
        if kind == "custom":
            values = np.asarray(d["coefficients"], dtype=float)
            return _custom_from_master(values, domain)
        if kind in _POLY_KINDS:
            coeff = [np.asarray(c, dtype=float) for c in d["coefficients"]]
            quad = _poly_quadrature(domain, m)
            return cls(kind, domain, m, quad, coeff)
        quad = _trapezoid_rule(domain, max(4 * m, 64))
        if kind == "fourier_modal":
            coeff = [tuple(c) for c in d["coefficients"]]
        else:
            coeff = np.asarray(d["coefficients"], dtype=float)
        return cls(kind, domain, m, quad, coeff)


def master_grid(domain, periodic):
    a, b = domain
    if periodic:
        return a + (b - a) * np.arange(MASTER_GRID_SIZE) / MASTER_GRID_SIZE
    return np.linspace(a, b, MASTER_GRID_SIZE)


def _trapezoid_rule(domain, n):
    a, b = domain
    nodes = a + (b - a) * np.arange(n) / n
    weights = np.full(n, (b - a) / n)
    return nodes, weights


def _poly_quadrature(domain, m):
    a, b = domain
    n = 2 * m + 8
    xg, wg = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * (xg + 1.0) + a, 0.5 * (b - a) * wg


def _eval_element(basis, k, x, derivative):
    kind = basis.kind
    if kind == "fourier_modal":
        mode, freq = basis.coefficients[k]
        L = basis.domain[1] - basis.domain[0]
        w = 2.0 * np.pi / L
        if mode == 0:  # constant
            return (np.zeros_like(x) if derivative
                    else np.full_like(x, 1.0 / np.sqrt(L)))
        scale = np.sqrt(2.0 / L)
        ph = freq * w * (x - basis.domain[0])
        if mode == 1:  # sine
            return (scale * freq * w * np.cos(ph) if derivative
                    else scale * np.sin(ph))
        return (-scale * freq * w * np.sin(ph) if derivative
                else scale * np.cos(ph))
    if kind == "trig_nodal":
        return _nodal_trig(basis, k, x, derivative)
    if kind in _POLY_KINDS:
        series = np.polynomial.Chebyshev(basis.coefficients[k],
                                         domain=list(basis.domain))
        if derivative:
            series = series.deriv()
        return series(x)
    # custom: local barycentric interpolation on the master grid
    values = basis.coefficients[k]
    if derivative:
        return _local_interp(basis._master_x, values, x, basis.is_periodic,
                             derivative=True)
    return _local_interp(basis._master_x, values, x, basis.is_periodic,
                         derivative=False)


def _nodal_trig(basis, k, x, derivative):
    # phi_{k}(x) = (1/n) sin(n (x - x_k)/2) / sin((x - x_k)/2), n = m (odd),
    # normalized by sqrt((b - a)/n) to be orthonormal.
    n = basis.m
    xk = basis.coefficients[k]
    L = basis.domain[1] - basis.domain[0]
    norm = 1.0 / np.sqrt(L / n)
    u = np.pi * (x - xk) / L  # half-angle in rescaled coordinates
    scalar = np.isscalar(u)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    # wrap to the principal branch so the removable singularity is at u = 0
    u = np.remainder(u + np.pi / 2, np.pi) - np.pi / 2
    small = np.abs(u) < 1e-9
    us = np.where(small, 1.0, u)
    if not derivative:
        out = np.sin(n * us) / (n * np.sin(us))
        out = np.where(small, 1.0 - (n * n - 1.0) * u * u / 6.0, out)
        out *= norm
    else:
        s, c = np.sin(us), np.cos(us)
        out = (n * np.cos(n * us) * s - np.sin(n * us) * c) / (n * s * s)
        out = np.where(small, -(n * n - 1.0) * u / 3.0, out)
        out *= norm * np.pi / L  # chain rule du/dx
    return out[0] if scalar else out


def _local_interp(grid, values, x, periodic, derivative, width=8):
    """Barycentric interpolation on a sliding stencil of the master grid."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = grid.size
    h = grid[1] - grid[0]
    a = grid[0]
    out = np.empty_like(x)
    # barycentric weights of an equispaced stencil of size `width`
    jj = np.arange(width)
    from scipy.special import comb
    bw = (-1.0) ** jj * comb(width - 1, jj)
    for i, xi in enumerate(x):
        pos = (xi - a) / h
        j0 = int(np.floor(pos)) - width // 2 + 1
        if periodic:
            idx = np.arange(j0, j0 + width) % n
            xs = a + h * np.arange(j0, j0 + width)
        else:
            j0 = min(max(j0, 0), n - width)
            idx = np.arange(j0, j0 + width)
            xs = grid[idx]
        ys = values[idx]
        d = xi - xs
        exact = np.abs(d) < 1e-14
        if exact.any() and not derivative:
            out[i] = ys[np.argmax(exact)]
            continue
        if derivative:
            # differentiate the barycentric form via a fine symmetric step
            eps = h / 64.0
            fp = _bary_point(xs, ys, bw, xi + eps)
            fm = _bary_point(xs, ys, bw, xi - eps)
            out[i] = (fp - fm) / (2.0 * eps)
        else:
            out[i] = _bary_point(xs, ys, bw, xi)
    return out


def _bary_point(xs, ys, bw, xi):
    d = xi - xs
    near = np.abs(d) < 1e-14
    if near.any():
        return ys[np.argmax(near)]
    w = bw / d
    return np.sum(w * ys) / np.sum(w)


def build_basis(kind, m, domain=None):
    """Construct an orthonormal basis of the requested kind.

    For ``trig_nodal`` the argument m is the even parameter of the nodal
    construction and the basis has m + 1 elements; all other kinds produce
    exactly m elements.
    """
    if kind not in _KINDS or kind == "custom":
        raise ValueError(f"unsupported basis kind {kind!r}")
    if m < 1:
        raise ValueError("m must be a positive integer")
    if domain is None:
        domain = (0.0, 2.0 * np.pi) if kind in _PERIODIC_KINDS + ("poly_bc0",) \
            else (-1.0, 1.0)
    a, b = float(domain[0]), float(domain[1])
    if kind == "fourier_modal":
        # constant, then interleaved sine/cosine pairs of increasing frequency
        coeffs = [(0, 0)]
        freq = 1
        while len(coeffs) < m:
            coeffs.append((1, freq))
            if len(coeffs) < m:
                coeffs.append((2, freq))
            freq += 1
        quad = _trapezoid_rule((a, b), max(4 * m, 64))
        return Basis1D(kind, (a, b), m, quad, coeffs)
    if kind == "trig_nodal":
        if m % 2 != 0:
            raise ValueError("trig_nodal requires an even parameter m")
        n = m + 1
        centers = a + (b - a) * np.arange(n) / n
        quad = _trapezoid_rule((a, b), max(4 * n, 64))
        return Basis1D(kind, (a, b), n, quad, centers)
    if kind == "legendre":
        quad = _poly_quadrature((a, b), m)
        coeffs = []
        for k in range(m):
            # normalized Legendre on [a,b]: sqrt((2k+1)/(b-a)) P_k(mapped x)
            ck = np.zeros(k + 1)
            ck[k] = 1.0
            cheb = np.polynomial.Chebyshev(
                np.polynomial.chebyshev.poly2cheb(
                    np.polynomial.legendre.leg2poly(ck)), domain=[a, b])
            coeffs.append(np.sqrt((2 * k + 1) / (b - a)) * cheb.coef)
        return Basis1D(kind, (a, b), m, quad, coeffs)
    if kind == "poly_bc0":
        quad = _poly_quadrature((a, b), m + 1)
        half = 0.5 * (b - a)
        raws = []
        for k in range(m):
            tk = np.polynomial.Chebyshev.basis(k, domain=[a, b])
            xf = np.polynomial.Chebyshev(np.array([a + half, half]),
                                         domain=[a, b])
            raws.append((xf * tk).coef)
        coeffs = _chebyshev_gram_schmidt(raws, (a, b), quad)
        return Basis1D(kind, (a, b), m, quad, coeffs)
    raise ValueError(f"unsupported basis kind {kind!r}")


def _chebyshev_gram_schmidt(raw_coeffs, domain, quad, pivot_tol=1e-12):
    """Modified Gram-Schmidt on Chebyshev series, re-orthogonalized once."""
    xq, wq = quad
    out = []
    out_vals = []
    scale0 = None
    for c in raw_coeffs:
        series = np.polynomial.Chebyshev(np.asarray(c, float), domain=list(domain))
        vals = series(xq)
        coef = series.coef.copy()
        nrm0 = np.sqrt(np.sum(wq * vals * vals))
        if scale0 is None:
            scale0 = nrm0 if nrm0 > 0 else 1.0
        for _ in range(2):
            for oc, ov in zip(out, out_vals):
                proj = np.sum(wq * vals * ov)
                ncoef = np.zeros(max(coef.size, oc.size))
                ncoef[:coef.size] += coef
                ncoef[:oc.size] -= proj * oc
                coef = ncoef
                vals = vals - proj * ov
        nrm = np.sqrt(np.sum(wq * vals * vals))
        if nrm < pivot_tol * scale0:
            raise np.linalg.LinAlgError(
                "rank deficiency in Gram-Schmidt: pivot norm "
                f"{nrm:.3e} below threshold")
        # positive leading-coefficient sign convention
        lead = coef[np.max(np.nonzero(np.abs(coef) > 1e-13 * nrm))] \
            if np.any(np.abs(coef) > 1e-13 * nrm) else 1.0
        sgn = 1.0 if lead > 0 else -1.0
        out.append(sgn * coef / nrm)
        out_vals.append(sgn * vals / nrm)
    return out


def gram_schmidt(raw_functions, inner_product=None, domain=(0.0, 2.0 * np.pi),
                 n_quad=None):
    """Orthonormalize callables into a custom Basis1D.

    Parameters
    ----------
    raw_functions : sequence of callables
        Functions of x, linearly independent on the quadrature grid.
    inner_product : callable, optional
        (f_values, g_values, weights) -> float. Defaults to the weighted
        L2 product on the quadrature grid.
    domain : tuple
        Interval endpoints.
    n_quad : int, optional
        Override the quadrature size.

    Returns
    -------
    Basis1D of kind ``custom`` sampled on the master grid.
    """
    m = len(raw_functions)
    if m == 0:
        raise ValueError("need at least one raw function")
    n = n_quad or max(4 * m + 16, 64)
    xg, wg = np.polynomial.legendre.leggauss(n)
    a, b = domain
    xq = 0.5 * (b - a) * (xg + 1.0) + a
    wq = 0.5 * (b - a) * wg
    if inner_product is None:
        def inner_product(fv, gv, w):
            return float(np.sum(w * fv * gv))
    xm = master_grid(domain, periodic=False)
    vals_q = [np.asarray(f(xq), dtype=float) for f in raw_functions]
    vals_m = [np.asarray(f(xm), dtype=float) for f in raw_functions]
    out_q, out_m = [], []
    scale0 = None
    for vq, vm in zip(vals_q, vals_m):
        nrm0 = np.sqrt(max(inner_product(vq, vq, wq), 0.0))
        if scale0 is None:
            scale0 = nrm0 if nrm0 > 0 else 1.0
        for _ in range(2):
            for oq, om in zip(out_q, out_m):
                proj = inner_product(vq, oq, wq)
                vq = vq - proj * oq
                vm = vm - proj * om
        nrm = np.sqrt(max(inner_product(vq, vq, wq), 0.0))
        if nrm < 1e-12 * scale0:
            raise np.linalg.LinAlgError(
                "rank deficiency in Gram-Schmidt: pivot norm "
                f"{nrm:.3e} below threshold")
        out_q.append(vq / nrm)
        out_m.append(vm / nrm)
    basis = Basis1D("custom", domain, m, (xq, wq), np.array(out_m))
    return basis


def _custom_from_master(values, domain):
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    n = max(4 * m + 16, 64)
    xg, wg = np.polynomial.legendre.leggauss(n)
    a, b = domain
    xq = 0.5 * (b - a) * (xg + 1.0) + a
    wq = 0.5 * (b - a) * wg
    return Basis1D("custom", domain, m, (xq, wq), values)


class MatrixC:
    """Advection matrix C_jk = int phi_k phi_j' dx with its basis."""

    def __init__(self, entries, basis):
        self.entries = np.asarray(entries, dtype=float)
        self.basis = basis

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.entries.astype(dtype)
        return self.entries

    @property
    def shape(self):
        return self.entries.shape


def advection_matrix(basis):
    """Assemble C_jk = int phi_k phi_j' dx under the basis quadrature."""
    V = basis.values_matrix()
    dV = basis.derivative_matrix()
    C = dV @ (basis.quad_weights[:, None] * V.T)
    return MatrixC(C, basis)


def project(sampled_function, basis):
    """Coefficients a_k = (f, phi_k) of a function against the basis.

    The function may be a callable or an array of values on the basis
    quadrature nodes.
    """
    if callable(sampled_function):
        fv = np.asarray(sampled_function(basis.quad_nodes), dtype=float)
    else:
        fv = np.asarray(sampled_function, dtype=float)
        if fv.shape != basis.quad_nodes.shape:
            raise ValueError("sampled values must match the quadrature grid")
    V = basis.values_matrix()
    return V @ (basis.quad_weights * fv)


def matrix_exponential(C, t=1.0):
    """exp(-t*C) by eigendecomposition when C is normal, Pade otherwise."""
    C = np.asarray(C, dtype=float)
    if np.allclose(C @ C.T, C.T @ C, atol=1e-12 * max(1.0, np.abs(C).max()) ** 2):
        w, U = np.linalg.eig(C)
        Z = (U * np.exp(-t * w)) @ np.linalg.inv(U)
        if np.abs(Z.imag).max() < 1e-10 * max(1.0, np.abs(Z.real).max()):
            return Z.real
        return Z
    from scipy.linalg import expm
    return expm(-t * C)
