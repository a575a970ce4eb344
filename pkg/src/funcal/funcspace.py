"""Test functions and interpolation-node sets in function space.

A test function is a coefficient vector against a fixed basis. Node sets
are the function-space analogue of interpolation grids: the multiset sums
S-hat_q built from unit basis coefficients, Smolyak sparse grids embedded
on coordinate subsets, and seeded Gaussian ensembles used as evaluation
clouds for convergence studies.
"""
import io
import itertools
import math

import numpy as np

from .basis1d import Basis1D

_RNG_NAME = "numpy.random.PCG64"


class TestFunction:
    """Element of the span of a basis: theta(x) = sum_k a_k phi_k(x)."""

    def __init__(self, basis, a):
        a = np.asarray(a, dtype=float)
        if a.shape != (basis.m,):
            raise ValueError(
                f"coefficient vector length {a.shape} does not match basis "
                f"size {basis.m}")
        self.basis = basis
        self.a = a

    def evaluate(self, x):
        return self.a @ self.basis.values_matrix(np.asarray(x, dtype=float))

    def values_on_quadrature(self):
        return self.a @ self.basis.values_matrix()

    def coeffs_in(self, other_basis):
        """Coefficients of the projection of this function onto another basis."""
        if other_basis is self.basis:
            return self.a.copy()
        fv = self.evaluate(other_basis.quad_nodes)
        V = other_basis.values_matrix()
        return V @ (other_basis.quad_weights * fv)

    def __repr__(self):
        return f"TestFunction(m={self.basis.m}, kind={self.basis.kind})"


def inner_product(f, g):
    """L2 inner product of two test functions.

    Orthonormal coefficients are used directly when the functions share a
    basis; otherwise quadrature on the finer of the two rules, so that a
    coarse rule never aliases the other function's high modes.
    """
    if f.basis is g.basis:
        return float(f.a @ g.a)
    rule = f.basis if f.basis.quad_nodes.size >= g.basis.quad_nodes.size \
        else g.basis
    xq, wq = rule.quad_nodes, rule.quad_weights
    return float(np.sum(wq * f.evaluate(xq) * g.evaluate(xq)))


class NodeSet:
    """A finite family of test functions sharing one basis."""

    KINDS = ("shat_q", "sparse_q", "gaussian_ensemble", "custom")

    def __init__(self, nodes, kind, parameters=None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown node-set kind {kind!r}")
        nodes = list(nodes)
        if not nodes:
            raise ValueError("node set must be non-empty")
        basis = nodes[0].basis
        for nd in nodes:
            if nd.basis is not basis:
                raise ValueError("all nodes must share one basis")
        self.nodes = tuple(nodes)
        self.kind = kind
        self.parameters = dict(parameters or {})
        self.basis = basis

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def coefficient_array(self):
        """All coefficient vectors stacked into an (n, m) array."""
        return np.array([nd.a for nd in self.nodes])

    def to_csv(self, path=None):
        """One row per node, m coefficient columns, header naming the basis kind."""
        buf = io.StringIO()
        meta = ", ".join(f"{k}={v}" for k, v in sorted(self.parameters.items()))
        buf.write(f"# node_kind={self.kind}" + (f", {meta}" if meta else "") + "\n")
        m = self.basis.m
        buf.write(",".join(f"{self.basis.kind}:a{k}" for k in range(m)) + "\n")
        for nd in self.nodes:
            buf.write(",".join(f"{v:.17g}" for v in nd.a) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def shat_cardinality(m, q):
    """Number of multiset sums of at most q basis elements out of m."""
    if m < 1 or q < 0:
        raise ValueError("require m >= 1 and q >= 0")
    return sum(math.comb(j + m - 1, j) for j in range(q + 1))


def shat_nodes(basis, q):
    """All sums of up to q basis elements (with repetition), zero included.

    Nodes are ordered by multiset size, then lexicographically by index
    tuple, so the zero function comes first, then the singletons in
    ascending order, then the pair sums with i <= j, and so on.
    """
    m = basis.m
    if q > m:
        raise ValueError(f"q={q} exceeds basis size m={m}")
    if q < 0:
        raise ValueError("q must be nonnegative")
    nodes = []
    for j in range(q + 1):
        for combo in itertools.combinations_with_replacement(range(m), j):
            a = np.zeros(m)
            for idx in combo:
                a[idx] += 1.0
            nodes.append(TestFunction(basis, a))
    expected = shat_cardinality(m, q)
    assert len(nodes) == expected
    return NodeSet(nodes, "shat_q", {"q": q})


def _gauss_hermite_1d(n):
    if n == 1:
        return np.zeros(1)
    x, _ = np.polynomial.hermite_e.hermegauss(n)
    return x


def _clenshaw_curtis_1d(n):
    if n == 1:
        return np.zeros(1)
    return np.cos(np.pi * np.arange(n) / (n - 1))[::-1].copy()


def _points_per_level(level, rule, growth):
    if rule == "clenshaw_curtis":
        return 1 if level == 1 else 2 ** (level - 1) + 1
    if growth == "linear":
        return level
    return 2 ** level - 1


def sparse_nodes(basis, q, level, rule="gauss_hermite", growth="linear"):
    """Smolyak sparse grid in q coefficient directions, embedded on all
    q-subsets of the basis.

    The union is over tensor grids whose multi-index has a nonzero Smolyak
    combination coefficient, level <= |l| <= level + q - 1. With the
    default linear growth the one-dimensional Gauss-Hermite rule at level
    l has l points; growth="exponential" switches to 2^l - 1.
    """
    if rule not in ("gauss_hermite", "clenshaw_curtis"):
        raise ValueError(f"unknown sparse rule {rule!r}")
    if level < 1:
        raise ValueError("level must be at least 1")
    if q < 1 or q > basis.m:
        raise ValueError("require 1 <= q <= basis.m")
    one_d = (_gauss_hermite_1d if rule == "gauss_hermite"
             else _clenshaw_curtis_1d)
    grids = {}

    def grid(l):
        if l not in grids:
            grids[l] = one_d(_points_per_level(l, rule, growth))
        return grids[l]

    # union of tensor grids with nonzero combination coefficient
    points = set()
    for ell in itertools.product(range(1, level + q), repeat=q):
        s = sum(ell)
        if not (level <= s <= level + q - 1):
            continue
        for pt in itertools.product(*(grid(l) for l in ell)):
            points.add(tuple(round(v / 1e-12) for v in pt))
    points = sorted(points)
    m = basis.m
    seen = set()
    nodes = []
    for subset in itertools.combinations(range(m), q):
        for key in points:
            a = np.zeros(m)
            for d, kv in zip(subset, key):
                a[d] = kv * 1e-12
            full_key = tuple(round(v / 1e-12) for v in a)
            if full_key in seen:
                continue
            seen.add(full_key)
            nodes.append(TestFunction(basis, a))
    # deterministic order: zero first, then by support size, then lexicographic
    def sort_key(nd):
        nz = np.nonzero(np.abs(nd.a) > 1e-13)[0]
        return (len(nz), tuple(nz), tuple(np.round(nd.a, 12)))

    nodes.sort(key=sort_key)
    return NodeSet(nodes, "sparse_q",
                   {"q": q, "level": level, "rule": rule, "growth": growth})


def gaussian_ensemble(basis, q, sigma, count, seed):
    """count draws of theta = sigma * sum_{k=1}^{q+1} b_k phi_k, b_k iid N(0,1)."""
    if q + 1 > basis.m:
        raise ValueError(f"q+1={q + 1} exceeds basis size m={basis.m}")
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    coeffs = np.zeros((count, basis.m))
    # one stream per coefficient direction keeps draws independent of count
    # batching
    coeffs[:, :q + 1] = sigma * rng.standard_normal((q + 1, count)).T
    nodes = [TestFunction(basis, c) for c in coeffs]
    params = {"q": q, "sigma": sigma, "count": count, "seed": seed,
              "rng": f"{_RNG_NAME} (numpy {np.__version__})"}
    return NodeSet(nodes, "gaussian_ensemble", params)
