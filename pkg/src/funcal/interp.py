"""Interpolation of nonlinear functionals on Hilbert spaces of test functions.

Four interpolation families are provided.

* Porter interpolants: minimal-norm polynomial functionals built from the
  Gram-power matrix H_ij = sum_{p in I} (theta_i, theta_j)^p over a set of
  monomial orders I.  The cardinal basis is g_k = sum_j Hinv_jk sum_p
  (theta_j, theta)^p, with closed-form functional derivatives and a
  blockwise Schur-complement assembly path for large node sets.
* Prenter interpolants: Lagrange-style cardinal products of normalized
  inner products (theta - theta_j, theta_i - theta_j), with closed-form
  first and second functional derivatives.
* Kernel interpolants: barycentric cardinal bases driven by a node
  distance kernel, including the inverse-distance (Shepard) variant whose
  values stay inside the convex hull of the data.
* Khlobystov extraction: closed-form recovery of the coefficients of a
  quadratic polynomial functional from its values at sums of orthogonal
  basis elements, plus the general inclusion-exclusion moment formula.

Greedy node selection over finite candidate sets supports an
energy-minimizing criterion (Riesz kernels) and a Lebesgue-style
criterion built on the Porter cardinal basis.
"""

import itertools
import json
import math
from collections.abc import Mapping

import numpy as np
import scipy.linalg

from .basis1d import Basis1D, build_basis
from .funcspace import (NodeSet, TestFunction, gaussian_ensemble,
                        inner_product, shat_nodes)
from .functionals import (Kernel1, Kernel2, _grid2, _master, builtin_linear,
                          builtin_quadratic, evaluate_batch)

# Relative singular-value cutoff used for numerical rank decisions and for
# Moore-Penrose pseudoinverses throughout the module.
PINV_CUTOFF = 1e-10

# Default number of nodes per block in the recursive Porter assembly.
DEFAULT_BLOCK_SIZE = 64

KAPPA_KINDS = ("norm_power", "riesz", "gauss_exp", "prenter_kernel",
               "porter_poly")


class IndexSet:
    """Sorted set of non-negative monomial orders for Porter interpolants."""

    def __init__(self, orders):
        if isinstance(orders, IndexSet):
            self.orders = orders.orders
            return
        if isinstance(orders, (int, np.integer)):
            orders = (orders,)
        orders = tuple(sorted({int(p) for p in orders}))
        if not orders:
            raise ValueError("index set must contain at least one order")
        if orders[0] < 0:
            raise ValueError("monomial orders must be non-negative")
        self.orders = orders

    def __iter__(self):
        return iter(self.orders)

    def __len__(self):
        return len(self.orders)

    def __contains__(self, p):
        return p in self.orders

    def __eq__(self, other):
        if isinstance(other, IndexSet):
            return self.orders == other.orders
        try:
            return self.orders == IndexSet(other).orders
        except (TypeError, ValueError):
            return NotImplemented

    def __hash__(self):
        return hash(self.orders)

    def max(self):
        return self.orders[-1]

    def __repr__(self):
        return f"IndexSet({list(self.orders)})"


# -- node-set helpers --------------------------------------------------------


def _node_list(nodes):
    """Normalize a NodeSet, a TestFunction, or a sequence into a list."""
    if nodes is None:
        return []
    if isinstance(nodes, NodeSet):
        return list(nodes.nodes)
    if isinstance(nodes, TestFunction):
        return [nodes]
    return list(nodes)


def _shared_basis(theta):
    """The common basis object of a list of test functions, or None."""
    if not theta:
        return None
    basis = theta[0].basis
    for nd in theta[1:]:
        if nd.basis is not basis:
            return None
    return basis


def _finer_rule(basis_a, basis_b):
    return basis_a if basis_a.quad_nodes.size >= basis_b.quad_nodes.size \
        else basis_b


def _grid_values(theta, basis_rule):
    """Stack theta_i sampled on the quadrature grid of basis_rule."""
    shared = _shared_basis(theta)
    xq = basis_rule.quad_nodes
    if shared is not None:
        if shared is basis_rule:
            V = shared.values_matrix()
        else:
            V = shared.values_matrix(xq)
        return np.array([nd.a for nd in theta]) @ V
    return np.array([nd.evaluate(xq) for nd in theta])


def _inner_matrix(fa, fb):
    """Matrix of inner products (fa_i, fb_j) between two function lists."""
    ba, bb = _shared_basis(fa), _shared_basis(fb)
    if ba is not None and ba is bb:
        A = np.array([nd.a for nd in fa])
        B = np.array([nd.a for nd in fb])
        return A @ B.T
    if ba is not None and bb is not None:
        rule = _finer_rule(ba, bb)
        Va = _grid_values(fa, rule)
        Vb = _grid_values(fb, rule)
        return Va @ (rule.quad_weights[:, None] * Vb.T)
    return np.array([[inner_product(f, g) for g in fb] for f in fa])


def _sqdist_matrix(fa, fb):
    """Squared L2 distances ||fa_i - fb_j||^2, computed in difference form.

    The difference form (subtract first, then square) avoids the
    cancellation of the expanded form, so exact coincidences come out as
    zeros at machine precision.
    """
    ba, bb = _shared_basis(fa), _shared_basis(fb)
    if ba is not None and ba is bb:
        A = np.array([nd.a for nd in fa])
        B = np.array([nd.a for nd in fb])
        diff = A[:, None, :] - B[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    if ba is not None and bb is not None:
        rule = _finer_rule(ba, bb)
        Va = _grid_values(fa, rule)
        Vb = _grid_values(fb, rule)
        out = np.empty((len(fa), len(fb)))
        w = rule.quad_weights
        for i in range(len(fa)):
            diff = Va[i][None, :] - Vb
            out[i] = (w * diff * diff).sum(axis=1)
        return out
    out = np.empty((len(fa), len(fb)))
    for i, f in enumerate(fa):
        for j, g in enumerate(fb):
            rule = _finer_rule(f.basis, g.basis)
            xq, w = rule.quad_nodes, rule.quad_weights
            diff = f.evaluate(xq) - g.evaluate(xq)
            out[i, j] = float(np.sum(w * diff * diff))
    return out


def _powers_sum(S, index_set):
    """Elementwise sum_p S**p over the orders of an index set."""
    out = np.zeros_like(np.asarray(S, dtype=float))
    for p in index_set:
        if p == 0:
            out += 1.0
        else:
            out += S ** p
    return out


def _norm1(M):
    return float(np.max(np.sum(np.abs(M), axis=0)))


def _invert(H):
    """Inverse via Cholesky when positive definite, else pivoted LU."""
    n = H.shape[0]
    eye = np.eye(n)
    try:
        c, low = scipy.linalg.cho_factor(H, check_finite=False)
        return scipy.linalg.cho_solve((c, low), eye, check_finite=False)
    except np.linalg.LinAlgError:
        lu, piv = scipy.linalg.lu_factor(H, check_finite=False)
        return scipy.linalg.lu_solve((lu, piv), eye, check_finite=False)


# -- Porter interpolants -----------------------------------------------------


def porter_h_matrix(nodes, index_set):
    """Gram-power matrix H_ij = sum_{p in I} (theta_i, theta_j)^p.

    Returns (H, diagnostics).  The diagnostics dict reports the numerical
    rank (singular values above the largest one times 1e-10) and a 2-norm
    condition estimate; rank deficiency is reported, never raised.
    """
    theta = _node_list(nodes)
    if not theta:
        raise ValueError("at least one interpolation node is required")
    index_set = IndexSet(index_set)
    G = _inner_matrix(theta, theta)
    H = _powers_sum(G, index_set)
    H = 0.5 * (H + H.T)
    s = np.linalg.svd(H, compute_uv=False)
    if s[0] <= 0.0:
        rank, cond = 0, np.inf
    else:
        rank = int(np.sum(s > s[0] * PINV_CUTOFF))
        cond = float(s[0] / s[-1]) if s[-1] > 0.0 else np.inf
    return H, {"rank": rank, "condition": cond}


class PorterInterpolant:
    """Minimal-norm polynomial functional through values at nodes.

    The interpolant is Pi([theta]) = sum_k values[k] g_k([theta]) with
    cardinal basis g_k = sum_j Hinv_jk sum_{p in I} (theta_j, theta)^p.
    When H is numerically singular and a pseudoinverse is used, the
    functional has minimal norm but does not interpolate in general, and
    the pseudo flag is set.
    """

    family = "porter"

    def __init__(self, nodes, values, Hinv, pseudo, index_set,
                 diagnostics=None):
        self._theta = tuple(_node_list(nodes))
        self.nodes = nodes if isinstance(nodes, NodeSet) else \
            _wrap_node_set(self._theta)
        self.values = np.array(values, dtype=float)
        if self.values.shape != (len(self._theta),):
            raise ValueError(
                f"{self.values.size} values for {len(self._theta)} nodes")
        self.Hinv = np.array(Hinv, dtype=float)
        self.pseudo = bool(pseudo)
        self.index_set = IndexSet(index_set)
        self.diagnostics = dict(diagnostics or {})
        # contraction of Hinv with the data, so that evaluation is a dot
        # product with the vector of node monomials
        self.weights = self.Hinv @ self.values

    @property
    def I(self):
        return self.index_set

    def __len__(self):
        return len(self._theta)

    def to_json(self):
        """JSON document with family, index set, nodes, values and Hinv."""
        return json.dumps({
            "family": "porter",
            "index_set": list(self.index_set),
            "pseudo": self.pseudo,
            "values": self.values.tolist(),
            "Hinv": self.Hinv.tolist(),
            "diagnostics": self.diagnostics,
            "nodes": _nodes_to_json(self._theta),
        })


def _wrap_node_set(theta):
    if _shared_basis(theta) is not None:
        return NodeSet(theta, "custom")
    return tuple(theta)


def porter_build(values, nodes, index_set, use_pseudoinverse=False):
    """Build a Porter interpolant from functional values at nodes.

    When the Gram-power matrix is numerically singular the build fails
    with a singularity error naming the deficient rank, unless
    use_pseudoinverse is set, in which case the minimal-norm functional
    is returned with the pseudo flag set.
    """
    theta = _node_list(nodes)
    values = np.asarray(values, dtype=float)
    if values.shape != (len(theta),):
        raise ValueError(
            f"got {values.size} values for {len(theta)} nodes")
    H, diagnostics = porter_h_matrix(theta, index_set)
    n = len(theta)
    deficient = diagnostics["rank"] < n
    if deficient and not use_pseudoinverse:
        raise np.linalg.LinAlgError(
            f"interpolation matrix is singular: numerical rank "
            f"{diagnostics['rank']} of {n}; the nodes are linearly "
            f"dependent under this index set (pass use_pseudoinverse=True "
            f"for the minimal-norm functional)")
    if use_pseudoinverse:
        Hinv = np.linalg.pinv(H, rcond=PINV_CUTOFF)
    else:
        Hinv = _invert(H)
    return PorterInterpolant(nodes, values, Hinv, deficient, index_set,
                             diagnostics)


def _schur_append(theta_old, Hinv_old, theta_new, index_set, label):
    """One blockwise-inversion step appending new nodes to a Porter set."""
    S_off = _inner_matrix(theta_old, theta_new)
    H_off = _powers_sum(S_off, index_set)
    H_new, _ = porter_h_matrix(theta_new, index_set)
    B = Hinv_old @ H_off
    S = H_new - H_off.T @ B
    S = 0.5 * (S + S.T)
    sv = np.linalg.svd(S, compute_uv=False)
    if sv[0] <= 0.0 or sv[-1] <= sv[0] * PINV_CUTOFF:
        raise np.linalg.LinAlgError(
            f"singular Schur complement at {label}: the appended nodes are "
            f"linearly dependent on the current set under this index set")
    A = _invert(S)
    BA = B @ A
    return np.block([[Hinv_old + BA @ B.T, -BA], [-BA.T, A]])


def porter_extend(interpolant, values, nodes):
    """Append nodes to a Porter interpolant by blockwise inversion.

    Returns a new interpolant; the input is left untouched.  The extension
    requires an invertible base (pseudo interpolants cannot be extended).
    """
    if interpolant.pseudo:
        raise ValueError("cannot extend a pseudoinverse-based interpolant")
    theta_new = _node_list(nodes)
    values_new = np.asarray(values, dtype=float)
    if values_new.shape != (len(theta_new),):
        raise ValueError(
            f"got {values_new.size} values for {len(theta_new)} nodes")
    theta_old = list(interpolant._theta)
    Hinv = _schur_append(theta_old, interpolant.Hinv, theta_new,
                         interpolant.index_set, "appended block")
    theta_all = theta_old + theta_new
    values_all = np.concatenate([interpolant.values, values_new])
    H_full = _powers_sum(_inner_matrix(theta_all, theta_all),
                         interpolant.index_set)
    diagnostics = {"rank": len(theta_all),
                   "condition": _norm1(H_full) * _norm1(Hinv)}
    return PorterInterpolant(theta_all, values_all, Hinv, False,
                             interpolant.index_set, diagnostics)


def _as_blocks(value_blocks, node_blocks, block_size):
    """Normalize flat or pre-blocked input into aligned block lists."""
    flat = isinstance(node_blocks, NodeSet) or (
        len(node_blocks) > 0 and isinstance(node_blocks[0], TestFunction))
    if flat:
        theta = _node_list(node_blocks)
        values = np.asarray(value_blocks, dtype=float)
        if values.shape != (len(theta),):
            raise ValueError(
                f"got {values.size} values for {len(theta)} nodes")
        nb = [theta[i:i + block_size]
              for i in range(0, len(theta), block_size)]
        vb = [values[i:i + block_size]
              for i in range(0, len(theta), block_size)]
        return vb, nb
    nb = [_node_list(b) for b in node_blocks]
    vb = [np.asarray(v, dtype=float) for v in value_blocks]
    if len(nb) != len(vb):
        raise ValueError(
            f"{len(vb)} value blocks for {len(nb)} node blocks")
    for k, (v, b) in enumerate(zip(vb, nb)):
        if v.shape != (len(b),):
            raise ValueError(
                f"block {k + 1} has {v.size} values for {len(b)} nodes")
    return vb, nb


def porter_build_recursive(value_blocks, node_blocks, index_set,
                           block_size=DEFAULT_BLOCK_SIZE):
    """Assemble a Porter interpolant blockwise via Schur complements.

    The node partition may be given as a list of blocks, or flat (NodeSet
    or sequence), in which case it is chunked into blocks of block_size.
    Each leading principal block of the Gram-power matrix must be
    invertible; a singular Schur complement raises an error identifying
    the offending block.  The inverse matches direct inversion up to
    roundoff, so the result is interchangeable with porter_build.
    """
    index_set = IndexSet(index_set)
    vb, nb = _as_blocks(value_blocks, node_blocks, block_size)
    if not nb:
        raise ValueError("at least one node block is required")
    H0, diag0 = porter_h_matrix(nb[0], index_set)
    if diag0["rank"] < len(nb[0]):
        raise np.linalg.LinAlgError(
            f"block 1 of the node partition is singular (numerical rank "
            f"{diag0['rank']} of {len(nb[0])})")
    Hinv = _invert(H0)
    theta = list(nb[0])
    for k in range(1, len(nb)):
        Hinv = _schur_append(theta, Hinv, nb[k], index_set,
                             f"block {k + 1}")
        theta.extend(nb[k])
    values = np.concatenate(vb)
    H_full = _powers_sum(_inner_matrix(theta, theta), index_set)
    diagnostics = {"rank": len(theta),
                   "condition": _norm1(H_full) * _norm1(Hinv)}
    return PorterInterpolant(theta, values, Hinv, False, index_set,
                             diagnostics)


# -- Prenter interpolants ----------------------------------------------------


class PrenterInterpolant:
    """Lagrange-product interpolant with cardinal basis of inner products.

    The cardinal basis is g_i = prod_{j != i} (theta - theta_j,
    theta_i - theta_j) / ||theta_i - theta_j||^2, so each basis element
    is a polynomial functional of order n - 1 for n nodes.  Pairwise node
    distances must exceed 1e-12.
    """

    family = "prenter"

    def __init__(self, nodes, values):
        self._theta = tuple(_node_list(nodes))
        if not self._theta:
            raise ValueError("at least one interpolation node is required")
        self.nodes = nodes if isinstance(nodes, NodeSet) else \
            _wrap_node_set(self._theta)
        self.values = np.array(values, dtype=float)
        if self.values.shape != (len(self._theta),):
            raise ValueError(
                f"{self.values.size} values for {len(self._theta)} nodes")
        self.gram = _inner_matrix(self._theta, self._theta)
        n = len(self._theta)
        d = np.diag(self.gram)
        self.sqdist = _sqdist_matrix(self._theta, self._theta)
        if n > 1:
            off = self.sqdist[~np.eye(n, dtype=bool)]
            if np.min(off) <= 1e-24:
                i, j = divmod(int(np.argmin(
                    self.sqdist + np.diag(np.full(n, np.inf)))), n)
                raise ValueError(
                    f"interpolation nodes must be pairwise distinct: nodes "
                    f"{i} and {j} are closer than 1e-12 in L2")
        self.diagnostics = {
            "min_distance": float(np.sqrt(np.min(
                self.sqdist[~np.eye(n, dtype=bool)]))) if n > 1 else np.inf,
            "max_distance": float(np.sqrt(np.max(self.sqdist))),
        }

    def __len__(self):
        return len(self._theta)

    def _ratio_matrix(self, theta):
        """R[i, j] = (theta - theta_j, theta_i - theta_j) / d_ij, diag 1."""
        t = _inner_matrix(self._theta, [theta])[:, 0]
        G = self.gram
        num = t[:, None] - t[None, :] - G + np.diag(G)[None, :]
        R = np.ones_like(num)
        n = len(self._theta)
        mask = ~np.eye(n, dtype=bool)
        R[mask] = num[mask] / self.sqdist[mask]
        return R

    def to_json(self):
        return json.dumps({
            "family": "prenter",
            "values": self.values.tolist(),
            "nodes": _nodes_to_json(self._theta),
        })


def prenter_build(values, nodes):
    """Build a Prenter interpolant from functional values at nodes."""
    return PrenterInterpolant(nodes, values)


def _loo_products(r):
    """Leave-one-out products loo[k] = prod_{j != k} r[j]."""
    n = r.size
    pre = np.ones(n + 1)
    suf = np.ones(n + 1)
    np.cumprod(r, out=pre[1:])
    np.cumprod(r[::-1], out=suf[:n][::-1])
    return pre[:n] * suf[1:]


# -- kernel interpolants -----------------------------------------------------


def kappa_value(kind, f, g, anchor=None, p=2, index_set=None):
    """Distance kernel between two test functions.

    Kinds: "norm_power" is ||f - g||^p (p > 0); "riesz" is
    ||f - g||^(-p) for p > 0 and -ln ||f - g|| for p = 0; "gauss_exp" is
    1 - exp(-||f - g||^2); "prenter_kernel" is (f - g, anchor - g) and
    needs the anchor node; "porter_poly" is sum_{p in I} (f, g)^p.
    """
    if kind == "porter_poly":
        if index_set is None:
            raise ValueError("porter_poly kernel requires an index_set")
        s = inner_product(f, g)
        return float(_powers_sum(np.array(s), IndexSet(index_set)))
    if kind == "prenter_kernel":
        if anchor is None:
            raise ValueError("prenter_kernel requires the anchor node")
        return float(inner_product(f, anchor) - inner_product(f, g)
                     - inner_product(g, anchor) + inner_product(g, g))
    d2 = float(_sqdist_matrix([f], [g])[0, 0])
    return float(_kappa_from_sqdist(np.array(d2), kind, p))


def _kappa_from_sqdist(d2, kind, p):
    d2 = np.asarray(d2, dtype=float)
    if kind == "norm_power":
        if p <= 0:
            raise ValueError("norm_power requires p > 0")
        return d2 ** (p / 2.0)
    if kind == "gauss_exp":
        return 1.0 - np.exp(-d2)
    if kind == "riesz":
        if p < 0:
            raise ValueError("riesz requires p >= 0")
        with np.errstate(divide="ignore"):
            if p == 0:
                return np.where(d2 > 0.0, -0.5 * np.log(d2), np.inf)
            return np.where(d2 > 0.0, d2 ** (-p / 2.0), np.inf)
    raise ValueError(f"unknown kernel kind {kind!r}")


class KernelInterpolant:
    """Barycentric Lagrange interpolant driven by a node-distance kernel.

    For the norm-based kernels ("norm_power", "riesz", "gauss_exp") the
    value is sum_i w_i F_i / kappa_i divided by sum_i w_i / kappa_i, where
    kappa_i = kappa([theta], [theta_i]).  The "lagrange" variant uses the
    barycentric weights w_i = prod_{j != i} 1 / kappa([theta_i],
    [theta_j]); the "shepard" variant uses w_i = 1, which keeps every
    value inside [min values, max values] for positive kernels.  The
    "prenter_kernel" kind reproduces the Prenter cardinal basis and the
    "porter_poly" kind the matrix-based polynomial interpolant.
    """

    family = "kernel"

    def __init__(self, nodes, values, kind="norm_power", p=2,
                 index_set=None, variant="lagrange"):
        if kind not in KAPPA_KINDS:
            raise ValueError(
                f"unknown kernel kind {kind!r}; expected one of {KAPPA_KINDS}")
        if variant not in ("lagrange", "shepard"):
            raise ValueError(
                f"unknown variant {variant!r}; expected 'lagrange' or "
                f"'shepard'")
        self._theta = tuple(_node_list(nodes))
        if not self._theta:
            raise ValueError("at least one interpolation node is required")
        self.nodes = nodes if isinstance(nodes, NodeSet) else \
            _wrap_node_set(self._theta)
        self.values = np.array(values, dtype=float)
        if self.values.shape != (len(self._theta),):
            raise ValueError(
                f"{self.values.size} values for {len(self._theta)} nodes")
        self.kind = kind
        self.p = float(p)
        self.index_set = IndexSet(index_set) if index_set is not None else None
        self.variant = variant
        self.weights = None
        self._kinv = None
        self._delegate = None
        n = len(self._theta)
        if kind == "prenter_kernel":
            self._delegate = PrenterInterpolant(self._theta, self.values)
            return
        if kind == "porter_poly":
            if self.index_set is None:
                raise ValueError("porter_poly kernel requires an index_set")
            K, diag = porter_h_matrix(self._theta, self.index_set)
            if diag["rank"] < n:
                raise np.linalg.LinAlgError(
                    f"kernel matrix is singular (numerical rank "
                    f"{diag['rank']} of {n}) for the polynomial kernel")
            self._kinv = _invert(K)
            return
        self._norms = np.array([float(nd.a @ nd.a) for nd in self._theta])
        d2 = _sqdist_matrix(self._theta, self._theta)
        if n > 1:
            off = d2[~np.eye(n, dtype=bool)]
            if np.min(off) <= 1e-24:
                raise ValueError(
                    "interpolation nodes must be pairwise distinct (closer "
                    "than 1e-12 in L2)")
        if variant == "shepard":
            self.weights = np.ones(n)
        else:
            K = _kappa_from_sqdist(d2, kind, self.p)
            np.fill_diagonal(K, 1.0)
            with np.errstate(over="ignore"):
                w = 1.0 / np.prod(K, axis=1)
            scale = np.max(np.abs(w))
            if not np.isfinite(scale) or scale == 0.0:
                raise ValueError(
                    "barycentric weights overflow for this kernel; rescale "
                    "the nodes or use the shepard variant")
            self.weights = w / scale

    def __len__(self):
        return len(self._theta)

    def to_json(self):
        return json.dumps({
            "family": "kernel",
            "kind": self.kind,
            "p": self.p,
            "index_set": list(self.index_set) if self.index_set else None,
            "variant": self.variant,
            "values": self.values.tolist(),
            "nodes": _nodes_to_json(self._theta),
        })


def kernel_build(values, nodes, kind="norm_power", p=2, index_set=None,
                 variant="lagrange"):
    """Build a kernel-based barycentric interpolant (see KernelInterpolant)."""
    return KernelInterpolant(nodes, values, kind=kind, p=p,
                             index_set=index_set, variant=variant)


# -- evaluation --------------------------------------------------------------


def interp_eval(interpolant, theta):
    """Value of a functional interpolant at a test function."""
    if isinstance(interpolant, PorterInterpolant):
        s = _inner_matrix(list(interpolant._theta), [theta])[:, 0]
        return float(_powers_sum(s, interpolant.index_set)
                     @ interpolant.weights)
    if isinstance(interpolant, PrenterInterpolant):
        R = interpolant._ratio_matrix(theta)
        return float(np.prod(R, axis=1) @ interpolant.values)
    if isinstance(interpolant, KernelInterpolant):
        return _kernel_eval(interpolant, theta)
    raise TypeError(f"not an interpolant: {type(interpolant).__name__}")


def _kernel_eval(itp, theta):
    if itp.kind == "prenter_kernel":
        return interp_eval(itp._delegate, theta)
    if itp.kind == "porter_poly":
        s = _inner_matrix(list(itp._theta), [theta])[:, 0]
        k = _powers_sum(s, itp.index_set)
        return float(itp.values @ (itp._kinv @ k))
    d2 = _sqdist_matrix(list(itp._theta), [theta])[:, 0]
    norm_theta = inner_product(theta, theta)
    scale = max(1.0, float(np.max(itp._norms)), norm_theta)
    hit = int(np.argmin(d2))
    if d2[hit] <= 1e-26 * scale:
        return float(itp.values[hit])
    k = _kappa_from_sqdist(d2, itp.kind, itp.p)
    u = itp.weights / k
    return float((u @ itp.values) / np.sum(u))


def interp_eval_batch(interpolant, thetas):
    """Evaluate an interpolant at many test functions.

    Porter interpolants use a single vectorized pass; the other families
    fall back to pointwise evaluation.  Evaluation never mutates the
    interpolant, so batches may also be split across threads.
    """
    theta = _node_list(thetas)
    if isinstance(interpolant, PorterInterpolant):
        S = _inner_matrix(list(interpolant._theta), theta)
        return _powers_sum(S, interpolant.index_set).T @ interpolant.weights
    return np.array([interp_eval(interpolant, t) for t in theta])


# -- functional derivatives --------------------------------------------------


def interp_derivative(interpolant, theta, order):
    """Closed-form functional derivative of an interpolant at theta.

    Order 1 returns a one-point kernel on the dense evaluation grid,
    order 2 a symmetric two-point kernel on the coarser grid.  Only the
    Porter and Prenter families support derivatives.
    """
    if order not in (1, 2):
        raise ValueError("derivative order must be 1 or 2")
    if isinstance(interpolant, PorterInterpolant):
        return _porter_derivative(interpolant, theta, order)
    if isinstance(interpolant, PrenterInterpolant):
        return _prenter_derivative(interpolant, theta, order)
    if isinstance(interpolant, KernelInterpolant):
        raise NotImplementedError(
            "functional derivatives are not available for kernel-family "
            "interpolants: the inverse-distance cardinal basis has "
            "vanishing derivatives at every node")
    raise TypeError(f"not an interpolant: {type(interpolant).__name__}")


def _node_grid_values(theta_list, domain, order):
    if order == 1:
        x, _ = _master(domain)
    else:
        x, _ = _grid2(domain)
    shared = _shared_basis(theta_list)
    if shared is not None:
        V = shared.values_matrix(x)
        return x, np.array([nd.a for nd in theta_list]) @ V
    return x, np.array([nd.evaluate(x) for nd in theta_list])


def _porter_derivative(itp, theta, order):
    theta_list = list(itp._theta)
    domain = theta_list[0].basis.domain
    s = _inner_matrix(theta_list, [theta])[:, 0]
    x, V = _node_grid_values(theta_list, domain, order)
    if order == 1:
        r = np.zeros_like(s)
        for p in itp.index_set:
            if p >= 1:
                r += p * s ** (p - 1)
        return Kernel1(x, (itp.weights * r) @ V)
    r = np.zeros_like(s)
    for p in itp.index_set:
        if p >= 2:
            r += p * (p - 1) * s ** (p - 2)
    K = (V * (itp.weights * r)[:, None]).T @ V
    return Kernel2(x, x, 0.5 * (K + K.T))


def _prenter_derivative(itp, theta, order):
    theta_list = list(itp._theta)
    n = len(theta_list)
    domain = theta_list[0].basis.domain
    R = itp._ratio_matrix(theta)
    D = itp.sqdist
    F = itp.values
    x, V = _node_grid_values(theta_list, domain, order)
    if order == 1:
        # delta Pi / delta theta(x) =
        #   sum_i F_i sum_{k != i} (theta_i - theta_k)(x) / d_ik g_ik
        C = np.zeros((n, n))
        for i in range(n):
            loo = _loo_products(R[i])
            for k in range(n):
                if k != i:
                    C[i, k] = F[i] * loo[k] / D[i, k]
        coeff = C.sum(axis=1) - C.sum(axis=0)
        return Kernel1(x, coeff @ V)
    M = np.zeros((n, n))
    for i in range(n):
        for k in range(n):
            if k == i:
                continue
            r2 = R[i].copy()
            r2[k] = 1.0
            loo2 = _loo_products(r2)
            for s_ in range(n):
                if s_ == i or s_ == k:
                    continue
                c = F[i] * loo2[s_] / (D[i, k] * D[i, s_])
                M[i, i] += c
                M[i, s_] -= c
                M[k, i] -= c
                M[k, s_] += c
    K = V.T @ M @ V
    return Kernel2(x, x, 0.5 * (K + K.T))


# -- Khlobystov extraction ---------------------------------------------------


def _shat2_keys(m):
    keys = [()]
    keys += [(p,) for p in range(m)]
    keys += list(itertools.combinations_with_replacement(range(m), 2))
    return keys


def khlobystov_extract(values, m=None, squared_norms=None):
    """Recover quadratic polynomial-functional coefficients from values.

    The functional is modeled as K0 + sum_p a_p (phi_p, theta) +
    sum_{p,q} A_pq (phi_p, theta)(phi_q, theta) with symmetric A, and its
    values must be supplied at the zero function, at each phi_p, at each
    2 phi_p and at each pair sum phi_p + phi_q.

    values may be a mapping keyed by multiset index tuples, with () for
    the zero function, (p,) for phi_p, (p, p) for 2 phi_p and (p, q) for
    phi_p + phi_q, or a flat sequence ordered like shat_nodes(basis, 2),
    in which case m must be given.  For orthogonal but non-normalized
    bases pass squared_norms = [||phi_p||^2, ...]; the raw closed-form
    output is divided by ||phi_p||^2 and ||phi_p||^2 ||phi_q||^2.

    Returns {"K0": float, "a": (m,) array, "A": (m, m) symmetric array}.
    """
    if isinstance(values, Mapping):
        vals = {tuple(sorted(key)): float(v) for key, v in values.items()}
        if m is None:
            flat = [i for key in vals for i in key]
            m = max(flat) + 1 if flat else 0
    else:
        seq = np.asarray(values, dtype=float).ravel()
        if m is None:
            raise ValueError("m is required when values is a flat sequence")
        keys = _shat2_keys(m)
        if seq.size != len(keys):
            raise ValueError(
                f"expected {len(keys)} values for m={m}, got {seq.size}")
        vals = dict(zip(keys, seq))
    for key in _shat2_keys(m):
        if key not in vals:
            raise ValueError(f"missing functional value for node {key}")
    sn = np.ones(m) if squared_norms is None else \
        np.asarray(squared_norms, dtype=float)
    if sn.shape != (m,):
        raise ValueError(f"squared_norms must have length {m}")
    K0 = vals[()]
    a = np.empty(m)
    A = np.empty((m, m))
    for p_ in range(m):
        a[p_] = (-0.5 * vals[(p_, p_)] + 2.0 * vals[(p_,)] - 1.5 * K0) / sn[p_]
        A[p_, p_] = 0.5 * (vals[(p_, p_)] - 2.0 * vals[(p_,)] + K0) / sn[p_] ** 2
        for q_ in range(p_ + 1, m):
            apq = 0.5 * (vals[(p_, q_)] - vals[(p_,)] - vals[(q_,)] + K0) \
                / (sn[p_] * sn[q_])
            A[p_, q_] = A[q_, p_] = apq
    return {"K0": float(K0), "a": a, "A": A}


def khlobystov_eval(coefficients, theta):
    """Value of an extracted quadratic functional at a test function.

    theta may be a TestFunction on the orthonormal basis used for the
    extraction (its coefficients are the projections) or the projection
    vector itself.
    """
    t = theta.a if isinstance(theta, TestFunction) else \
        np.asarray(theta, dtype=float)
    return float(coefficients["K0"] + coefficients["a"] @ t
                 + t @ (coefficients["A"] @ t))


def khlobystov_moment(functional, phis):
    """Order-n coefficient of a polynomial functional by inclusion-exclusion.

    For a polynomial functional of order at most n = len(phis), the
    coefficient a_n(phi_1, ..., phi_n) in the tensor expansion equals
    (1/n!) sum over subsets S of {1..n} of (-1)^(n-|S|) F([sum_{z in S}
    phi_z]).  The cost is 2^n evaluations, so the formula is practical
    for small orders only.
    """
    phis = list(phis)
    n = len(phis)
    if n < 1:
        raise ValueError("at least one basis element is required")
    basis = _shared_basis(phis)
    if basis is None:
        raise ValueError("basis elements must share one basis")
    total = 0.0
    for k in range(n + 1):
        sign = (-1.0) ** (n - k)
        for subset in itertools.combinations(range(n), k):
            a = np.zeros(basis.m)
            for z in subset:
                a = a + phis[z].a
            total += sign * float(functional(TestFunction(basis, a)))
    return total / math.factorial(n)


# -- greedy node selection ---------------------------------------------------


def greedy_next_node(current, criterion, candidates, p=2, index_set=None,
                     weight=None):
    """Pick the next interpolation node from a finite candidate set.

    criterion "riesz_energy" minimizes the total Riesz kernel energy
    sum_i kappa_p(candidate, theta_i) over the candidates; criterion
    "lebesgue" maximizes W(candidate)^2 sum_k (g_k(candidate) /
    W(theta_k))^2, where g_k is the Porter cardinal basis on the current
    nodes for the given index_set (default {0, 1}) and W is an optional
    positive weight functional (default 1).  Ties break deterministically
    toward the smallest candidate index.
    """
    cands = _node_list(candidates)
    if not cands:
        raise ValueError("candidate set must be non-empty")
    cur = _node_list(current)
    if criterion == "riesz_energy":
        if not cur:
            return cands[0]
        D2 = _sqdist_matrix(cands, cur)
        K = _kappa_from_sqdist(D2, "riesz", p)
        energy = K.sum(axis=1)
        return cands[int(np.argmin(energy))]
    if criterion == "lebesgue":
        if not cur:
            raise ValueError(
                "the lebesgue criterion requires at least one current node")
        I = IndexSet(index_set) if index_set is not None else IndexSet((0, 1))
        H, _ = porter_h_matrix(cur, I)
        Hinv = np.linalg.pinv(H, rcond=PINV_CUTOFF)
        P = _powers_sum(_inner_matrix(cur, cands), I)
        G = Hinv @ P
        if weight is None:
            wk = np.ones(len(cur))
            wc = np.ones(len(cands))
        else:
            wk = np.array([float(weight(t)) for t in cur])
            wc = np.array([float(weight(c)) for c in cands])
        chi = wc ** 2 * np.sum((G / wk[:, None]) ** 2, axis=0)
        return cands[int(np.argmax(chi))]
    raise ValueError(
        f"unknown criterion {criterion!r}; expected 'riesz_energy' or "
        f"'lebesgue'")


# -- serialization -----------------------------------------------------------


def _nodes_to_json(theta):
    basis = _shared_basis(theta)
    if basis is None:
        raise ValueError("serialization requires nodes sharing one basis")
    return {"basis": json.loads(basis.to_json()),
            "coefficients": [nd.a.tolist() for nd in theta]}


def _nodes_from_json(block):
    basis = Basis1D.from_json(json.dumps(block["basis"]))
    return [TestFunction(basis, np.asarray(c, dtype=float))
            for c in block["coefficients"]]


def interp_from_json(doc):
    """Rebuild an interpolant from its to_json document."""
    d = json.loads(doc)
    family = d.get("family")
    if family not in ("porter", "prenter", "kernel"):
        raise ValueError(f"unknown interpolant family {family!r}")
    nodes = _nodes_from_json(d["nodes"])
    values = np.asarray(d["values"], dtype=float)
    if family == "porter":
        return PorterInterpolant(nodes, values, np.asarray(d["Hinv"]),
                                 d["pseudo"], d["index_set"],
                                 d.get("diagnostics"))
    if family == "prenter":
        return PrenterInterpolant(nodes, values)
    return KernelInterpolant(nodes, values, kind=d["kind"], p=d["p"],
                              index_set=d["index_set"], variant=d["variant"])


def export_sweep_csv(rows, path=None):
    """Write (m, sup_error) rows as CSV; returns the text."""
    lines = ["m,sup_error"]
    for m, err in rows:
        lines.append(f"{int(m)},{err:.17g}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# -- convergence experiments -------------------------------------------------


def linear_sweep(index_set, m_values, ensemble_size=300, sigma=1.0,
                 count=1024, seed=0, stop_below=None):
    """Sup-norm interpolation error sweep for the built-in linear functional.

    For each even m in m_values the interpolation nodes are the m + 1
    unnormalized nodal trig functions on the m-grid (squared norm
    2 pi / (m + 1)), and the error sup |F - Pi| is taken over a fixed
    Gaussian ensemble drawn once on a finer nodal grid.  The draws put
    independent N(0, sigma^2) amplitudes on the unnormalized nodal
    functions of the fine grid, the same scale convention as the nodes.
    Returns rows (m, sup_error); the sweep stops early once the error
    drops below stop_below.
    """
    index_set = IndexSet(index_set)
    model = builtin_linear()
    big = build_basis("trig_nodal", ensemble_size)
    scale = sigma * np.sqrt(2.0 * np.pi / (ensemble_size + 1))
    ensemble = gaussian_ensemble(big, ensemble_size, scale, count, seed)
    f_true = evaluate_batch(model, ensemble)
    rows = []
    for m in m_values:
        bm = build_basis("trig_nodal", m)
        h = 2.0 * np.pi / (m + 1)
        nodes = NodeSet([TestFunction(bm, np.sqrt(h) * e)
                         for e in np.eye(m + 1)], "custom",
                        {"scale": "nodal"})
        vals = evaluate_batch(model, nodes)
        itp = porter_build(vals, nodes, index_set)
        approx = interp_eval_batch(itp, ensemble)
        err = float(np.max(np.abs(f_true - approx)))
        rows.append((m, err))
        if stop_below is not None and err < stop_below:
            break
    return rows


def quadratic_sup_error(m=20, ensemble_size=50, sigma=1.0, count=20000,
                        seed=0, index_set=(0, 1, 2)):
    """Sup-norm interpolation error for the built-in quadratic functional.

    The interpolant uses monomial orders {0, 1, 2} on the full node set
    of zero, singleton and pair sums of the m-grid nodal trig basis
    (m + 1 elements), and the error is taken over a Gaussian ensemble on
    a finer grid, with the same unnormalized-nodal amplitude convention
    as linear_sweep.  With enough nodes the interpolant reproduces the
    functional exactly on the span, so the error is the kernel content
    outside the interpolation space.
    """
    model = builtin_quadratic()
    bm = build_basis("trig_nodal", m)
    nodes = shat_nodes(bm, 2)
    vals = evaluate_batch(model, nodes)
    itp = porter_build(vals, nodes, IndexSet(index_set))
    big = build_basis("trig_nodal", ensemble_size)
    scale = sigma * np.sqrt(2.0 * np.pi / (ensemble_size + 1))
    ensemble = gaussian_ensemble(big, ensemble_size, scale, count, seed)
    f_true = evaluate_batch(model, ensemble)
    approx = interp_eval_batch(itp, ensemble)
    return float(np.max(np.abs(f_true - approx)))
