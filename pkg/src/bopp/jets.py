"""Truncated Taylor-jet arithmetic for matrix-valued functions of one variable.

A jet of order K at a batch of points x is stored as a complex ndarray of
shape (B, K+1, N, N): entry [b, k] holds the k-th derivative at x[b].
Jet nodes compose by exact rules (Leibniz, inverse-function recursion,
ODE recursions), so derivatives of arbitrary order come out analytically.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "jet_mul", "jet_inv",
    "JetFn", "JetConst", "JetRule", "JetSum", "JetScale", "JetProd",
    "JetAdj", "JetInv", "JetTrace", "JetEmbed", "JetExp",
    "harmonic_rule", "polynomial_rule",
]

_BINOM_CACHE: dict[int, np.ndarray] = {}


def _binom(K: int) -> np.ndarray:
    """(K+1, K+1) table of binomial coefficients."""
    if K not in _BINOM_CACHE:
        t = np.zeros((K + 1, K + 1))
        for k in range(K + 1):
            for j in range(k + 1):
                t[k, j] = math.comb(k, j)
        _BINOM_CACHE[K] = t
    return _BINOM_CACHE[K]


def jet_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Leibniz product of two jets: c_k = sum_j C(k,j) a_j b_{k-j}."""
    K = a.shape[1] - 1
    C = _binom(K)
    c = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=complex)
    for k in range(K + 1):
        for j in range(k + 1):
            c[:, k] += C[k, j] * (a[:, j] @ b[:, k - j])
    return c


def jet_inv(a: np.ndarray) -> np.ndarray:
    """Jet of the matrix inverse, from sum_j C(k,j) a_j m_{k-j} = 0 (k >= 1)."""
    K = a.shape[1] - 1
    C = _binom(K)
    m = np.zeros_like(a)
    a0inv = np.linalg.inv(a[:, 0])
    m[:, 0] = a0inv
    for k in range(1, K + 1):
        acc = np.zeros_like(a[:, 0])
        for j in range(1, k + 1):
            acc += C[k, j] * (a[:, j] @ m[:, k - j])
        m[:, k] = -a0inv @ acc
    return m


class JetFn:
    """Matrix-valued function of x exposing derivatives of any order.

    Subclasses implement _jets(x, K). Results are cached per (x, K) since
    grid evaluations repeat the same abscissae many times.
    """

    dim: int = 1

    def __init__(self):
        self._cache: dict[tuple[bytes, int], np.ndarray] = {}

    def jets(self, x: np.ndarray, K: int) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        key = (x.tobytes(), K)
        hit = self._cache.get(key)
        if hit is None:
            if len(self._cache) > 16:
                self._cache.clear()
            hit = self._jets(x, K)
            self._cache[key] = hit
        return hit

    def _jets(self, x: np.ndarray, K: int) -> np.ndarray:
        raise NotImplementedError

    def value(self, x, k: int = 0) -> np.ndarray:
        """k-th derivative values, shape (B, N, N)."""
        return self.jets(x, k)[:, k]

    # algebra ------------------------------------------------------------
    def __add__(self, other):
        return JetSum([self, _as_jetfn(other, self.dim)])

    __radd__ = __add__

    def __sub__(self, other):
        return JetSum([self, JetScale(_as_jetfn(other, self.dim), -1.0)])

    def __rsub__(self, other):
        return JetSum([_as_jetfn(other, self.dim), JetScale(self, -1.0)])

    def __mul__(self, other):
        if np.isscalar(other):
            return JetScale(self, other)
        return JetProd(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return JetScale(self, other)
        return JetProd(other, self)

    def __matmul__(self, other):
        return JetProd(self, other)

    def adj(self):
        return JetAdj(self)

    def trace(self):
        return JetTrace(self)

    def inv(self):
        return JetInv(self)


def _as_jetfn(v, dim: int) -> JetFn:
    if isinstance(v, JetFn):
        return v
    return JetConst(np.eye(dim) * v if np.isscalar(v) else v)


class JetConst(JetFn):
    def __init__(self, mat):
        super().__init__()
        m = np.atleast_2d(np.asarray(mat, dtype=complex))
        self.mat = m
        self.dim = m.shape[0]

    def _jets(self, x, K):
        out = np.zeros((x.size, K + 1, self.dim, self.dim), dtype=complex)
        out[:, 0] = self.mat
        return out


class JetRule(JetFn):
    """Leaf with a closed-form derivative rule: rule(x, k) -> (B, N, N)."""

    def __init__(self, dim: int, rule):
        super().__init__()
        self.dim = dim
        self.rule = rule

    def _jets(self, x, K):
        out = np.empty((x.size, K + 1, self.dim, self.dim), dtype=complex)
        for k in range(K + 1):
            out[:, k] = self.rule(x, k)
        return out


class JetSum(JetFn):
    def __init__(self, terms):
        super().__init__()
        flat = []
        for t in terms:
            flat.extend(t.terms if isinstance(t, JetSum) else [t])
        self.terms = flat
        self.dim = flat[0].dim

    def _jets(self, x, K):
        out = self.terms[0].jets(x, K).copy()
        for t in self.terms[1:]:
            out = out + t.jets(x, K)
        return out


class JetScale(JetFn):
    def __init__(self, f: JetFn, c):
        super().__init__()
        self.f, self.c = f, complex(c)
        self.dim = f.dim

    def _jets(self, x, K):
        return self.c * self.f.jets(x, K)


class JetProd(JetFn):
    def __init__(self, a: JetFn, b: JetFn):
        super().__init__()
        self.a, self.b = a, b
        self.dim = max(a.dim, b.dim)

    def _jets(self, x, K):
        ja, jb = self.a.jets(x, K), self.b.jets(x, K)
        return jet_mul(ja, jb)


class JetAdj(JetFn):
    """Pointwise conjugate transpose; commutes with d/dx."""

    def __init__(self, f: JetFn):
        super().__init__()
        self.f = f
        self.dim = f.dim

    def _jets(self, x, K):
        return np.conj(np.swapaxes(self.f.jets(x, K), -1, -2))


class JetInv(JetFn):
    def __init__(self, f: JetFn):
        super().__init__()
        self.f = f
        self.dim = f.dim

    def _jets(self, x, K):
        return jet_inv(self.f.jets(x, K))


class JetTrace(JetFn):
    """Trace as a 1x1 jet."""

    def __init__(self, f: JetFn):
        super().__init__()
        self.f = f
        self.dim = 1

    def _jets(self, x, K):
        tr = np.trace(self.f.jets(x, K), axis1=-2, axis2=-1)
        return tr[..., None, None]


class JetEmbed(JetFn):
    """Scalar (1x1) jet times the identity of a larger dimension."""

    def __init__(self, s: JetFn, dim: int):
        super().__init__()
        self.s = s
        self.dim = dim

    def _jets(self, x, K):
        s = self.s.jets(x, K)[..., 0, 0]
        return s[..., None, None] * np.eye(self.dim)


class JetExp(JetFn):
    """exp(s(x) H) for scalar JetFn s and a fixed matrix H.

    E' = s' H E, so E_{k+1} = sum_j C(k,j) s_{j+1} H E_{k-j}; H commutes
    with E, which keeps the recursion exact.
    """

    def __init__(self, s: JetFn, H: np.ndarray):
        super().__init__()
        self.s = s
        self.H = np.asarray(H, dtype=complex)
        self.dim = self.H.shape[0]

    def _jets(self, x, K):
        s = self.s.jets(x, K + 1)[..., 0, 0]      # (B, K+2) scalar jet
        B = x.size
        C = _binom(max(K, 1))
        out = np.empty((B, K + 1, self.dim, self.dim), dtype=complex)
        w, V = np.linalg.eig(self.H)
        Vi = np.linalg.inv(V)
        # exp(s H) = V diag(e^{s w}) V^{-1}
        out[:, 0] = np.einsum("ij,bj,jk->bik", V, np.exp(np.outer(s[:, 0], w)), Vi)
        for k in range(K):
            acc = np.zeros((B, self.dim, self.dim), dtype=complex)
            for j in range(k + 1):
                acc += C[k, j] * s[:, j + 1, None, None] * (self.H @ out[:, k - j])
            out[:, k + 1] = acc
        return out


def harmonic_rule(dim: int, mats, freqs, phases, const=None):
    """JetRule for const + sum_i mats[i] * cos(freqs[i] * x + phases[i])."""
    mats = [np.asarray(m, dtype=complex) for m in mats]
    freqs = np.asarray(freqs, dtype=float)
    phases = np.asarray(phases, dtype=float)
    c0 = np.zeros((dim, dim)) if const is None else np.asarray(const, dtype=complex)

    def rule(x, k):
        out = np.zeros((x.size, dim, dim), dtype=complex)
        if k == 0:
            out[:] = c0
        for m, w, p in zip(mats, freqs, phases):
            out += (w ** k) * np.cos(w * x + p + k * np.pi / 2)[:, None, None] * m
        return out

    return JetRule(dim, rule)


def polynomial_rule(dim: int, coeffs):
    """JetRule for sum_d coeffs[d] x^d with matrix coefficients."""
    coeffs = [np.asarray(c, dtype=complex) for c in coeffs]

    def rule(x, k):
        out = np.zeros((x.size, dim, dim), dtype=complex)
        for d in range(k, len(coeffs)):
            fac = math.perm(d, k)
            out += fac * (x ** (d - k))[:, None, None] * coeffs[d]
        return out

    return JetRule(dim, rule)
