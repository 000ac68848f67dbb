"""Truncated h-series symbol algebra and its discrete quantization.

Symbols are matrix-valued functions a(x, xi) on phase space carrying
analytic partial derivatives; series are truncated formal power series
a_0 + h a_1 + ... + h^M a_M.  Composition follows the standard-quantization
product: coefficient j of a#b collects (1/(i^m alpha!)) d_xi^alpha a_k
d_x^alpha b_l over k + l + |alpha| = j.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .jets import JetFn, JetConst

__all__ = [
    "PhaseSymbol", "FunctionSymbol", "PolynomialSymbol", "XiPolySymbol",
    "XiTrigSymbol", "grid_trig_frequency",
    "SymbolSeries", "moyal_product", "moyal_commutator", "series_add",
    "series_scale", "symbol_adjoint",
    "GridSpec", "quantize", "quantize_apply", "verify_derivatives",
    "constant_symbol",
]

UNLIMITED = 10 ** 6


def _norm_alpha(alpha, n: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Normalize alpha to (ax, axi), each a length-n tuple."""
    if alpha is None:
        z = (0,) * n
        return z, z
    ax, axi = alpha
    if np.isscalar(ax):
        ax = (int(ax),)
    if np.isscalar(axi):
        axi = (int(axi),)
    return tuple(ax), tuple(axi)


def multi_indices(n: int, total: int):
    """All multi-indices of length n with |alpha| = total."""
    if n == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in multi_indices(n - 1, total - head):
            yield (head,) + rest


def _factorial_mi(alpha) -> int:
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return out


class PhaseSymbol:
    """Matrix-valued phase-space function with analytic derivatives.

    eval(x, xi, alpha) returns the partial derivative d_x^{ax} d_xi^{axi}
    of the symbol, where alpha = (ax, axi).  x and xi broadcast; for n == 1
    they are plain arrays, for n > 1 the trailing axis has length n.
    Requesting |alpha| > max_deriv raises ValueError.
    """

    dim: int
    n: int
    max_deriv: int

    def eval(self, x, xi, alpha=None) -> np.ndarray:
        ax, axi = _norm_alpha(alpha, self.n)
        if sum(ax) + sum(axi) > self.max_deriv:
            raise ValueError(
                f"derivative order {sum(ax) + sum(axi)} exceeds max_deriv={self.max_deriv}")
        return self._eval(np.asarray(x, dtype=float), np.asarray(xi, dtype=float), ax, axi)

    def _eval(self, x, xi, ax, axi) -> np.ndarray:
        raise NotImplementedError

    # algebra used by the star product ------------------------------------
    def shifted(self, ax, axi) -> "PhaseSymbol":
        if sum(ax) + sum(axi) == 0:
            return self
        return _Shift(self, ax, axi)

    def __add__(self, other):
        return _Sum([self, other])

    def __mul__(self, c):
        return _Scaled(self, c)

    __rmul__ = __mul__

    def matmul(self, other):
        return _Prod(self, other)

    def pointwise_adjoint(self) -> "PhaseSymbol":
        return _Adj(self)


class FunctionSymbol(PhaseSymbol):
    """Symbol from a vectorized callable fn(x, xi, ax, axi) -> (..., N, N)."""

    def __init__(self, fn, dim: int, n: int = 1, max_deriv: int = 2):
        self.fn = fn
        self.dim = dim
        self.n = n
        self.max_deriv = max_deriv

    def _eval(self, x, xi, ax, axi):
        return np.asarray(self.fn(x, xi, ax, axi), dtype=complex)


class _Shift(PhaseSymbol):
    def __init__(self, base: PhaseSymbol, ax, axi):
        self.base = base
        self.ax, self.axi = tuple(ax), tuple(axi)
        self.dim, self.n = base.dim, base.n
        self.max_deriv = base.max_deriv - sum(ax) - sum(axi)

    def _eval(self, x, xi, ax, axi):
        bx = tuple(a + b for a, b in zip(ax, self.ax))
        bxi = tuple(a + b for a, b in zip(axi, self.axi))
        return self.base.eval(x, xi, (bx, bxi))


class _Sum(PhaseSymbol):
    def __init__(self, terms):
        flat = []
        for t in terms:
            flat.extend(t.terms if isinstance(t, _Sum) else [t])
        self.terms = flat
        self.dim, self.n = flat[0].dim, flat[0].n
        self.max_deriv = min(t.max_deriv for t in flat)

    def _eval(self, x, xi, ax, axi):
        out = self.terms[0].eval(x, xi, (ax, axi))
        for t in self.terms[1:]:
            out = out + t.eval(x, xi, (ax, axi))
        return out


class _Scaled(PhaseSymbol):
    def __init__(self, base, c):
        self.base, self.c = base, complex(c)
        self.dim, self.n, self.max_deriv = base.dim, base.n, base.max_deriv

    def _eval(self, x, xi, ax, axi):
        return self.c * self.base.eval(x, xi, (ax, axi))


def _sub_multi(alpha):
    """All beta <= alpha componentwise, with the binomial weight."""
    ranges = [range(a + 1) for a in alpha]
    for beta in itertools.product(*ranges):
        w = 1
        for a, b in zip(alpha, beta):
            w *= math.comb(a, b)
        yield beta, w


class _Prod(PhaseSymbol):
    """Pointwise matrix product; derivatives by the Leibniz rule."""

    def __init__(self, a: PhaseSymbol, b: PhaseSymbol):
        if a.dim != b.dim or a.n != b.n:
            raise ValueError("symbol dimension mismatch")
        self.a, self.b = a, b
        self.dim, self.n = a.dim, a.n
        self.max_deriv = min(a.max_deriv, b.max_deriv)

    def _eval(self, x, xi, ax, axi):
        out = None
        for bx, wx in _sub_multi(ax):
            cx = tuple(a - b for a, b in zip(ax, bx))
            for bxi, wxi in _sub_multi(axi):
                cxi = tuple(a - b for a, b in zip(axi, bxi))
                fa = self.a.eval(x, xi, (bx, bxi))
                fb = self.b.eval(x, xi, (cx, cxi))
                term = (wx * wxi) * (fa @ fb)
                out = term if out is None else out + term
        return out


class _Adj(PhaseSymbol):
    def __init__(self, base):
        self.base = base
        self.dim, self.n, self.max_deriv = base.dim, base.n, base.max_deriv

    def _eval(self, x, xi, ax, axi):
        v = self.base.eval(x, xi, (ax, axi))
        return np.conj(np.swapaxes(v, -1, -2))


class PolynomialSymbol(PhaseSymbol):
    """Polynomial in (x, xi) with matrix coefficients, n == 1.

    coeffs maps (dx, dxi) -> (N, N) matrix; derivatives are exact
    coefficient shifts, so max_deriv is unlimited.
    """

    def __init__(self, coeffs: dict, dim: int):
        self.coeffs = {k: np.asarray(v, dtype=complex) for k, v in coeffs.items()}
        self.dim = dim
        self.n = 1
        self.max_deriv = UNLIMITED

    def _eval(self, x, xi, ax, axi):
        kx, kxi = ax[0], axi[0]
        x = np.atleast_1d(x)
        xi = np.atleast_1d(xi)
        shape = np.broadcast_shapes(x.shape, xi.shape)
        out = np.zeros(shape + (self.dim, self.dim), dtype=complex)
        for (dx, dxi), m in self.coeffs.items():
            if dx < kx or dxi < kxi:
                continue
            fac = math.perm(dx, kx) * math.perm(dxi, kxi)
            mono = (x ** (dx - kx)) * (xi ** (dxi - kxi))
            out += fac * np.broadcast_to(mono, shape)[..., None, None] * m
        return out


class _JetShift(JetFn):
    """d^m/dx^m of another JetFn, realized by slicing a longer jet."""

    def __init__(self, f: JetFn, m: int):
        super().__init__()
        self.f, self.m = f, m
        self.dim = f.dim

    def _jets(self, x, K):
        return self.f.jets(x, K + self.m)[:, self.m:]


class XiPolySymbol(PhaseSymbol):
    """Polynomial in xi with JetFn coefficients in x (n == 1).

    The workhorse representation of the projection hierarchy: closed under
    sums, products, xi- and x-derivatives, and the star product, with all
    x-derivatives supplied by exact jet arithmetic.
    """

    def __init__(self, xi_coeffs: list[JetFn], dim: int):
        self.xi_coeffs = list(xi_coeffs)
        self.dim = dim
        self.n = 1
        self.max_deriv = UNLIMITED

    @property
    def xi_degree(self):
        return len(self.xi_coeffs) - 1

    def _eval(self, x, xi, ax, axi):
        kx, kxi = ax[0], axi[0]
        x = np.atleast_1d(x)
        xi = np.atleast_1d(xi)
        shape = np.broadcast_shapes(x.shape, xi.shape)
        out = np.zeros(shape + (self.dim, self.dim), dtype=complex)
        xflat = np.broadcast_to(x, shape).ravel()
        # jets are only needed at the distinct abscissae (grids repeat them)
        xu, inv = np.unique(xflat, return_inverse=True)
        for d in range(kxi, len(self.xi_coeffs)):
            cu = self.xi_coeffs[d].jets(xu, kx)[:, kx]
            c = cu[inv].reshape(shape + (self.dim, self.dim))
            mono = math.perm(d, kxi) * (xi ** (d - kxi))
            out += np.broadcast_to(mono, shape)[..., None, None] * c
        return out

    # closed algebra -------------------------------------------------------
    def xi_derivative(self, m: int) -> "XiPolySymbol":
        coeffs = [self.xi_coeffs[d] * math.perm(d, m)
                  for d in range(m, len(self.xi_coeffs))]
        if not coeffs:
            coeffs = [JetConst(np.zeros((self.dim, self.dim)))]
        return XiPolySymbol(coeffs, self.dim)

    def x_derivative(self, m: int) -> "XiPolySymbol":
        return XiPolySymbol([_JetShift(c, m) for c in self.xi_coeffs], self.dim)

    def prod(self, other: "XiPolySymbol") -> "XiPolySymbol":
        out: list = [None] * (self.xi_degree + other.xi_degree + 1)
        for i, a in enumerate(self.xi_coeffs):
            for j, b in enumerate(other.xi_coeffs):
                t = a @ b
                out[i + j] = t if out[i + j] is None else out[i + j] + t
        return XiPolySymbol(out, self.dim)

    def plus(self, other: "XiPolySymbol") -> "XiPolySymbol":
        nmax = max(self.xi_degree, other.xi_degree) + 1
        zero = JetConst(np.zeros((self.dim, self.dim)))
        out = []
        for d in range(nmax):
            a = self.xi_coeffs[d] if d <= self.xi_degree else zero
            b = other.xi_coeffs[d] if d <= other.xi_degree else zero
            out.append(a + b)
        return XiPolySymbol(out, self.dim)

    def scale(self, c) -> "XiPolySymbol":
        return XiPolySymbol([f * c for f in self.xi_coeffs], self.dim)

    def adjoint_pointwise(self) -> "XiPolySymbol":
        return XiPolySymbol([c.adj() for c in self.xi_coeffs], self.dim)


class XiTrigSymbol(PhaseSymbol):
    """Trigonometric polynomial in xi with JetFn coefficients in x (n == 1):
    sum_m c_m(x) e^{i m a xi}.

    With the grid frequency a = L/(N h) each harmonic quantizes to a cyclic
    shift by m sites, so these symbols are smooth on the momentum torus and
    their quantizations are banded: the discrete calculus then reproduces the
    O(h^infinity) locality statements at spectral accuracy.
    """

    def __init__(self, coeffs: dict, dim: int, freq: float):
        self.coeffs = dict(coeffs)        # m (int) -> JetFn
        self.dim = dim
        self.freq = float(freq)
        self.n = 1
        self.max_deriv = UNLIMITED

    def _eval(self, x, xi, ax, axi):
        kx, kxi = ax[0], axi[0]
        x = np.atleast_1d(x)
        xi = np.atleast_1d(xi)
        shape = np.broadcast_shapes(x.shape, xi.shape)
        out = np.zeros(shape + (self.dim, self.dim), dtype=complex)
        xflat = np.broadcast_to(x, shape).ravel()
        xu, inv = np.unique(xflat, return_inverse=True)
        a = self.freq
        for m, cf in self.coeffs.items():
            cu = cf.jets(xu, kx)[:, kx]
            c = cu[inv].reshape(shape + (self.dim, self.dim))
            phase = (1j * m * a) ** kxi * np.exp(1j * m * a * xi)
            out += np.broadcast_to(phase, shape)[..., None, None] * c
        return out

    def xi_derivative(self, k: int) -> "XiTrigSymbol":
        a = self.freq
        return XiTrigSymbol({m: cf * ((1j * m * a) ** k)
                             for m, cf in self.coeffs.items()}, self.dim, a)

    def x_derivative(self, k: int) -> "XiTrigSymbol":
        return XiTrigSymbol({m: _JetShift(cf, k) for m, cf in self.coeffs.items()},
                            self.dim, self.freq)

    def prod(self, other: "XiTrigSymbol") -> "XiTrigSymbol":
        if abs(other.freq - self.freq) > 1e-12:
            raise ValueError("trig symbols with different xi-frequencies")
        out: dict = {}
        for m1, c1 in self.coeffs.items():
            for m2, c2 in other.coeffs.items():
                t = c1 @ c2
                m = m1 + m2
                out[m] = t if m not in out else out[m] + t
        return XiTrigSymbol(out, self.dim, self.freq)

    def plus(self, other: "XiTrigSymbol") -> "XiTrigSymbol":
        out = dict(self.coeffs)
        for m, cf in other.coeffs.items():
            out[m] = cf if m not in out else out[m] + cf
        return XiTrigSymbol(out, self.dim, self.freq)

    def scale(self, c) -> "XiTrigSymbol":
        return XiTrigSymbol({m: cf * c for m, cf in self.coeffs.items()},
                            self.dim, self.freq)

    def adjoint_pointwise(self) -> "XiTrigSymbol":
        return XiTrigSymbol({-m: cf.adj() for m, cf in self.coeffs.items()},
                            self.dim, self.freq)

    @property
    def bandwidth(self) -> int:
        return max(abs(m) for m in self.coeffs)


def grid_trig_frequency(g: "GridSpec") -> float:
    """xi-frequency whose harmonics quantize to one-site shifts on the grid."""
    return g.L / (g.N_grid * g.h)


def constant_symbol(mat, n: int = 1) -> PolynomialSymbol:
    mat = np.atleast_2d(np.asarray(mat, dtype=complex))
    return PolynomialSymbol({(0, 0): mat}, mat.shape[0])


@dataclass
class SymbolSeries:
    """Truncated formal series sum_j h^j coeffs[j]."""

    coeffs: list

    def __post_init__(self):
        dims = {c.dim for c in self.coeffs}
        ns = {c.n for c in self.coeffs}
        if len(dims) != 1 or len(ns) != 1:
            raise ValueError("series coefficients disagree in dim or nuclear dim")

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def dim(self) -> int:
        return self.coeffs[0].dim

    @property
    def n(self) -> int:
        return self.coeffs[0].n

    def coefficient(self, j: int):
        return self.coeffs[j]

    def eval_total(self, x, xi, h: float) -> np.ndarray:
        out = self.coeffs[0].eval(x, xi)
        for j, c in enumerate(self.coeffs[1:], start=1):
            out = out + (h ** j) * c.eval(x, xi)
        return out

    @staticmethod
    def from_symbol(a: PhaseSymbol, order: int = 0) -> "SymbolSeries":
        zero = constant_symbol(np.zeros((a.dim, a.dim)), a.n) if a.n == 1 else \
            FunctionSymbol(lambda x, xi, ax, axi:
                           np.zeros(np.broadcast_shapes(x.shape[:-1], xi.shape[:-1]) + (a.dim, a.dim)),
                           a.dim, a.n, UNLIMITED)
        return SymbolSeries([a] + [zero] * order)


def _moyal_term(ak: PhaseSymbol, bl: PhaseSymbol, m: int, n: int):
    """sum_{|alpha|=m} (1/(i^m alpha!)) d_xi^alpha a_k d_x^alpha b_l."""
    terms = []
    pref = (1 / 1j) ** m
    fast = (type(ak) is type(bl)
            and isinstance(ak, (XiPolySymbol, XiTrigSymbol)) and n == 1)
    for alpha in multi_indices(n, m):
        w = pref / _factorial_mi(alpha)
        zeros = (0,) * n
        if fast:
            t = ak.xi_derivative(m).prod(bl.x_derivative(m))
            terms.append(t.scale(w))
        else:
            da = ak.shifted(zeros, alpha)
            db = bl.shifted(alpha, zeros)
            terms.append(_Scaled(_Prod(da, db), w))
    if len(terms) == 1:
        return terms[0]
    if all(isinstance(t, (XiPolySymbol, XiTrigSymbol)) for t in terms):
        out = terms[0]
        for t in terms[1:]:
            out = out.plus(t)
        return out
    return _Sum(terms)


def _add_syms(parts):
    parts = [p for p in parts if p is not None]
    if not parts:
        return None
    first = type(parts[0])
    if (issubclass(first, (XiPolySymbol, XiTrigSymbol))
            and all(type(p) is first for p in parts)):
        out = parts[0]
        for p in parts[1:]:
            out = out.plus(p)
        return out
    return parts[0] if len(parts) == 1 else _Sum(parts)


def moyal_product(a: SymbolSeries, b: SymbolSeries, order: int) -> SymbolSeries:
    """Truncation at the given order of the composition product a#b."""
    if a.dim != b.dim or a.n != b.n:
        raise ValueError("dimension mismatch between factors")
    n = a.n
    for c in a.coeffs + b.coeffs:
        if c.max_deriv < order:
            raise ValueError("insufficient max_deriv for requested order")
    out = []
    for j in range(order + 1):
        parts = []
        for k in range(min(j, a.order) + 1):
            for l in range(min(j - k, b.order) + 1):
                m = j - k - l
                parts.append(_moyal_term(a.coeffs[k], b.coeffs[l], m, n))
        s = _add_syms(parts)
        if s is None:
            c0 = a.coeffs[0]
            if isinstance(c0, XiTrigSymbol):
                s = XiTrigSymbol({0: JetConst(np.zeros((a.dim, a.dim)))},
                                 a.dim, c0.freq)
            elif isinstance(c0, XiPolySymbol):
                s = XiPolySymbol([JetConst(np.zeros((a.dim, a.dim)))], a.dim)
            else:
                s = constant_symbol(np.zeros((a.dim, a.dim)))
        out.append(s)
    return SymbolSeries(out)


def moyal_commutator(a: SymbolSeries, b: SymbolSeries, order: int) -> SymbolSeries:
    ab = moyal_product(a, b, order)
    ba = moyal_product(b, a, order)
    return series_add(ab, series_scale(ba, -1.0))


def series_add(a: SymbolSeries, b: SymbolSeries) -> SymbolSeries:
    na, nb = len(a.coeffs), len(b.coeffs)
    out = []
    for j in range(max(na, nb)):
        parts = []
        if j < na:
            parts.append(a.coeffs[j])
        if j < nb:
            parts.append(b.coeffs[j])
        out.append(_add_syms(parts))
    return SymbolSeries(out)


def series_scale(a: SymbolSeries, c) -> SymbolSeries:
    out = []
    for s in a.coeffs:
        out.append(s.scale(c) if isinstance(s, (XiPolySymbol, XiTrigSymbol))
                   else _Scaled(s, c))
    return SymbolSeries(out)


def symbol_adjoint(a: SymbolSeries, order: int, full: bool = False) -> SymbolSeries:
    """Pointwise conjugate-transpose series; with full=True, the symbol of
    the operator adjoint: sum_alpha h^|alpha|/(i^|alpha| alpha!)
    d_xi^alpha d_x^alpha (a_k^*)."""
    n = a.n
    if not full:
        out = [c.adjoint_pointwise() if isinstance(c, (XiPolySymbol, XiTrigSymbol))
               else _Adj(c) for c in a.coeffs]
        return SymbolSeries(out)
    for c in a.coeffs:
        if c.max_deriv < order:
            raise ValueError("insufficient max_deriv for full adjoint")
    out = []
    for j in range(order + 1):
        parts = []
        for k in range(min(j, a.order) + 1):
            m = j - k
            pref = (1 / 1j) ** m
            for alpha in multi_indices(n, m):
                w = pref / _factorial_mi(alpha)
                ck = a.coeffs[k]
                if isinstance(ck, (XiPolySymbol, XiTrigSymbol)):
                    parts.append(
                        ck.adjoint_pointwise().xi_derivative(m).x_derivative(m).scale(w))
                else:
                    parts.append(_Scaled(_Shift(_Adj(ck), alpha, alpha), w))
        out.append(_add_syms(parts))
    return SymbolSeries(out)


# ---------------------------------------------------------------------------
# discrete quantization on a periodic grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Periodic 1-D nuclear grid: x_j = -L/2 + j L/N, xi_k = 2 pi h k / L."""

    L: float
    N_grid: int
    h: float
    n: int = 1

    def __post_init__(self):
        if self.n != 1:
            raise ValueError("grid quantization supports n == 1 only")
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.h <= 0:
            raise ValueError("h must be positive")
        N = self.N_grid
        if N < 2 or (N & (N - 1)) != 0:
            raise ValueError("N_grid must be a power of two")

    @property
    def dx(self) -> float:
        return self.L / self.N_grid

    @property
    def xs(self) -> np.ndarray:
        return -self.L / 2 + self.dx * np.arange(self.N_grid)

    @property
    def ks(self) -> np.ndarray:
        """Integer mode numbers in FFT order (0..N/2-1, -N/2..-1)."""
        return np.rint(np.fft.fftfreq(self.N_grid) * self.N_grid).astype(int)

    @property
    def xis(self) -> np.ndarray:
        return 2 * np.pi * self.h * self.ks / self.L

    def replace_h(self, h: float) -> "GridSpec":
        return GridSpec(self.L, self.N_grid, h, self.n)


def _symbol_tables(a: SymbolSeries, g: GridSpec) -> np.ndarray:
    """S[i, k] = sum_m h^m a_m(x_i, xi_k), shape (N, N, dim, dim)."""
    xs, xis = g.xs, g.xis
    X = xs[:, None]
    XI = xis[None, :]
    S = np.zeros((g.N_grid, g.N_grid, a.dim, a.dim), dtype=complex)
    for m, c in enumerate(a.coeffs):
        S += (g.h ** m) * c.eval(X, XI)
    return S


def quantize(a: SymbolSeries, g: GridSpec) -> np.ndarray:
    """Dense standard-quantization matrix of the series on the grid.

    With u_hat(k) = (1/N) sum_j e^{-2 pi i j k/N} u(x_j), the operator acts as
    (A u)(x_i) = sum_k S(x_i, xi_k) u_hat(k) e^{+2 pi i i k/N}.
    """
    if a.n != 1:
        raise ValueError("quantization requires n == 1")
    if all(isinstance(c, XiPolySymbol) for c in a.coeffs):
        return _quantize_xipoly(a, g)
    if all(isinstance(c, XiTrigSymbol) for c in a.coeffs):
        return _quantize_xitrig(a, g)
    N, d = g.N_grid, a.dim
    S = _symbol_tables(a, g)
    j_idx = np.arange(N)
    E = np.exp(2j * np.pi * np.outer(j_idx, g.ks) / N)           # (i, k)
    F = np.exp(-2j * np.pi * np.outer(g.ks, j_idx) / N) / N      # (k, j)
    A = np.einsum("ik,ikpq,kj->ipjq", E, S, F, optimize=True)
    return A.reshape(N * d, N * d)


def _quantize_xitrig(a: SymbolSeries, g: GridSpec) -> np.ndarray:
    """Each harmonic c_m(x) e^{i m a xi} with the grid frequency quantizes to
    multiplication by c_m followed by a cyclic shift of m sites."""
    N, d = g.N_grid, a.dim
    A = np.zeros((N, d, N, d), dtype=complex)
    i_idx = np.arange(N)
    for order, c in enumerate(a.coeffs):
        hm = g.h ** order
        if abs(c.freq - grid_trig_frequency(g)) > 1e-9 * c.freq:
            raise ValueError("trig symbol frequency does not match the grid")
        for m, cf in c.coeffs.items():
            vals = cf.jets(g.xs, 0)[:, 0]
            j_idx = (i_idx + m) % N
            A[i_idx, :, j_idx, :] += hm * vals
    return A.reshape(N * d, N * d)


def _quantize_xipoly(a: SymbolSeries, g: GridSpec) -> np.ndarray:
    """Standard quantization factorizes per xi-power: Op(c(x) xi^d) = M_c Op(xi^d)."""
    N, d = g.N_grid, a.dim
    j_idx = np.arange(N)
    E = np.exp(2j * np.pi * np.outer(j_idx, g.ks) / N)
    F = np.exp(-2j * np.pi * np.outer(g.ks, j_idx) / N) / N
    dmax = max(c.xi_degree for c in a.coeffs)
    mult = {p: (E * (g.xis ** p)[None, :]) @ F for p in range(dmax + 1)}
    A = np.zeros((N, d, N, d), dtype=complex)
    for m, c in enumerate(a.coeffs):
        hm = g.h ** m
        for p, cf in enumerate(c.xi_coeffs):
            vals = cf.jets(g.xs, 0)[:, 0]                       # (N, d, d)
            A += hm * np.einsum("ipq,ij->ipjq", vals, mult[p], optimize=True)
    return A.reshape(N * d, N * d)


def quantize_apply(a: SymbolSeries, g: GridSpec, u: np.ndarray) -> np.ndarray:
    """Matrix-free application of the quantized series to u (N_grid, dim)."""
    N, d = g.N_grid, a.dim
    u = u.reshape(N, d)
    uhat = np.fft.fft(u, axis=0) / N                              # FFT order = ks order
    S = _symbol_tables(a, g)
    j_idx = np.arange(N)
    E = np.exp(2j * np.pi * np.outer(j_idx, g.ks) / N)
    out = np.einsum("ik,ikpq,kq->ip", E, S, uhat, optimize=True)
    return out


# ---------------------------------------------------------------------------
# derivative verification
# ---------------------------------------------------------------------------

@dataclass
class DerivativeReport:
    max_rel_err: float
    passed: bool
    tol: float
    worst: tuple = field(default=())


def _fd_richardson(f, t0: float, delta: float) -> np.ndarray:
    def cd(dd):
        return (f(t0 + dd) - f(t0 - dd)) / (2 * dd)
    return (4 * cd(delta / 2) - cd(delta)) / 3


def _fd2_richardson(f, t0: float, delta: float) -> np.ndarray:
    def cd2(dd):
        return (f(t0 + dd) - 2 * f(t0) + f(t0 - dd)) / dd ** 2
    return (4 * cd2(delta / 2) - cd2(delta)) / 3


def verify_derivatives(s: PhaseSymbol, samples: int = 8, tol: float = 1e-6,
                       rng=None, box: float = 1.0, delta: float = 1e-3) -> DerivativeReport:
    """Compare supplied first/second derivatives against Richardson-extrapolated
    central differences of the raw evaluation at random phase-space points."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    if s.n != 1:
        raise ValueError("verification implemented for n == 1")
    worst = ()
    err = 0.0
    checks = [((1,), (0,)), ((0,), (1,))]
    if s.max_deriv >= 2:
        checks += [((2,), (0,)), ((0,), (2,)), ((1,), (1,))]
    for _ in range(samples):
        x0 = rng.uniform(-box, box)
        xi0 = rng.uniform(-box, box)
        for ax, axi in checks:
            analytic = s.eval(np.array([x0]), np.array([xi0]), (ax, axi))[0]
            total = sum(ax) + sum(axi)
            if total == 1:
                if ax[0] == 1:
                    fd = _fd_richardson(lambda t: s.eval(np.array([t]), np.array([xi0]))[0], x0, delta)
                else:
                    fd = _fd_richardson(lambda t: s.eval(np.array([x0]), np.array([t]))[0], xi0, delta)
            else:
                if ax == (2,):
                    fd = _fd2_richardson(lambda t: s.eval(np.array([t]), np.array([xi0]))[0], x0, delta)
                elif axi == (2,):
                    fd = _fd2_richardson(lambda t: s.eval(np.array([x0]), np.array([t]))[0], xi0, delta)
                else:
                    fd = _fd_richardson(
                        lambda t: s.eval(np.array([t]), np.array([xi0]), ((0,), (1,)))[0], x0, delta)
            scale = max(np.max(np.abs(analytic)), np.max(np.abs(fd)), 1.0)
            e = float(np.max(np.abs(analytic - fd)) / scale)
            if e > err:
                err, worst = e, (x0, xi0, ax, axi)
    return DerivativeReport(max_rel_err=err, passed=err <= tol, tol=tol, worst=worst)
