"""Nuclear kinetic-energy forms: plain xi^2/2 and the magnetic variant.

The magnetic form carries the standard-quantization symbol series
omega_0 + h omega_1 + h^2 omega_2 of (1/2b)(hD - (c + h d)A(x))^2:
    omega_0 = (xi - c A)^2 / (2b)
    omega_1 = [2 d A (c A - xi) + i c A'] / (2b)
    omega_2 = [d^2 A^2 + i d A'] / (2b)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jets import JetConst, JetEmbed, JetFn, JetProd
from .symbols import GridSpec, XiPolySymbol, _JetShift

__all__ = ["OmegaParams", "kinetic_matrix"]


def _fourier_multiplier(g: GridSpec, values: np.ndarray) -> np.ndarray:
    """Dense N x N matrix of a Fourier multiplier with the given values per mode."""
    N = g.N_grid
    j = np.arange(N)
    E = np.exp(2j * np.pi * np.outer(j, g.ks) / N)
    F = np.exp(-2j * np.pi * np.outer(g.ks, j) / N) / N
    return (E * values[None, :]) @ F


@dataclass
class OmegaParams:
    """Kinetic form parameters; kind 'quadratic' is (xi^2)/2, kind 'magnetic'
    is (1/2b)(hD - (c + h d) A(x))^2 with a harmonic vector potential."""

    kind: str = "quadratic"
    b: float = 1.0
    c: float = 0.0
    d: float = 0.0
    A: JetFn | None = None     # scalar 1x1 jet, required for 'magnetic'

    def __post_init__(self):
        if self.kind not in ("quadratic", "magnetic"):
            raise ValueError(f"unknown kinetic kind {self.kind!r}")
        if self.kind == "magnetic" and self.A is None:
            raise ValueError("magnetic kinetic form needs a vector potential A")

    # symbol series --------------------------------------------------------
    def symbol_terms(self, dim: int) -> list[XiPolySymbol]:
        """[w_0, w_1, w_2] as dim x dim xi-polynomials (w_1=w_2=0 if plain)."""
        eye = JetConst(np.eye(dim))
        zero = JetConst(np.zeros((dim, dim)))
        if self.kind == "quadratic":
            w0 = XiPolySymbol([zero, zero, eye * 0.5], dim)
            z = XiPolySymbol([zero], dim)
            return [w0, z, z]
        b, c, d = self.b, self.c, self.d
        A = self.A
        Ap = _JetShift(A, 1)
        A2 = JetProd(A, A)

        def emb(s: JetFn, coef: complex) -> JetFn:
            return JetEmbed(s, dim) * coef

        w0 = XiPolySymbol([emb(A2, c * c / (2 * b)),
                           emb(A, -c / b),
                           eye * (0.5 / b)], dim)
        w1 = XiPolySymbol([emb(A2, 2 * d * c / (2 * b)) + emb(Ap, 1j * c / (2 * b)),
                           emb(A, -d / b)], dim)
        w2 = XiPolySymbol([emb(A2, d * d / (2 * b)) + emb(Ap, 1j * d / (2 * b))], dim)
        return [w0, w1, w2]

    # classical data ---------------------------------------------------------
    def omega0(self, x, xi):
        if self.kind == "quadratic":
            return 0.5 * np.asarray(xi) ** 2
        a = self.A.value(np.atleast_1d(x))[..., 0, 0].real.reshape(np.shape(x))
        return (xi - self.c * a) ** 2 / (2 * self.b)

    def omega0_grad(self, x, xi):
        """(d/dx, d/dxi) of omega_0."""
        if self.kind == "quadratic":
            return np.zeros_like(np.asarray(x, dtype=float)), np.asarray(xi, dtype=float)
        xs = np.atleast_1d(x)
        a = self.A.value(xs)[..., 0, 0].real.reshape(np.shape(x))
        ap = self.A.jets(xs, 1)[:, 1, 0, 0].real.reshape(np.shape(x))
        u = (xi - self.c * a) / self.b
        return -self.c * ap * u, u

    def omega0_hess(self, x, xi):
        """2x2 Hessian in (x, xi)."""
        if self.kind == "quadratic":
            return np.array([[0.0, 0.0], [0.0, 1.0]])
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        J = self.A.jets(xs, 2)[0, :, 0, 0].real
        a, ap, app = J
        u = xi - self.c * a
        hxx = (self.c ** 2 * ap ** 2 - self.c * app * u) / self.b
        hxxi = -self.c * ap / self.b
        return np.array([[hxx, hxxi], [hxxi, 1.0 / self.b]])


def kinetic_matrix(omega: OmegaParams, g: GridSpec, dim: int) -> np.ndarray:
    """Manifestly Hermitian dense kinetic operator on the grid.

    Plain: Fourier multiplier xi^2/2.  Magnetic: (1/2b)(K - a M_A)^2 with
    K the momentum multiplier and a = c + h d; its standard-quantization
    symbol is the omega series above.
    """
    N = g.N_grid
    if omega.kind == "quadratic":
        K2 = _fourier_multiplier(g, 0.5 * g.xis ** 2)
        return np.kron(K2, np.eye(dim))
    K = _fourier_multiplier(g, g.xis)
    Avals = omega.A.value(g.xs)[..., 0, 0].real
    MA = np.diag(Avals)
    a = omega.c + g.h * omega.d
    D = K - a * MA
    core = (D @ D) / (2 * omega.b)
    core = 0.5 * (core + core.conj().T)
    return np.kron(core, np.eye(dim))
