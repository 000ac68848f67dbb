"""Recursive super-adiabatic projection hierarchy and operator reduction.

The symbol recursion cancels, order by order, the idempotency defect
Pi # Pi - Pi and the commutation defect [p, Pi]# of the projection series.
At the operator level the quantized, Hermitized series is cleaned to an
exact orthogonal projection, intertwined with the bare band projection by
the Nagy unitary, and reduced to an L-channel effective operator A = W P W*.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .electronic import ElectronicModel, SpectralFrame, gauge_fix
from .jets import JetConst, JetEmbed, JetFn, jet_inv, jet_mul
from .omega import OmegaParams, kinetic_matrix
from .symbols import (GridSpec, SymbolSeries, XiPolySymbol, moyal_product,
                      quantize, series_add, series_scale)

__all__ = [
    "ProjectionHierarchy", "ReductionArtifacts", "SpectralSplitError",
    "full_symbol", "initial_hierarchy", "recursion_step", "nu_constants",
    "build_projection_operator", "nagy_intertwiner", "reduction_map",
    "reduced_operator", "commutator_defect", "hamiltonian_matrix",
    "block_projection", "build_reduction", "operator_norm",
    "spectral_function", "build_hierarchy", "sample_defect_norms", "channel_map",
]


class SpectralSplitError(RuntimeError):
    """Quantized projection series not separated at 1/2; reduce h."""


def operator_norm(A: np.ndarray, rtol: float = 1e-10, max_iter: int = 600) -> float:
    """Spectral norm; exact SVD for small matrices, power iteration above.

    The power iteration uses a fixed seed so repeated runs are bitwise
    deterministic.
    """
    if A.shape[0] <= 384:
        return float(np.linalg.norm(A, 2))
    rng = np.random.default_rng(7)
    v = rng.standard_normal(A.shape[1]) + 1j * rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    Ah = A.conj().T
    last = 0.0
    for _ in range(max_iter):
        w = A @ v
        s = np.linalg.norm(w)
        if s == 0.0:
            return 0.0
        v = Ah @ w
        nv = np.linalg.norm(v)
        v /= nv
        if abs(s - last) <= rtol * max(s, 1e-300):
            break
        last = s
    return float(s)


# ---------------------------------------------------------------------------
# symbols
# ---------------------------------------------------------------------------

def full_symbol(model: ElectronicModel, omega: OmegaParams | None = None,
                order: int = 3) -> SymbolSeries:
    """p = omega + Q(x) + W(x), as a xi-polynomial series of the given order."""
    omega = omega or OmegaParams()
    N = model.N_el
    w = omega.symbol_terms(N)
    qw = XiPolySymbol([model.Q + JetEmbed(model.W, N)], N)
    zero = XiPolySymbol([JetConst(np.zeros((N, N)))], N)
    coeffs = [w[0].plus(qw)]
    for j in range(1, order + 1):
        coeffs.append(w[j] if j < len(w) else zero)
    return SymbolSeries(coeffs)


class _JetGapInverter(JetFn):
    """-(1/2pi) contour integral of R(z) [P^ S P - P S P^] R(z) dz.

    Values (order 0) come from the spectral-sum form over cluster/non-cluster
    eigenpairs; higher jet slots from trapezoidal contour quadrature, which is
    exponentially accurate across the gap.  quadrature_value() exposes the
    order-0 quadrature as a cross-check of the formula as written.
    """

    def __init__(self, model: ElectronicModel, f: JetFn):
        super().__init__()
        self.model = model
        self.f = f
        self.dim = model.N_el

    def _spectral_value(self, x: np.ndarray) -> np.ndarray:
        m = self.model
        lam, vec = np.linalg.eigh(m.Q_at(x))
        fv = self.f.jets(x, 0)[:, 0]
        cl = np.zeros(m.N_el, dtype=bool)
        cl[m.L_prime:m.L_prime + m.L] = True
        out = np.zeros_like(fv)
        for b in range(x.size):
            V = vec[b]
            fe = V.conj().T @ fv[b] @ V          # f in the eigenbasis
            lamb = lam[b]
            W = np.zeros_like(fe)
            li, lo = lamb[cl], lamb[~cl]
            # a in cluster, b outside: +i f_ab/(la - lb); transposed block: -i
            W[np.ix_(cl, ~cl)] = 1j * fe[np.ix_(cl, ~cl)] / (li[:, None] - lo[None, :])
            W[np.ix_(~cl, cl)] = -1j * fe[np.ix_(~cl, cl)] / (li[None, :] - lo[:, None])
            out[b] = V @ W @ V.conj().T
        return out

    def _quadrature(self, x: np.ndarray, K: int) -> np.ndarray:
        m = self.model
        Qj = m.Q.jets(x, K)
        fj = self.f.jets(x, K)
        pij = m.pi0_jet().jets(x, K)
        eye = np.zeros_like(pij)
        eye[:, 0] = np.eye(m.N_el)
        perp = eye - pij
        B = jet_mul(perp, jet_mul(fj, pij)) - jet_mul(pij, jet_mul(fj, perp))
        lam = np.linalg.eigvalsh(Qj[:, 0])
        centers, radii = m._cluster_contour(lam)
        M = m.contour_nodes
        theta = 2 * np.pi * (np.arange(M) + 0.5) / M
        out = np.zeros_like(Qj)
        idm = np.eye(m.N_el)
        for t in theta:
            z = centers + radii * np.exp(1j * t)
            A = -Qj.copy()
            A[:, 0] += z[:, None, None] * idm
            R = jet_inv(A)
            w = -(1j * radii * np.exp(1j * t)) / M
            out += w[:, None, None, None] * jet_mul(R, jet_mul(B, R))
        return out

    def quadrature_value(self, x) -> np.ndarray:
        return self._quadrature(np.atleast_1d(x), 0)[:, 0]

    def _jets(self, x, K):
        if K == 0:
            return self._spectral_value(x)[:, None]
        out = self._quadrature(x, K)
        out[:, 0] = self._spectral_value(x)
        return out


@dataclass
class ProjectionHierarchy:
    """Projection series Pi_0..Pi_M with its leading defect series.

    S holds the commutation defect ([p, Pi]# = -i h^{M+1} S) and T the
    idempotency defect (Pi # Pi - Pi = h^{M+1} T), each to `extra` orders
    beyond the leading one.  nu lists the Nagy series constants.
    """

    model: ElectronicModel
    omega: OmegaParams
    M: int
    Pi: SymbolSeries
    S: SymbolSeries
    T: SymbolSeries
    p: SymbolSeries
    extra: int = 1
    nu: list = field(default_factory=list)

    def __post_init__(self):
        if not self.nu:
            self.nu = nu_constants(max(self.M, 1))


def _defect_series(p: SymbolSeries, Pi: SymbolSeries, M: int, extra: int):
    """(S, T) defect series from exact coefficient extraction."""
    top = M + 1 + extra
    com = series_add(moyal_product(p, Pi, top), series_scale(moyal_product(Pi, p, top), -1.0))
    idem = series_add(moyal_product(Pi, Pi, top), series_scale(Pi, -1.0))
    S = SymbolSeries([c.scale(1j) for c in com.coeffs[M + 1:]])
    T = SymbolSeries(list(idem.coeffs[M + 1:]))
    return S, T


def initial_hierarchy(model: ElectronicModel, omega: OmegaParams | None = None,
                      extra: int = 1, order: int = 5) -> ProjectionHierarchy:
    """Order zero: the bare band projection Pi_0(x)."""
    omega = omega or OmegaParams()
    p = full_symbol(model, omega, order=order)
    Pi = SymbolSeries([XiPolySymbol([model.pi0_jet()], model.N_el)])
    S, T = _defect_series(p, Pi, 0, extra)
    return ProjectionHierarchy(model=model, omega=omega, M=0, Pi=Pi, S=S, T=T,
                               p=p, extra=extra)


def recursion_step(state: ProjectionHierarchy) -> ProjectionHierarchy:
    """Advance the hierarchy one order: cancel the current leading defects."""
    m = state.model
    N = m.N_el
    s_lead = state.S.coeffs[0]
    t_lead = state.T.coeffs[0]
    pi0 = XiPolySymbol([m.pi0_jet()], N)
    perp = XiPolySymbol([JetConst(np.eye(N)) + m.pi0_jet() * (-1.0)], N)
    contour = XiPolySymbol(
        [_JetGapInverter(m, c) for c in s_lead.xi_coeffs], N)
    diag = perp.prod(t_lead).prod(perp).plus(pi0.prod(t_lead).prod(pi0).scale(-1.0))
    pi_next = contour.plus(diag)
    Pi = SymbolSeries(list(state.Pi.coeffs) + [pi_next])
    S, T = _defect_series(state.p, Pi, state.M + 1, state.extra)
    return ProjectionHierarchy(model=m, omega=state.omega, M=state.M + 1,
                               Pi=Pi, S=S, T=T, p=state.p, extra=state.extra)


def build_hierarchy(model: ElectronicModel, omega: OmegaParams | None = None,
                    M: int = 3, extra: int = 1) -> ProjectionHierarchy:
    state = initial_hierarchy(model, omega, extra=extra, order=max(M + 2, 5))
    for _ in range(M):
        state = recursion_step(state)
    return state


def nu_constants(k_max: int) -> list[Fraction]:
    """nu_k = (2k-1)! / (2^{2k-1} k! (k-1)!) for k = 1..k_max, exactly."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    return [Fraction(math.factorial(2 * k - 1),
                     2 ** (2 * k - 1) * math.factorial(k) * math.factorial(k - 1))
            for k in range(1, k_max + 1)]


def sample_defect_norms(state: ProjectionHierarchy, xs, xis) -> dict:
    """Max-abs of the defect coefficients 0..M at sampled phase-space points.

    Both defects are recomputed from scratch (not read off state.S/T, which
    start at order M+1): coefficients up to M must vanish.
    """
    top = state.M
    p, Pi = state.p, state.Pi
    com = series_add(moyal_product(p, Pi, top),
                     series_scale(moyal_product(Pi, p, top), -1.0))
    idem = series_add(moyal_product(Pi, Pi, top), series_scale(Pi, -1.0))
    X = np.asarray(xs)[:, None]
    XI = np.asarray(xis)[None, :]
    out = {"idempotency": [], "commutation": []}
    for j in range(top + 1):
        out["idempotency"].append(float(np.max(np.abs(idem.coeffs[j].eval(X, XI)))))
        out["commutation"].append(float(np.max(np.abs(com.coeffs[j].eval(X, XI)))))
    return out


# ---------------------------------------------------------------------------
# operator level
# ---------------------------------------------------------------------------

def hamiltonian_matrix(model: ElectronicModel, g: GridSpec,
                       omega: OmegaParams | None = None) -> np.ndarray:
    """Dense Hermitian P = kinetic + Q(x) + W(x) on the grid."""
    omega = omega or OmegaParams()
    N, d = g.N_grid, model.N_el
    P = kinetic_matrix(omega, g, d)
    Qv = model.Q_at(g.xs) + model.W_at(g.xs)[:, None, None] * np.eye(d)
    P = P.reshape(N, d, N, d)
    idx = np.arange(N)
    P[idx, :, idx, :] += Qv
    return P.reshape(N * d, N * d)


def block_projection(frame: SpectralFrame, g: GridSpec) -> np.ndarray:
    """Block-diagonal band projection Pi_0 assembled from the frame."""
    N, d = g.N_grid, frame.Pi0.shape[1]
    A = np.zeros((N, d, N, d), dtype=complex)
    idx = np.arange(N)
    A[idx, :, idx, :] = frame.Pi0
    return A.reshape(N * d, N * d)


def spectral_function(H: np.ndarray, f, eig=None) -> np.ndarray:
    """f(H) for Hermitian H through the exact eigendecomposition.

    Pass eig = (evals, evecs) to reuse a decomposition across filters.
    """
    evals, evecs = np.linalg.eigh(H) if eig is None else eig
    return (evecs * np.asarray(f(evals))[None, :]) @ evecs.conj().T


@dataclass
class ProjectionOperators:
    Pihat: np.ndarray         # raw quantized series
    draft: np.ndarray         # Hermitian draft fed to the spectral cleanup
    herm_defect: float        # || Pihat - Pihat* ||, window-localized if dressed
    idem_defect: float        # || (draft^2 - draft) localize ||
    Pi_g: np.ndarray
    rank: int
    worst_eig_distance: float
    cleanup_shift: float      # || (Pi_g - draft) localize ||


def build_projection_operator(state: ProjectionHierarchy, g: GridSpec,
                              g_window=None, f_window=None,
                              Phat: np.ndarray | None = None,
                              Pi0hat: np.ndarray | None = None,
                              P_eig=None,
                              guard: tuple = (0.25, 0.75)) -> ProjectionOperators:
    """Quantize the series, symmetrize, and clean spectrally at 1/2.

    Without windows the draft is the plain Hermitization (Pihat + Pihat*)/2.
    With an energy window g the draft follows the symmetrized dressing
        G Pihat + Pihat* G - G Re(Pihat) G + (1 - G) Pi_0 (1 - G),
    G = g(P), which pins the draft to the exact band projection outside the
    window; defect norms are then localized by f(P) (Supp f inside {g = 1}).
    """
    Pihat = quantize(state.Pi, g)
    dim = Pihat.shape[0]
    raw_herm = Pihat - Pihat.conj().T
    F = None
    if g_window is not None:
        if Phat is None:
            Phat = hamiltonian_matrix(state.model, g, state.omega)
        if Pi0hat is None:
            Pi0hat = block_projection(gauge_fix(state.model, g), g)
        if P_eig is None:
            P_eig = np.linalg.eigh(Phat)
        G = spectral_function(Phat, g_window, P_eig)
        Gc = np.eye(dim) - G
        herm = 0.5 * (Pihat + Pihat.conj().T)
        draft = (G @ Pihat + Pihat.conj().T @ G - G @ herm @ G
                 + Gc @ Pi0hat @ Gc)
        draft = 0.5 * (draft + draft.conj().T)
        if f_window is not None:
            F = spectral_function(Phat, f_window, P_eig)
        herm_defect = operator_norm(G @ raw_herm @ G)
    else:
        draft = 0.5 * (Pihat + Pihat.conj().T)
        herm_defect = operator_norm(raw_herm)

    idem = draft @ draft - draft
    idem_defect = operator_norm(idem if F is None else idem @ F)
    evals, evecs = np.linalg.eigh(draft)
    inside = (evals > guard[0]) & (evals < guard[1])
    if np.any(inside):
        raise SpectralSplitError(
            f"{int(np.sum(inside))} eigenvalues of the projection draft lie in "
            f"({guard[0]}, {guard[1]}) (closest to 1/2: "
            f"{evals[inside][np.argmin(np.abs(evals[inside] - 0.5))]:.4f}); reduce h")
    keep = evals > 0.5
    U = evecs[:, keep]
    Pi_g = U @ U.conj().T
    Pi_g = 0.5 * (Pi_g + Pi_g.conj().T)
    worst = float(np.max(np.minimum(np.abs(evals), np.abs(evals - 1.0))))
    shift = Pi_g - draft
    return ProjectionOperators(Pihat=Pihat, draft=draft, herm_defect=herm_defect,
                               idem_defect=idem_defect, Pi_g=Pi_g,
                               rank=int(np.sum(keep)), worst_eig_distance=worst,
                               cleanup_shift=operator_norm(shift if F is None else shift @ F))


def nagy_intertwiner(Pi_g: np.ndarray, Pi0hat: np.ndarray) -> np.ndarray:
    """Unitary V with Pi0hat V = V Pi_g, from the Nagy formula."""
    D = Pi_g - Pi0hat
    nD = operator_norm(D)
    if nD >= 1.0:
        raise ValueError(f"projection distance {nD:.3f} >= 1; no intertwiner")
    core = np.eye(D.shape[0]) - D @ D
    w, v = np.linalg.eigh(core)
    inv_sqrt = (v * (w ** -0.5)[None, :]) @ v.conj().T
    eye = np.eye(D.shape[0])
    return (Pi0hat @ Pi_g + (eye - Pi0hat) @ (eye - Pi_g)) @ inv_sqrt


def channel_map(frame: SpectralFrame, g: GridSpec) -> np.ndarray:
    """Z: full grid space -> L scalar channels, (Z psi)(x)_k = <psi(x), u_k(x)>."""
    N, d, L = g.N_grid, frame.u.shape[1], frame.L
    Z = np.zeros((N * L, N * d), dtype=complex)
    for k in range(L):
        for i in range(N):
            Z[i * L + k, i * d:(i + 1) * d] = frame.u[i, :, k].conj()
    return Z


def reduction_map(V: np.ndarray, frame: SpectralFrame, g: GridSpec) -> np.ndarray:
    """W = Z o V: partial isometry with W W* = 1 and W* W = Pi_g."""
    return channel_map(frame, g) @ V


def reduced_operator(W: np.ndarray, Phat: np.ndarray) -> np.ndarray:
    return W @ Phat @ W.conj().T


def commutator_defect(Phat: np.ndarray, Pi_g: np.ndarray, f_window,
                      P_eig=None) -> float:
    """|| [f(P), Pi_g] || with f applied through the exact eigendecomposition."""
    F = spectral_function(Phat, f_window, P_eig)
    return operator_norm(F @ Pi_g - Pi_g @ F)


@dataclass
class ReductionArtifacts:
    """Everything the reduction produces on one grid at one h."""

    model: ElectronicModel
    grid: GridSpec
    omega: OmegaParams
    hierarchy: ProjectionHierarchy
    frame: SpectralFrame
    Phat: np.ndarray
    Pi0hat: np.ndarray
    ops: ProjectionOperators
    V: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    A: np.ndarray
    P_evals: np.ndarray = None
    P_evecs: np.ndarray = None

    @property
    def Pi_g(self) -> np.ndarray:
        return self.ops.Pi_g

    def energy_filter(self, f) -> np.ndarray:
        return spectral_function(self.Phat, f, (self.P_evals, self.P_evecs))


def build_reduction(model: ElectronicModel, g: GridSpec, M: int = 2,
                    omega: OmegaParams | None = None,
                    hierarchy: ProjectionHierarchy | None = None,
                    frame: SpectralFrame | None = None,
                    g_window=None, f_window=None) -> ReductionArtifacts:
    """Assemble the full reduction pipeline on one grid.

    The hierarchy is h-independent, so callers sweeping h should build it
    once with build_hierarchy and pass it in.
    """
    omega = omega or OmegaParams()
    if hierarchy is None:
        hierarchy = build_hierarchy(model, omega, M=M)
    if frame is None:
        frame = gauge_fix(model, g)
    Phat = hamiltonian_matrix(model, g, omega)
    Pi0hat = block_projection(frame, g)
    P_eig = np.linalg.eigh(Phat)
    ops = build_projection_operator(hierarchy, g, g_window=g_window,
                                    f_window=f_window, Phat=Phat,
                                    Pi0hat=Pi0hat, P_eig=P_eig)
    V = nagy_intertwiner(ops.Pi_g, Pi0hat)
    Z = channel_map(frame, g)
    W = Z @ V
    A = reduced_operator(W, Phat)
    return ReductionArtifacts(model=model, grid=g, omega=omega,
                              hierarchy=hierarchy, frame=frame, Phat=Phat,
                              Pi0hat=Pi0hat, ops=ops, V=V, Z=Z, W=W, A=A,
                              P_evals=P_eig[0], P_evecs=P_eig[1])
