"""Model electronic Hamiltonians Q(x) with a gapped eigenvalue cluster.

Provides the model catalog, spectral projections (eigendecomposition with a
contour-quadrature cross-check), gauge-fixed eigenvector frames with
Richardson finite-difference derivatives, and reduced resolvents.  Jet nodes
for the projection and reduced resolvent feed the symbol recursion with
analytic x-derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .jets import (JetConst, JetEmbed, JetExp, JetFn, JetInv, JetProd,
                   JetSum, JetTrace, harmonic_rule, jet_inv)

__all__ = [
    "ElectronicModel", "SpectralFrame", "ClusterCrossingError", "GapError",
    "spectral_projection", "gauge_fix", "reduced_resolvent",
    "two_level_model", "six_level_model", "constant_model",
]


class GapError(ValueError):
    pass


class ClusterCrossingError(RuntimeError):
    pass


@dataclass
class ElectronicModel:
    """x-dependent Hermitian matrix Q(x) plus a scalar potential W(x).

    The tracked eigenvalue cluster is lambda_{L'+1} .. lambda_{L'+L} in
    ascending order; gap_margin is the declared lower bound on the distance
    between the cluster and the rest of the spectrum.
    """

    name: str
    N_el: int
    Q: JetFn
    W: JetFn
    L: int = 1
    L_prime: int = 0
    gap_margin: float = 0.1
    params: dict = field(default_factory=dict)
    contour_nodes: int = 64

    def Q_at(self, x, k: int = 0) -> np.ndarray:
        return self.Q.jets(np.atleast_1d(x), k)[:, k]

    def W_at(self, x, k: int = 0) -> np.ndarray:
        return self.W.jets(np.atleast_1d(x), k)[:, k, 0, 0].real

    @property
    def cluster(self) -> slice:
        return slice(self.L_prime, self.L_prime + self.L)

    def eigensystem(self, x) -> tuple[np.ndarray, np.ndarray]:
        lam, vec = np.linalg.eigh(self.Q_at(x))
        return lam, vec

    def measured_gap(self, xs) -> float:
        lam = np.linalg.eigvalsh(self.Q_at(xs))
        lo, hi = self.L_prime, self.L_prime + self.L
        gaps = []
        if lo > 0:
            gaps.append(lam[:, lo] - lam[:, lo - 1])
        if hi < self.N_el:
            gaps.append(lam[:, hi] - lam[:, hi - 1])
        return float(min(np.min(g) for g in gaps)) if gaps else np.inf

    def validate(self, xs, herm_tol: float = 1e-12) -> None:
        Q = self.Q_at(xs)
        herm = np.max(np.abs(Q - np.conj(np.swapaxes(Q, -1, -2))))
        if herm > herm_tol:
            raise ValueError(f"Q(x) not Hermitian: defect {herm:.2e}")
        gap = self.measured_gap(xs)
        if gap < self.gap_margin:
            raise GapError(
                f"measured cluster gap {gap:.3e} below declared margin {self.gap_margin:.3e}")

    def _cluster_contour(self, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-point circle (center, radius) through the middle of the gap."""
        lo, hi = self.L_prime, self.L_prime + self.L
        cl = lam[:, lo:hi]
        cmid = 0.5 * (cl.min(axis=1) + cl.max(axis=1))
        half = 0.5 * (cl.max(axis=1) - cl.min(axis=1))
        room = np.full(lam.shape[0], np.inf)
        if lo > 0:
            room = np.minimum(room, cl.min(axis=1) - lam[:, lo - 1])
        if hi < self.N_el:
            room = np.minimum(room, lam[:, hi] - cl.max(axis=1))
        return cmid, half + 0.5 * room

    # jet nodes (cached so grid evaluations share work) --------------------
    def pi0_jet(self) -> JetFn:
        if not hasattr(self, "_pi0_jet"):
            self._pi0_jet = _JetClusterProjection(self)
        return self._pi0_jet

    def lambda_jet(self) -> JetFn:
        """Cluster eigenvalue as a 1x1 jet (L = 1, or equal-eigenvalue cluster)."""
        if not hasattr(self, "_lambda_jet"):
            self._lambda_jet = JetTrace(JetProd(self.Q, self.pi0_jet())) * (1.0 / self.L)
        return self._lambda_jet

    def reduced_resolvent_jet(self) -> JetFn:
        """R'(x) = Pi0_perp (lambda - Q)^{-1} Pi0_perp as a jet node (L = 1)."""
        if not hasattr(self, "_rr_jet"):
            pi0 = self.pi0_jet()
            lam = JetEmbed(self.lambda_jet(), self.N_el)
            core = JetInv(JetSum([lam, self.Q * (-1.0), pi0]))
            perp = JetSum([JetConst(np.eye(self.N_el)), pi0 * (-1.0)])
            self._rr_jet = JetProd(perp, JetProd(core, perp))
        return self._rr_jet


class _JetClusterProjection(JetFn):
    """Spectral projection onto the cluster, with derivatives of all orders
    from contour quadrature of resolvent jets."""

    def __init__(self, model: ElectronicModel):
        super().__init__()
        self.model = model
        self.dim = model.N_el

    def _jets(self, x, K):
        m = self.model
        Qj = m.Q.jets(x, K)
        lam = np.linalg.eigvalsh(Qj[:, 0])
        centers, radii = m._cluster_contour(lam)
        M = m.contour_nodes
        theta = 2 * np.pi * (np.arange(M) + 0.5) / M
        out = np.zeros_like(Qj)
        eye = np.eye(m.N_el)
        for t in theta:
            z = centers + radii * np.exp(1j * t)            # (B,)
            A = -Qj.copy()
            A[:, 0] += z[:, None, None] * eye
            R = jet_inv(A)
            # weight: (1/2pi i) * dz = (1/2pi i) * i r e^{i t} (2 pi / M)
            w = radii * np.exp(1j * t) / M
            out += w[:, None, None, None] * R
        return out


def spectral_projection(model: ElectronicModel, x: float,
                        method: str = "eig") -> np.ndarray:
    """Projection onto the cluster eigenspace at a single point x.

    method='eig' sums outer products of cluster eigenvectors; method='contour'
    evaluates the resolvent integral by trapezoidal quadrature on a circle
    through the spectral gap (debug path; agrees with 'eig' to quadrature
    accuracy).
    """
    lam, vec = model.eigensystem(x)
    lam, vec = lam[0], vec[0]
    lo, hi = model.L_prime, model.L_prime + model.L
    if method == "eig":
        u = vec[:, lo:hi]
        return u @ u.conj().T
    if method == "contour":
        P = model.pi0_jet().jets(np.atleast_1d(x), 0)[0, 0]
        return P
    raise ValueError(f"unknown method {method!r}")


def reduced_resolvent(model: ElectronicModel, x: float,
                      frame: "SpectralFrame | None" = None) -> np.ndarray:
    """R'(x) = Pi0_perp (lambda(x) - Q(x))^{-1} Pi0_perp for L = 1."""
    if model.L != 1:
        raise ValueError("reduced resolvent requires a rank-1 cluster")
    lam, vec = model.eigensystem(x)
    lam, vec = lam[0], vec[0]
    idx = model.L_prime
    lam0 = lam[idx]
    gap = np.min(np.abs(np.delete(lam, idx) - lam0))
    if gap < model.gap_margin:
        raise GapError(f"gap {gap:.3e} below margin at x={x}")
    out = np.zeros((model.N_el, model.N_el), dtype=complex)
    for b in range(model.N_el):
        if b == idx:
            continue
        ub = vec[:, b]
        out += np.outer(ub, ub.conj()) / (lam0 - lam[b])
    return out


# ---------------------------------------------------------------------------
# gauge-fixed frames
# ---------------------------------------------------------------------------

@dataclass
class SpectralFrame:
    """Cluster eigendata transported along the periodic grid.

    u has shape (Nx, N_el, L); du, d2u are Richardson finite differences on a
    refined grid, subsampled back to the quantization nodes.  holonomy holds
    the per-vector wrap-around phase before absorption; `periodic` records
    whether the stored frame is smooth across the wrap.
    """

    xs: np.ndarray
    lam: np.ndarray
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    Pi0: np.ndarray
    holonomy: np.ndarray
    periodic: bool
    gauge: str

    @property
    def L(self) -> int:
        return self.u.shape[2]

    def vector(self, k: int = 0) -> np.ndarray:
        return self.u[:, :, k]

    def berry(self, k: int = 0) -> np.ndarray:
        """-i <du_k, u_k> along the grid (real for a smooth gauge)."""
        return -1j * np.einsum("xn,xn->x", self.du[:, :, k],
                               self.u[:, :, k].conj())


def _transport(vecs: np.ndarray) -> np.ndarray:
    """Align phases along axis 0 so consecutive overlaps are real positive."""
    out = vecs.copy()
    for j in range(1, out.shape[0]):
        c = np.einsum("n,n->", out[j], out[j - 1].conj())
        if abs(c) < 0.5:
            raise ClusterCrossingError(
                f"eigenvector overlap {abs(c):.3f} < 0.5 between nodes {j-1},{j}")
        out[j] *= np.conj(c / abs(c))
    return out


def gauge_fix(model: ElectronicModel, grid, refine: int = 4, phase_twist=None,
              holonomy_threshold: float = np.pi / 2) -> SpectralFrame:
    """Parallel-transport gauge along the grid.

    Eigenvectors are computed on a refine-x finer grid, transported so that
    <u(x_{j+1}), u(x_j)> > 0, anchored at the leftmost node, and the
    wrap-around phase mismatch (holonomy) is absorbed by a linear phase ramp
    when below threshold.  An optional phase_twist(x) multiplies the frame by
    exp(i phi(x)) afterwards to exercise gauge covariance.
    """
    grid_xs = grid.xs
    Nx = grid_xs.size
    Nf = Nx * refine
    dxf = grid.L / Nf
    xf = grid_xs[0] + dxf * np.arange(Nf)
    lamf, vecf = np.linalg.eigh(model.Q_at(xf))
    lo, hi = model.L_prime, model.L_prime + model.L
    lam_cl = lamf[:, lo:hi]
    u = np.empty((Nf, model.N_el, model.L), dtype=complex)
    hol = np.empty(model.L, dtype=complex)
    periodic = True
    for k in range(model.L):
        col = _transport(vecf[:, :, lo + k])
        # anchor: dominant component of the leftmost vector real positive
        a = col[0, np.argmax(np.abs(col[0]))]
        col *= np.conj(a / abs(a))
        wrap = np.einsum("n,n->", col[0], col[-1].conj())
        phase = np.angle(wrap)
        hol[k] = wrap / abs(wrap)
        if abs(phase) <= holonomy_threshold and abs(abs(wrap) - 1) < 0.5:
            ramp = phase * np.arange(Nf) / Nf
            col = col * np.exp(1j * ramp)[:, None]
        else:
            periodic = False
        u[:, :, k] = col
    gauge = "parallel-transport"
    if phase_twist is not None:
        u = u * np.exp(1j * phase_twist(xf))[:, None, None]
        gauge = "twisted"

    if periodic:
        def d1(f):
            return (8 * (np.roll(f, -1, 0) - np.roll(f, 1, 0))
                    - (np.roll(f, -2, 0) - np.roll(f, 2, 0))) / (12 * dxf)

        def d2(f):
            return (-np.roll(f, -2, 0) + 16 * np.roll(f, -1, 0) - 30 * f
                    + 16 * np.roll(f, 1, 0) - np.roll(f, 2, 0)) / (12 * dxf ** 2)
        duf, d2uf = d1(u), d2(u)
    else:
        duf = np.gradient(u, dxf, axis=0, edge_order=2)
        d2uf = np.gradient(duf, dxf, axis=0, edge_order=2)

    sel = slice(0, Nf, refine)
    Pi0 = np.einsum("xnk,xmk->xnm", u[sel], u[sel].conj())
    return SpectralFrame(xs=grid_xs, lam=lam_cl[sel], u=u[sel], du=duf[sel],
                         d2u=d2uf[sel], Pi0=Pi0, holonomy=hol,
                         periodic=periodic, gauge=gauge)


# ---------------------------------------------------------------------------
# model catalog
# ---------------------------------------------------------------------------

_S1 = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_S2 = np.array([[0.0, -1j], [1j, 0.0]], dtype=complex)
_S3 = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def _harmonic_scalar(L_box, const, cos_amps=(), sin_amps=()):
    """1x1 JetFn: const + sum_m cos_amps[m] cos(2pi(m+1)x/L) + sin terms."""
    mats, freqs, phases = [], [], []
    for m, a in enumerate(cos_amps):
        mats.append(np.eye(1) * a)
        freqs.append(2 * np.pi * (m + 1) / L_box)
        phases.append(0.0)
    for m, a in enumerate(sin_amps):
        mats.append(np.eye(1) * a)
        freqs.append(2 * np.pi * (m + 1) / L_box)
        phases.append(-np.pi / 2)
    return harmonic_rule(1, mats, freqs, phases, const=np.eye(1) * const)


def two_level_model(L_box: float, E0: float = 1.0, E1: float = 0.15,
                    theta_amp: float = 0.8, theta_winding: int = 0,
                    w0: float = 0.25, level: str = "lower") -> ElectronicModel:
    """Avoided-crossing pair Q(x) = E(x)(cos theta sigma_z + sin theta sigma_x).

    theta(x) = theta_amp sin(2 pi x / L) + theta_winding * 2 pi x / L; the
    winding case has eigenvector holonomy -1.  W(x) = w0 (1 - cos(2 pi x/L))
    confines the classical motion near x = 0.
    """
    w = 2 * np.pi / L_box
    if theta_winding not in (0, 1):
        raise ValueError("theta_winding must be 0 or 1")

    # built from jet primitives so derivatives of all orders exist
    th = _harmonic_scalar(L_box, 0.0, sin_amps=(theta_amp,))
    if theta_winding:
        from .jets import JetRule

        def linrule(x, k):
            if k == 0:
                return (w * x)[:, None, None] * np.ones((1, 1))
            if k == 1:
                return np.full((x.size, 1, 1), w, dtype=complex)
            return np.zeros((x.size, 1, 1), dtype=complex)
        th = th + JetRule(1, linrule)
    E = _harmonic_scalar(L_box, E0, cos_amps=(E1,))
    # Q = E * (cos th S3 + sin th S1) = E * exp(-i th S2 / 2) S3 exp(i th S2 / 2)
    U = JetExp(th * (1j / 2), -_S2)
    Ud = JetExp(th * (-1j / 2), -_S2)
    Q = JetProd(JetEmbed(E, 2), JetProd(U, JetProd(JetConst(_S3), Ud)))
    W = _harmonic_scalar(L_box, w0, cos_amps=(-w0,))
    lp = 0 if level == "lower" else 1
    gap = 2 * (E0 - abs(E1)) * 0.9
    return ElectronicModel(
        name="two_level", N_el=2, Q=Q, W=W, L=1, L_prime=lp, gap_margin=gap,
        params=dict(L_box=L_box, E0=E0, E1=E1, theta_amp=theta_amp,
                    theta_winding=theta_winding, w0=w0, level=level))


def constant_model(L_box: float, diag=(-1.0, 1.0), w0: float = 0.25,
                   L: int = 1, L_prime: int = 0) -> ElectronicModel:
    """x-independent Q: the commuting reference case."""
    Q = JetConst(np.diag(np.asarray(diag, dtype=complex)))
    W = _harmonic_scalar(L_box, w0, cos_amps=(-w0,))
    lam = np.sort(np.asarray(diag, dtype=float))
    lo, hi = L_prime, L_prime + L
    gaps = []
    if lo > 0:
        gaps.append(lam[lo] - lam[lo - 1])
    if hi < len(lam):
        gaps.append(lam[hi] - lam[hi - 1])
    return ElectronicModel(
        name="constant", N_el=len(diag), Q=Q, W=W, L=L, L_prime=L_prime,
        gap_margin=0.9 * min(gaps) if gaps else 1.0,
        params=dict(L_box=L_box, diag=tuple(diag), w0=w0))


def six_level_model(L_box: float, seed: int = 7, cluster_size: int = 2,
                    w0: float = 0.2, rot: float = 0.35) -> ElectronicModel:
    """Smooth random 6-level field with a protected 2-level cluster.

    Q(x) = V(x) D(x) V(x)^dagger with V a product of two harmonic-angle
    rotations generated by random Hermitian matrices, and D diagonal with
    eigenvalue bands kept disjoint, so the gap is certified by construction.
    """
    rng = np.random.default_rng(seed)
    N = 6
    w = 2 * np.pi / L_box
    bands = [(-2.2, -1.9), (-1.6, -1.3), (1.0, 1.2), (1.5, 1.7),
             (2.0, 2.2), (2.5, 2.7)]
    mats, amps, phases = [], [], []
    diag_rules = []
    for i, (lo, hi) in enumerate(bands):
        c = 0.5 * (lo + hi)
        r = 0.4 * (hi - lo)
        ph = rng.uniform(0, 2 * np.pi)
        e = np.zeros((N, N))
        e[i, i] = 1.0
        diag_rules.append((e, c, r, ph))

    def drule(x, k):
        out = np.zeros((x.size, N, N), dtype=complex)
        for e, c, r, ph in diag_rules:
            if k == 0:
                out += (c + r * np.sin(w * x + ph))[:, None, None] * e
            else:
                out += (r * w ** k * np.sin(w * x + ph + k * np.pi / 2))[:, None, None] * e
        return out

    from .jets import JetRule
    D = JetRule(N, drule)

    def rand_herm():
        A = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
        H = 0.5 * (A + A.conj().T)
        return H / np.linalg.norm(H, 2)

    H1, H2 = rand_herm(), rand_herm()
    th1 = harmonic_rule(1, [rot * np.eye(1)], [w], [rng.uniform(0, 2 * np.pi)])
    th2 = harmonic_rule(1, [rot * np.eye(1)], [2 * w], [rng.uniform(0, 2 * np.pi)])
    V = JetProd(JetExp(th1 * 1j, H1), JetExp(th2 * 1j, H2))
    Vd = JetProd(JetExp(th2 * (-1j), H2), JetExp(th1 * (-1j), H1))
    Q = JetProd(V, JetProd(D, Vd))
    W = _harmonic_scalar(L_box, w0, cos_amps=(-w0,))
    gap = 0.9 * (bands[cluster_size][0] - bands[cluster_size - 1][1])
    return ElectronicModel(
        name="six_level", N_el=N, Q=Q, W=W, L=cluster_size, L_prime=0,
        gap_margin=gap, params=dict(L_box=L_box, seed=seed, w0=w0, rot=rot))
