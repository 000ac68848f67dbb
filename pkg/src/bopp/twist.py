"""Chart-wise conjugated quantization on the nuclear torus.

A regular covering carries a smooth partition of unity; each chart has an
x-dependent unitary on the electronic space, and a per-chart symbol family
quantizes to A = sum_j U_j^{-1} chi_j Op(a_j) U_j phi_j.  The module also
builds the one-nucleus caricature of the electron-coordinate change of
variables that freezes the electron-nucleus cusp at a fixed point, making
the conjugated interaction smooth in x.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adiabatic import operator_norm
from .electronic import ElectronicModel
from .jets import JetFn, JetRule
from .symbols import (GridSpec, SymbolSeries, XiPolySymbol, moyal_product,
                      quantize)

__all__ = [
    "smooth_step", "bump", "Covering", "ChartUnitary", "TwistedSymbol",
    "two_chart_covering", "twisted_quantize", "compatibility_residual",
    "commutator_order_check", "disjoint_support_decay",
    "conjugated_symbol_family", "rotation_unitaries", "kmsw_model", "KMSWModel",
]


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0) & (t < 1)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        a = np.exp(-1.0 / np.where(inside, t, 1.0))
        b = np.exp(-1.0 / np.where(inside, 1.0 - t, 1.0))
        out[inside] = (a / (a + b))[inside]
    out[t >= 1] = 1.0
    return out


def bump(dist, plateau: float, support: float):
    """C-infinity bump of a distance variable: 1 for dist <= plateau,
    0 for dist >= support."""
    return smooth_step((support - np.asarray(dist, dtype=float))
                       / (support - plateau))


def _per_dist(u, L):
    u = np.mod(np.asarray(u, dtype=float) + L / 2, L) - L / 2
    return np.abs(u)


@dataclass
class Covering:
    """Open chart intervals on the torus with a subordinate partition of unity.

    Charts are (center, halfwidth) pairs; chis are smooth periodic functions
    with sum = 1 and support at distance >= margin from the chart boundary;
    phis equal 1 near supp chi_j and vanish with the same margin.
    """

    L: float
    charts: list
    chis: list
    phis: list
    margin: float

    @property
    def n_charts(self) -> int:
        return len(self.charts)

    def validate(self, xs: np.ndarray, tol: float = 1e-12) -> None:
        total = np.zeros_like(xs)
        for j, chi in enumerate(self.chis):
            v = chi(xs)
            if np.any(v < -tol) or np.any(v > 1 + tol):
                raise ValueError(f"partition function {j} outside [0, 1]")
            total += v
            c, hw = self.charts[j]
            d = _per_dist(xs - c, self.L)
            outside = d >= hw - self.margin * 0.999
            if np.any(np.abs(v[outside]) > tol):
                raise ValueError(f"chi_{j} support too close to its chart boundary")
            if np.any(np.abs(self.phis[j](xs)[d >= hw - 1e-9]) > tol):
                raise ValueError(f"phi_{j} leaks outside chart {j}")
        if np.max(np.abs(total - 1.0)) > tol:
            raise ValueError(f"partition of unity defect {np.max(np.abs(total-1)):.2e}")


def two_chart_covering(L: float, overlap: float = 1.8) -> Covering:
    """Two antipodal charts covering the torus, each overhanging the
    half-circle by overlap/2; cutoffs keep gaps of overlap/6 so banded
    quantizations see genuinely separated supports."""
    hw = L / 4 + overlap / 2
    charts = [(0.0, hw), (L / 2, hw)]
    d = overlap / 6.0

    def raw(center):
        return lambda x: bump(_per_dist(np.asarray(x) - center, L),
                              hw - overlap + d, hw - 2 * d)

    b0, b1 = raw(0.0), raw(L / 2)

    def chi0(x):
        a, b = b0(x), b1(x)
        return a / (a + b)

    def chi1(x):
        a, b = b0(x), b1(x)
        return b / (a + b)

    phis = [lambda x, c=c: bump(_per_dist(np.asarray(x) - c, L),
                                hw - 1.5 * d, hw - d)
            for c, _ in charts]
    return Covering(L=L, charts=charts, chis=[chi0, chi1], phis=phis,
                    margin=0.9 * d)


@dataclass
class ChartUnitary:
    """x -> unitary N x N matrix on one chart, with its analytic derivative."""

    chart: int
    U: callable            # (B,) -> (B, N, N)
    dU: callable
    dim: int

    def check_unitary(self, xs: np.ndarray, tol: float = 1e-10) -> float:
        Uv = self.U(np.asarray(xs, dtype=float))
        eye = np.eye(self.dim)
        defect = float(np.max(np.abs(Uv @ np.conj(np.swapaxes(Uv, -1, -2)) - eye)))
        if defect > tol:
            raise ValueError(f"chart unitary defect {defect:.2e} > {tol:g}")
        return defect


def rotation_unitaries(cov: Covering, thetas: list, generator: np.ndarray) -> list:
    """U_j(x) = exp(i theta_j(x) G) for a fixed Hermitian generator G.

    thetas are (callable, derivative callable) pairs per chart.
    """
    G = np.asarray(generator, dtype=complex)
    w, V = np.linalg.eigh(G)
    dim = G.shape[0]
    out = []
    for j, (th, dth) in enumerate(thetas):
        def U(x, th=th):
            ph = np.exp(1j * np.outer(np.asarray(th(x), dtype=float), w))
            return np.einsum("nk,bk,mk->bnm", V, ph, V.conj())

        def dU(x, th=th, dth=dth):
            ph = np.exp(1j * np.outer(np.asarray(th(x), dtype=float), w))
            E = np.einsum("nk,bk,mk->bnm", V, ph, V.conj())
            return 1j * np.asarray(dth(x))[:, None, None] * (G @ E)
        out.append(ChartUnitary(chart=j, U=U, dU=dU, dim=dim))
    return out


@dataclass
class TwistedSymbol:
    """Per-chart symbol series (a_j)."""

    series: list

    @property
    def dim(self) -> int:
        return self.series[0].dim


def _mult_op(values: np.ndarray, dim: int) -> np.ndarray:
    return np.kron(np.diag(values), np.eye(dim))


def _unitary_block(unit: ChartUnitary, xs: np.ndarray) -> np.ndarray:
    N = xs.size
    d = unit.dim
    Uv = unit.U(xs)
    out = np.zeros((N, d, N, d), dtype=complex)
    idx = np.arange(N)
    out[idx, :, idx, :] = Uv
    return out.reshape(N * d, N * d)


def twisted_quantize(a: TwistedSymbol, cov: Covering, units: list,
                     g: GridSpec) -> np.ndarray:
    """A = sum_j U_j^{-1} chi_j Op(a_j) U_j phi_j on the grid."""
    if len(a.series) != cov.n_charts or len(units) != cov.n_charts:
        raise ValueError("chart/symbol/unitary count mismatch")
    cov.validate(g.xs)
    d = a.dim
    A = np.zeros((g.N_grid * d, g.N_grid * d), dtype=complex)
    for j in range(cov.n_charts):
        Op = quantize(a.series[j], g)
        Ub = _unitary_block(units[j], g.xs)
        Ui = np.conj(Ub.T)
        chi = _mult_op(cov.chis[j](g.xs), d)
        phi = _mult_op(cov.phis[j](g.xs), d)
        A += Ui @ chi @ Op @ Ub @ phi
    return A


def compatibility_residual(a: TwistedSymbol, cov: Covering, units: list,
                           g: GridSpec, phi_overlap, pair=(0, 1)) -> float:
    """Norm of U_j^{-1} phi Op(a_j) U_j phi - U_k^{-1} phi Op(a_k) U_k phi
    for a cutoff phi supported in the chart overlap."""
    j, k = pair
    vals = phi_overlap(g.xs)
    for idx in (j, k):
        c, hw = cov.charts[idx]
        d = _per_dist(g.xs - c, cov.L)
        if np.any(np.abs(vals[d >= hw]) > 1e-12):
            raise ValueError("overlap cutoff not supported in the chart overlap")
    d = a.dim
    Phi = _mult_op(vals, d)

    def side(idx):
        Op = quantize(a.series[idx], g)
        Ub = _unitary_block(units[idx], g.xs)
        return np.conj(Ub.T) @ Phi @ Op @ Ub @ Phi

    return operator_norm(side(j) - side(k))


def conjugated_symbol_family(base: SymbolSeries, v_jet: JetFn, order: int) -> SymbolSeries:
    """Symbol of V Op(a) V^{-1} for an x-only unitary field V, truncated:
    v # a # v*, the compatibility oracle for rotation twists."""
    from .symbols import XiTrigSymbol
    dim = base.dim
    c0 = base.coeffs[0]
    if isinstance(c0, XiTrigSymbol):
        wrap = lambda j: XiTrigSymbol({0: j}, dim, c0.freq)
    else:
        wrap = lambda j: XiPolySymbol([j], dim)
    v = SymbolSeries([wrap(v_jet)])
    vstar = SymbolSeries([wrap(v_jet.adj())])
    return moyal_product(moyal_product(v, base, order), vstar, order)


def commutator_order_check(build_A, cutoffs: list, grids: list) -> dict:
    """Fitted slopes of ||ad_chi1 ... ad_chiN (A)|| vs h for N = 1..len(cutoffs).

    build_A(grid) assembles the operator at each grid of the sweep.
    """
    hs = [g.h for g in grids]
    norms = {N: [] for N in range(1, len(cutoffs) + 1)}
    for g in grids:
        A = build_A(g)
        d = A.shape[0] // g.N_grid
        X = A
        for N, chi in enumerate(cutoffs, start=1):
            C = _mult_op(chi(g.xs), d)
            X = C @ X - X @ C
            norms[N].append(operator_norm(X))
    out = {}
    for N, vals in norms.items():
        out[N] = {
            "slope": float(np.polyfit(np.log(hs), np.log(np.maximum(vals, 1e-300)), 1)[0]),
            "norms": vals,
        }
    return out


def disjoint_support_decay(build_A, chi, psi, grids: list) -> dict:
    """||chi A psi|| over an h-sweep for disjointly supported cutoffs;
    reports the per-halving reduction factors."""
    vals = []
    for g in grids:
        if np.any(np.abs(chi(g.xs) * psi(g.xs)) > 0):
            raise ValueError("cutoff supports overlap")
        A = build_A(g)
        d = A.shape[0] // g.N_grid
        vals.append(operator_norm(_mult_op(chi(g.xs), d) @ A @ _mult_op(psi(g.xs), d)))
    ratios = [vals[i] / max(vals[i + 1], 1e-300) for i in range(len(vals) - 1)]
    return {"norms": vals, "ratios": ratios}


# ---------------------------------------------------------------------------
# electron-coordinate change of variables (one nucleus, periodic electron ring)
# ---------------------------------------------------------------------------

def _trig_kernel(u: np.ndarray, N: int, L: float) -> np.ndarray:
    """Trigonometric interpolation kernel on N equispaced points (N even)."""
    ks = np.arange(-(N // 2) + 1, N // 2)
    out = np.sum(np.exp(2j * np.pi * np.outer(u, ks) / L), axis=-1).real
    out = (out + np.cos(np.pi * N * u / L)) / N
    return out


def _trig_kernel_deriv(u: np.ndarray, N: int, L: float) -> np.ndarray:
    ks = np.arange(-(N // 2) + 1, N // 2)
    w = 2 * np.pi * ks / L
    out = np.sum(1j * w * np.exp(1j * np.outer(u, w)), axis=-1).real
    out = (out - (np.pi * N / L) * np.sin(np.pi * N * u / L)) / N
    return out


@dataclass
class KMSWModel:
    """One nuclear coordinate, one electron on a fine ring, cusped attraction.

    The chart map G(x, y) = y + (x - x0) f(y) drags the electron grid with
    the nucleus near the chart center; conjugation by the induced unitary
    freezes the interaction cusp at y = x0, so matrix elements become smooth
    in x while the raw ones are not.
    """

    model: ElectronicModel
    covering: Covering
    units: list
    L_el: float
    ys: np.ndarray
    gamma: float
    params: dict = field(default_factory=dict)

    def raw_Q(self, x: float) -> np.ndarray:
        return self.model.Q_at(np.atleast_1d(x))[0]

    def conjugated_Q(self, x: float, chart: int = 0) -> np.ndarray:
        """U Q(x) U^{-1} assembled analytically through the coordinate change.

        The pulled-back derivative is (1/g) d_y - g'/(2 g^2) with
        g = d_y G(x, y), and the interaction becomes multiplication by
        V(x - G(x, y)), whose cusp sits at a fixed electron point; every
        x-dependence is smooth on the chart.
        """
        if chart != 0:
            return self.raw_Q(x)
        p = self.params
        x0 = p["x0"]
        x = float(np.clip(x, x0 - p["chart_halfwidth"], x0 + p["chart_halfwidth"]))
        fv, fd, fdd = p["_fprof"](self.ys), p["_fprof_d"](self.ys), p["_fprof_dd"](self.ys)
        g = 1.0 + (x - x0) * fd
        gp = (x - x0) * fdd          # d_y g
        Dy = p["_Dy"]
        A = (1.0 / g)[:, None] * Dy - np.diag(gp / (2 * g ** 2))
        T = -(A @ A) / (2 * p["m_el"])
        arg = (x - x0) * (1.0 - fv) + x0 - self.ys
        return T + np.diag(p["_Vcusp"](arg))

    def unitarity_defect(self, xs, band_frac: float = 0.25, seed: int = 3) -> float:
        """Max norm distortion of U(x) over band-limited probe vectors.

        The trigonometric-interpolation unitary preserves the quadrature norm
        of states whose spectral content stays inside the band that the
        deformation maps into the grid's resolution.
        """
        N = self.params["N_el"]
        rng = np.random.default_rng(seed)
        kmax = int(band_frac * N / 2)
        ks = np.fft.fftfreq(N, d=1.0 / N).astype(int)
        keep = np.abs(ks) <= kmax
        probes = []
        for _ in range(6):
            c = rng.standard_normal(N) + 1j * rng.standard_normal(N)
            c[~keep] = 0.0
            v = np.fft.ifft(c)
            probes.append(v / np.linalg.norm(v))
        worst = 0.0
        for x in np.atleast_1d(xs):
            U = self.units[0].U(np.atleast_1d(x))[0]
            for v in probes:
                worst = max(worst, abs(np.linalg.norm(U @ v) - 1.0))
        return worst

    def curvature_blowup(self, chart: int = 0, deltas=None, n_low: int = 12) -> dict:
        """Max second x-difference of matrix elements between the n_low
        lowest electronic states, normalized by the chart-center value.

        Probe points include the electron-grid nodes inside the chart, where
        the raw interaction has its moving kinks; the conjugated elements stay
        bounded as the difference step shrinks while the raw ones grow like
        1/delta.
        """
        if deltas is None:
            deltas = [2.0 ** -k for k in range(4, 13)]
        c, hw = self.covering.charts[chart]
        nodes = self.ys[np.abs(self.ys - c) < 0.55 * hw]
        xs = np.concatenate([nodes, nodes + 0.31 * (self.ys[1] - self.ys[0]),
                             c + np.linspace(-0.5 * hw, 0.5 * hw, 5)])
        _, vec = np.linalg.eigh(self.raw_Q(c))
        B = vec[:, :n_low]
        out = {"deltas": list(deltas), "raw": [], "conjugated": []}
        for fn, key in ((self.raw_Q, "raw"), (self.conjugated_Q, "conjugated")):
            for d in deltas:
                def second(x):
                    M = fn(x + d) - 2 * fn(x) + fn(x - d)
                    return np.linalg.norm(B.conj().T @ M @ B) / d ** 2
                ref = second(c)
                out[key].append(max(second(x) for x in xs) / ref)
        return out


def kmsw_model(L_el: float = 16.0, N_el: int = 64, gamma: float = 4.0,
               m_el: float = 1.0, x0: float = 0.1, chart_halfwidth: float = 0.4,
               f_plateau: float = 0.6, f_support: float = 4.6,
               cusp_r1: float = 4.0, cusp_r2: float = 6.5,
               L_box: float = 4 * np.pi, w0: float = 0.25) -> KMSWModel:
    """Build the cusp model, its chart covering, and the pulled-back unitaries.

    The second chart is the identity chart away from x0 (the interaction
    there is evaluated raw); within |x - x0| < chart_halfwidth the plateau of
    the drag profile f contains the moving cusp, so the conjugated operator
    depends smoothly on x.
    """
    if chart_halfwidth >= f_plateau:
        raise ValueError("chart must sit inside the drag-profile plateau")
    ys = -L_el / 2 + (L_el / N_el) * np.arange(N_el)
    ks = np.fft.fftfreq(N_el, d=1.0 / N_el)
    kvals = 2 * np.pi * ks / L_el
    F = np.exp(-2j * np.pi * np.outer(ks, np.arange(N_el)) / N_el) / np.sqrt(N_el)
    T = (F.conj().T * (kvals ** 2 / (2 * m_el))[None, :]) @ F
    T = 0.5 * (T + T.conj().T)

    def Vcusp(d):
        s = _per_dist(d, L_el)
        return -gamma * np.exp(-s) * bump(s, cusp_r1, cusp_r2)

    def qrule(x, k):
        if k > 0:
            raise ValueError("cusped interaction has no analytic x-derivatives")
        out = np.empty((x.size, N_el, N_el), dtype=complex)
        for b, xb in enumerate(x):
            out[b] = T + np.diag(Vcusp(xb - ys))
        return out

    from .electronic import _harmonic_scalar
    W = _harmonic_scalar(L_box, w0, cos_amps=(-w0,))
    model = ElectronicModel(name="kmsw", N_el=N_el, Q=JetRule(N_el, qrule), W=W,
                            L=1, L_prime=0, gap_margin=0.05,
                            params=dict(L_el=L_el, gamma=gamma, x0=x0))
    gap = model.measured_gap(np.linspace(x0 - chart_halfwidth, x0 + chart_halfwidth, 9))
    model.gap_margin = 0.9 * gap

    def fprof(s):
        return bump(_per_dist(s - x0, L_el), f_plateau, f_support)

    def fprof_d(s):
        d = 1e-6
        return (fprof(s + d) - fprof(s - d)) / (2 * d)

    def fprof_dd(s):
        d = 1e-4
        return (fprof(s + d) - 2 * fprof(s) + fprof(s - d)) / d ** 2

    def G(x, y):
        return y + (x - x0) * fprof(y)

    def dyG(x, y):
        return 1.0 + (x - x0) * fprof_d(y)

    def _clamp(x):
        return np.clip(x, x0 - chart_halfwidth, x0 + chart_halfwidth)

    def _pullback(x):
        jac = dyG(x, ys)
        if np.any(jac <= 0):
            raise ValueError("chart too large: coordinate change loses invertibility")
        half = np.sqrt(jac)
        out = np.empty((N_el, N_el))
        for m in range(N_el):
            out[m] = half[m] * _trig_kernel(G(x, ys[m]) - ys, N_el, L_el)
        return out

    def _pullback_deriv(x):
        jac = dyG(x, ys)
        half = np.sqrt(jac)
        dhalf = 0.5 * fprof_d(ys) / half
        out = np.empty((N_el, N_el))
        for m in range(N_el):
            u = G(x, ys[m]) - ys
            out[m] = (dhalf[m] * _trig_kernel(u, N_el, L_el)
                      + half[m] * fprof(ys[m]) * _trig_kernel_deriv(u, N_el, L_el))
        return out

    def _polar(M):
        w, V = np.linalg.eigh(M.conj().T @ M)
        inv_half = (V * (w ** -0.5)[None, :]) @ V.conj().T
        return M @ inv_half

    def U(xb):
        xb = _clamp(np.asarray(xb, dtype=float))
        out = np.empty((xb.size, N_el, N_el), dtype=complex)
        for b, x in enumerate(xb):
            out[b] = _polar(_pullback(x))
        return out

    def dU(xb):
        """Derivative of the polar-unitary factor.

        With Utilde = U H (polar), M = U* dUtilde splits as K H + dH with K
        anti-Hermitian; K follows from K H + H K = M - M* in H's eigenbasis,
        and dU = U K.
        """
        xb = _clamp(np.asarray(xb, dtype=float))
        out = np.empty((xb.size, N_el, N_el), dtype=complex)
        for b, x in enumerate(xb):
            Ut = _pullback(x)
            dUt = _pullback_deriv(x)
            w, V = np.linalg.eigh(Ut.conj().T @ Ut)
            hvals = np.sqrt(w)
            inv_half = (V * (hvals ** -1.0)[None, :]) @ V.conj().T
            Upol = Ut @ inv_half
            M = Upol.conj().T @ dUt
            Mv = V.conj().T @ (M - M.conj().T) @ V
            Kv = Mv / (hvals[:, None] + hvals[None, :])
            K = V @ Kv @ V.conj().T
            out[b] = Upol @ K
        return out

    unit = ChartUnitary(chart=0, U=U, dU=dU, dim=N_el)

    def ident(xb):
        xb = np.asarray(xb, dtype=float)
        return np.broadcast_to(np.eye(N_el), (xb.size, N_el, N_el)).copy()

    def zero(xb):
        xb = np.asarray(xb, dtype=float)
        return np.zeros((xb.size, N_el, N_el))

    unit1 = ChartUnitary(chart=1, U=ident, dU=zero, dim=N_el)

    # covering: a small chart around x0 and its fattened complement
    ra = 0.55 * chart_halfwidth
    rb = 0.75 * chart_halfwidth

    def chi0(x):
        return bump(_per_dist(np.asarray(x) - x0, L_box), ra, rb)

    def chi1(x):
        return 1.0 - chi0(x)

    def phi0(x):
        return bump(_per_dist(np.asarray(x) - x0, L_box),
                    0.85 * chart_halfwidth, 0.95 * chart_halfwidth)

    def phi1(x):
        return 1.0 - bump(_per_dist(np.asarray(x) - x0, L_box), 0.5 * ra, 0.9 * ra)

    cov = Covering(L=L_box,
                   charts=[(x0, chart_halfwidth),
                           (x0 + L_box / 2, L_box / 2 - 0.25 * ra)],
                   chis=[chi0, chi1], phis=[phi0, phi1],
                   margin=0.04 * chart_halfwidth)
    Dy = (F.conj().T * (1j * kvals)[None, :]) @ F      # spectral d/dy
    return KMSWModel(model=model, covering=cov, units=[unit, unit1],
                     L_el=L_el, ys=ys, gamma=gamma,
                     params=dict(chart_halfwidth=chart_halfwidth,
                                 f_plateau=f_plateau, f_support=f_support,
                                 N_el=N_el, x0=x0, L_box=L_box, m_el=m_el,
                                 _fprof=fprof, _fprof_d=fprof_d,
                                 _fprof_dd=fprof_dd, _Vcusp=Vcusp, _Dy=Dy))
