"""Classical flow of the effective principal symbol, packet parameters,
escape times, and leading-order propagated Gaussians.

The flow integrates (x, xi), the action phase, and the linearized
(monodromy) flow F with a classic fourth-order Runge-Kutta step; the packet
width matrix is Gamma = (C + i D)(A + i B)^{-1} from the blocks of F.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .electronic import ElectronicModel, SpectralFrame
from .omega import OmegaParams
from .propagators import GridWaveFunction
from .symbols import GridSpec

__all__ = [
    "ClassicalSystem", "Trajectory", "hamilton_flow", "escape_time",
    "coherent_state", "propagate_gaussian", "molecular_packet",
    "classical_system",
]


@dataclass
class ClassicalSystem:
    """Scalar Hamiltonian on phase space with first and second derivatives.

    value(x, xi) -> float; grad(x, xi) -> (d_x, d_xi) arrays of length n;
    hess(x, xi) -> (2n, 2n) array ordered (x..., xi...).
    """

    n: int
    value: callable
    grad: callable
    hess: callable


def classical_system(model: ElectronicModel, omega: OmegaParams | None = None,
                     level: int = 0) -> ClassicalSystem:
    """a_0(x, xi) = omega_0 + lambda(x) + W(x) for a rank-1 cluster (n = 1)."""
    omega = omega or OmegaParams()
    lam_jet = model.lambda_jet()
    W_jet = model.W

    def scal(jet, x, k):
        return jet.jets(np.atleast_1d(x), k)[0, k, 0, 0].real

    def value(x, xi):
        return omega.omega0(x, xi) + scal(lam_jet, x, 0) + scal(W_jet, x, 0)

    def grad(x, xi):
        gx, gxi = omega.omega0_grad(x, xi)
        gx = gx + scal(lam_jet, x, 1) + scal(W_jet, x, 1)
        return np.atleast_1d(gx), np.atleast_1d(gxi)

    def hess(x, xi):
        H = omega.omega0_hess(x, xi).copy()
        H[0, 0] += scal(lam_jet, x, 2) + scal(W_jet, x, 2)
        return H

    return ClassicalSystem(n=1, value=value, grad=grad, hess=hess)


@dataclass
class Trajectory:
    """Samples of the flow: centers, action phase, monodromy, packet width."""

    ts: np.ndarray
    xs: np.ndarray          # (nt, n)
    xis: np.ndarray         # (nt, n)
    delta: np.ndarray       # action phase including the boundary term
    F: np.ndarray           # (nt, 2n, 2n)
    Gamma: np.ndarray       # (nt, n, n)
    energy: np.ndarray
    system: ClassicalSystem = field(repr=False, default=None)
    _phases: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.xs.shape[1]

    def index_at(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.ts - t)))
        if abs(self.ts[i] - t) > 0.51 * (self.ts[1] - self.ts[0]):
            raise ValueError(f"t={t} outside the sampled range")
        return i

    def symplectic_defect(self) -> float:
        n = self.n
        J = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
        d = 0.0
        for F in self.F:
            d = max(d, float(np.max(np.abs(F.T @ J @ F - J))))
        return d

    def energy_drift(self) -> float:
        e0 = self.energy[0]
        scale = max(abs(e0), 1.0)
        return float(np.max(np.abs(self.energy - e0)) / scale)

    def gamma_definite(self) -> bool:
        for G in self.Gamma:
            w = np.linalg.eigvalsh(0.5 * (G.imag + G.imag.T))
            if np.min(w) <= 0:
                return False
        return True


def _flow_rhs(sys: ClassicalSystem, y: np.ndarray) -> np.ndarray:
    n = sys.n
    x, xi = y[:n], y[n:2 * n]
    F = y[2 * n + 1:].reshape(2 * n, 2 * n)
    gx, gxi = sys.grad(x if n > 1 else x[0], xi if n > 1 else xi[0])
    H = sys.hess(x if n > 1 else x[0], xi if n > 1 else xi[0])
    J = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    dF = J @ H @ F
    a0 = sys.value(x if n > 1 else x[0], xi if n > 1 else xi[0])
    ddelta = float(np.dot(xi, gxi) - a0)
    return np.concatenate([gxi, -gx, [ddelta], dF.reshape(-1)])


def hamilton_flow(sys: ClassicalSystem, x0, xi0, T: float, dt: float,
                  drift_tol: float = 1e-10, max_halvings: int = 20) -> Trajectory:
    """RK4 integration of the flow, the action integral, and F_t.

    The step is halved (up to max_halvings) whenever a single step moves the
    energy by more than drift_tol.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = sys.n
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    for _ in range(max_halvings + 1):
        nt = max(2, int(round(abs(T) / dt)) + 1)
        step = T / (nt - 1)
        y = np.concatenate([x0, xi0, [0.0], np.eye(2 * n).reshape(-1)])
        ys = np.empty((nt, y.size))
        ys[0] = y
        energies = np.empty(nt)
        energies[0] = sys.value(x0 if n > 1 else x0[0], xi0 if n > 1 else xi0[0])
        ok = True
        for i in range(1, nt):
            k1 = _flow_rhs(sys, y)
            k2 = _flow_rhs(sys, y + 0.5 * step * k1)
            k3 = _flow_rhs(sys, y + 0.5 * step * k2)
            k4 = _flow_rhs(sys, y + step * k3)
            y = y + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            ys[i] = y
            energies[i] = sys.value(y[0] if n == 1 else y[:n],
                                    y[n] if n == 1 else y[n:2 * n])
            if abs(energies[i] - energies[i - 1]) > drift_tol * max(1.0, abs(energies[0])):
                ok = False
                break
        if ok:
            break
        dt *= 0.5
    else:
        raise RuntimeError("energy drift persists after max step halvings")

    ts = np.linspace(0.0, T, nt)
    xs = ys[:, :n]
    xis = ys[:, n:2 * n]
    raw = ys[:, 2 * n]
    boundary = 0.5 * (np.dot(x0, xi0) - np.einsum("ti,ti->t", xs, xis))
    delta = raw + boundary
    F = ys[:, 2 * n + 1:].reshape(nt, 2 * n, 2 * n)
    A, B = F[:, :n, :n], F[:, :n, n:]
    C, D = F[:, n:, :n], F[:, n:, n:]
    Gamma = np.einsum("tij,tjk->tik", C + 1j * D, np.linalg.inv(A + 1j * B))
    return Trajectory(ts=ts, xs=xs, xis=xis, delta=delta, F=F, Gamma=Gamma,
                      energy=energies, system=sys)


def escape_time(traj: Trajectory, interval: tuple[float, float],
                coord: int = 0) -> float:
    """First time the position leaves the open interval, linearly
    interpolated between samples; T_max (the last sample) if it never does."""
    lo, hi = interval
    x = traj.xs[:, coord]
    inside = (x > lo) & (x < hi)
    if not inside[0]:
        return 0.0
    out = np.nonzero(~inside)[0]
    if out.size == 0:
        return float(traj.ts[-1])
    i = int(out[0])
    x0, x1 = x[i - 1], x[i]
    edge = hi if x1 >= hi else lo
    frac = (edge - x0) / (x1 - x0)
    return float(traj.ts[i - 1] + frac * (traj.ts[i] - traj.ts[i - 1]))


def coherent_state(x0: float, xi0: float, g: GridSpec,
                   boundary_tol: float = 1e-10) -> GridWaveFunction:
    """(pi h)^{-1/4} e^{i x xi_0/h - (x-x_0)^2/2h}, normalized on the grid."""
    xs = g.xs
    h = g.h
    v = (np.pi * h) ** -0.25 * np.exp(1j * xs * xi0 / h - (xs - x0) ** 2 / (2 * h))
    psi = GridWaveFunction(g, v[:, None]).normalized()
    psi.check_boundary(boundary_tol)
    return psi


def _gaussian_samples(traj: Trajectory, i: int, g: GridSpec) -> np.ndarray:
    """Unnormalized width-evolved Gaussian at sample i (n = 1).

    The center phase convention xi_t (x - x_t/2) pairs with the action phase
    delta_t (which carries the (x0 xi0 - x_t xi_t)/2 boundary term), so that
    together they reproduce the full dynamical phase.
    """
    xs = g.xs
    h = g.h
    xt = traj.xs[i, 0]
    xit = traj.xis[i, 0]
    G = traj.Gamma[i, 0, 0]
    if G.imag <= 0:
        raise RuntimeError("packet width matrix lost positivity")
    return np.exp(1j * xit * (xs - xt / 2) / h + 1j * G * (xs - xt) ** 2 / (2 * h))


def _slow_phases(traj: Trajectory, g: GridSpec) -> np.ndarray:
    """Branch phase of the width factor, kept continuous in t.

    Instead of evaluating (A_t + i B_t)^{-1/2} on a fixed branch, the phase
    -arg(A_t + i B_t)/2 is unwrapped along the trajectory; consecutive
    normalized samples are also required to overlap above 0.99 as a step-size
    guard.
    """
    if traj._phases is not None and traj._phases.shape[0] == traj.ts.size:
        return traj._phases
    n = traj.n
    w = traj.F[:, :n, :n] + 1j * traj.F[:, :n, n:]
    ang = np.unwrap(np.angle(w[:, 0, 0]))
    phases = -0.5 * (ang - ang[0])
    prev = _gaussian_samples(traj, 0, g)
    prev = prev / np.linalg.norm(prev)
    stride = max(1, traj.ts.size // 512)
    for i in range(stride, traj.ts.size, stride):
        cur = _gaussian_samples(traj, i, g)
        cur = cur / np.linalg.norm(cur)
        if abs(np.vdot(prev, cur)) < 0.99:
            raise RuntimeError("consecutive packet overlap below 0.99; reduce dt")
        prev = cur
    traj._phases = phases
    return phases


def propagate_gaussian(traj: Trajectory, t: float, g: GridSpec) -> GridWaveFunction:
    """Leading-order packet: e^{i delta_t/h} times the width-evolved Gaussian,
    L2-renormalized, with the branch phase kept continuous in t and the t = 0
    sample anchored to the coherent state."""
    if traj.n != 1:
        raise ValueError("grid packets are 1-D")
    i = traj.index_at(t)
    phases = _slow_phases(traj, g)
    v = _gaussian_samples(traj, i, g)
    psi = GridWaveFunction(g, v[:, None]).normalized()
    anchor = traj.xs[0, 0] * traj.xis[0, 0] / (2 * g.h)
    phase = np.exp(1j * (traj.delta[i] / g.h + phases[i] + anchor))
    return GridWaveFunction(g, phase * psi.values)


def molecular_packet(scalar: GridWaveFunction, frame: SpectralFrame,
                     level: int = 0) -> GridWaveFunction:
    """Channelize a scalar packet by the gauge-fixed eigenvector field."""
    vals = scalar.values[:, 0][:, None] * frame.u[:, :, level]
    return GridWaveFunction(scalar.grid, vals)
