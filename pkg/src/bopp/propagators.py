"""Brute-force full evolution and reduced evolution on the periodic grid.

Two routes to exp(-i t P / h): Strang split-step with per-node matrix
exponentials of the electronic part, and one-shot exact diagonalization.
Cross-agreement between them is part of the contract.  Also holds the grid
wavefunction container, smooth energy windows, localized-state preparation,
and snapshot I/O.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .adiabatic import hamiltonian_matrix, spectral_function
from .electronic import ElectronicModel, SpectralFrame
from .omega import OmegaParams
from .symbols import GridSpec

__all__ = [
    "GridWaveFunction", "EnergyWindow", "Propagator", "reduced_propagate",
    "prepare_localized_state", "support_mass", "save_snapshot", "load_snapshot",
    "write_state_csv", "BoundaryMassError",
]

SNAPSHOT_MAGIC = b"BOPP"
SNAPSHOT_VERSION = 1


class BoundaryMassError(RuntimeError):
    pass


@dataclass
class GridWaveFunction:
    """Complex amplitudes on the nuclear grid x electronic levels."""

    grid: GridSpec
    values: np.ndarray                      # (N_grid, N_el)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim == 1:
            v = v[:, None]
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite wavefunction entries")
        self.values = v

    @property
    def N_el(self) -> int:
        return self.values.shape[1]

    def norm(self) -> float:
        return float(np.sqrt(self.grid.dx * np.sum(np.abs(self.values) ** 2)))

    def normalized(self) -> "GridWaveFunction":
        return GridWaveFunction(self.grid, self.values / self.norm())

    def inner(self, other: "GridWaveFunction") -> complex:
        """<self, other> with the grid quadrature weight."""
        return complex(self.grid.dx * np.sum(self.values * other.values.conj()))

    def density(self) -> np.ndarray:
        return np.sum(np.abs(self.values) ** 2, axis=1)

    def mass_outside(self, interval: tuple[float, float]) -> float:
        xs = self.grid.xs
        out = (xs < interval[0]) | (xs > interval[1])
        return float(self.grid.dx * np.sum(self.density()[out]))

    def boundary_mass(self) -> float:
        """L2 mass within L/8 of the periodic boundary."""
        L = self.grid.L
        return self.mass_outside((-L / 2 + L / 8, L / 2 - L / 8))

    def check_boundary(self, tol: float = 1e-10) -> None:
        bm = self.boundary_mass()
        if bm >= tol:
            raise BoundaryMassError(
                f"boundary-zone mass {bm:.3e} >= {tol:g}; enlarge the box")

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @staticmethod
    def from_flat(grid: GridSpec, flat: np.ndarray, N_el: int) -> "GridWaveFunction":
        return GridWaveFunction(grid, flat.reshape(grid.N_grid, N_el))


def _quintic(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


@dataclass(frozen=True)
class EnergyWindow:
    """Quintic-polynomial bump: 0 outside [lo_out, hi_out], 1 on
    [lo_in, hi_in], C^2 monotone joins in between."""

    lo_out: float
    lo_in: float
    hi_in: float
    hi_out: float

    def __post_init__(self):
        if not (self.lo_out < self.lo_in < self.hi_in < self.hi_out):
            raise ValueError("window breakpoints must be strictly increasing")

    def __call__(self, E) -> np.ndarray:
        E = np.asarray(E, dtype=float)
        up = _quintic((E - self.lo_out) / (self.lo_in - self.lo_out))
        dn = _quintic((self.hi_out - E) / (self.hi_out - self.hi_in))
        return np.minimum(up, dn)

    def compatible_with(self, g: "EnergyWindow") -> bool:
        """True when this window's support sits inside {g = 1}."""
        return g.lo_in <= self.lo_out and self.hi_out <= g.hi_in

    @staticmethod
    def around(E: float, half_width: float, margin: float) -> "EnergyWindow":
        return EnergyWindow(E - half_width - margin, E - half_width,
                            E + half_width, E + half_width + margin)


class Propagator:
    """exp(-i t P / h) on one grid, by split-step or exact diagonalization."""

    def __init__(self, model: ElectronicModel, grid: GridSpec,
                 omega: OmegaParams | None = None,
                 Phat: np.ndarray | None = None, P_eig=None):
        self.model = model
        self.grid = grid
        self.omega = omega or OmegaParams()
        self.Phat = hamiltonian_matrix(model, grid, self.omega) if Phat is None else Phat
        self._eig = P_eig
        self._node_eig = None

    @property
    def P_eig(self):
        if self._eig is None:
            self._eig = np.linalg.eigh(self.Phat)
        return self._eig

    def energy_filter(self, f) -> np.ndarray:
        return spectral_function(self.Phat, f, self.P_eig)

    def energy(self, psi: GridWaveFunction) -> float:
        v = psi.flat()
        return float(np.real(np.vdot(v, self.Phat @ v)) * self.grid.dx)

    # exact route ---------------------------------------------------------
    def evolve_exact(self, psi: GridWaveFunction, t: float) -> GridWaveFunction:
        evals, evecs = self.P_eig
        phases = np.exp(-1j * t * evals / self.grid.h)
        v = evecs.conj().T @ psi.flat()
        out = evecs @ (phases * v)
        return GridWaveFunction.from_flat(self.grid, out, psi.N_el)

    # split-step route ------------------------------------------------------
    def _node_decomposition(self):
        if self._node_eig is None:
            g, m = self.grid, self.model
            Qv = m.Q_at(g.xs) + m.W_at(g.xs)[:, None, None] * np.eye(m.N_el)
            self._node_eig = np.linalg.eigh(Qv)
        return self._node_eig

    def evolve_split_step(self, psi: GridWaveFunction, t: float,
                          dt: float | None = None) -> GridWaveFunction:
        if self.omega.kind != "quadratic":
            raise ValueError("split-step supports the plain kinetic form only")
        g = self.grid
        h = g.h
        if dt is None:
            dt = h / 20.0
        nsteps = max(1, int(np.ceil(abs(t) / dt)))
        dt = t / nsteps
        lam, U = self._node_decomposition()
        kin_half = np.exp(-1j * dt * (0.5 * g.xis ** 2) / (2 * h))[:, None]
        pot = np.exp(-1j * dt * lam / h)
        v = psi.values.copy()
        for _ in range(nsteps):
            v = np.fft.ifft(kin_half * np.fft.fft(v, axis=0), axis=0)
            w = np.einsum("xnk,xn->xk", U.conj(), v)
            v = np.einsum("xnk,xk->xn", U, pot * w)
            v = np.fft.ifft(kin_half * np.fft.fft(v, axis=0), axis=0)
        return GridWaveFunction(g, v)

    def evolve(self, psi: GridWaveFunction, t: float, method: str = "exact-diag",
               cross_tol: float = 1e-7, max_halvings: int = 20) -> GridWaveFunction:
        """Propagate by the requested method.

        Split-step is cross-checked against the exact route at the final
        time; on mismatch the step is halved, up to max_halvings.
        """
        if method == "exact-diag":
            return self.evolve_exact(psi, t)
        if method != "split-step":
            raise ValueError(f"unknown method {method!r}")
        ref = self.evolve_exact(psi, t)
        dt = self.grid.h / 20.0
        for _ in range(max_halvings + 1):
            out = self.evolve_split_step(psi, t, dt=dt)
            err = float(np.sqrt(self.grid.dx * np.sum(np.abs(out.values - ref.values) ** 2)))
            if err <= cross_tol:
                return out
            dt *= 0.5
        raise RuntimeError(
            f"split-step failed to meet cross-check {cross_tol:g} after "
            f"{max_halvings} halvings (last error {err:.2e})")


def reduced_propagate(A: np.ndarray, phi, t: float, h: float,
                      herm_tol: float = 1e-8) -> np.ndarray:
    """exp(-i t A / h) phi through the eigendecomposition of Hermitian A."""
    defect = np.max(np.abs(A - A.conj().T))
    if defect > herm_tol:
        raise ValueError(f"reduced operator non-Hermitian: defect {defect:.2e}")
    evals, evecs = np.linalg.eigh(0.5 * (A + A.conj().T))
    phases = np.exp(-1j * t * evals / h)
    return evecs @ (phases * (evecs.conj().T @ np.asarray(phi, dtype=complex)))


def support_mass(psi: GridWaveFunction, K: tuple[float, float]) -> float:
    """L2 mass outside the interval K."""
    return psi.mass_outside(K)


def prepare_localized_state(prop: Propagator, Pi_g: np.ndarray,
                            frame: SpectralFrame, x0: float, xi0: float,
                            f_window, K0: tuple[float, float],
                            level: int = 0) -> tuple[GridWaveFunction, dict]:
    """phi_0 = normalize(f(P) Pi_g (coherent x eigenvector)), plus the three
    localization residuals (space, projection, energy)."""
    g = prop.grid
    xs = g.xs
    h = g.h
    packet = (np.pi * h) ** -0.25 * np.exp(1j * xs * xi0 / h - (xs - x0) ** 2 / (2 * h))
    mol = packet[:, None] * frame.u[:, :, level]
    v = Pi_g @ mol.reshape(-1)
    F = prop.energy_filter(f_window)
    v = F @ v
    phi = GridWaveFunction.from_flat(g, v, frame.u.shape[1]).normalized()
    w = phi.flat()
    res = {
        "space": np.sqrt(phi.mass_outside(K0)),
        "projection": float(np.linalg.norm(w - Pi_g @ w) * np.sqrt(g.dx)),
        "energy": float(np.linalg.norm(w - F @ w) * np.sqrt(g.dx)),
    }
    phi.check_boundary()
    return phi, res


# ---------------------------------------------------------------------------
# snapshot I/O
# ---------------------------------------------------------------------------

def save_snapshot(path, psi: GridWaveFunction) -> None:
    """Binary snapshot: 16-byte header (magic 'BOPP', version, N_grid, N_el)
    then little-endian float64 interleaved re/im."""
    v = psi.values
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<III", SNAPSHOT_VERSION, v.shape[0], v.shape[1]))
        data = np.empty(v.shape + (2,), dtype="<f8")
        data[..., 0] = v.real
        data[..., 1] = v.imag
        fh.write(data.tobytes())


def load_snapshot(path, grid: GridSpec) -> GridWaveFunction:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"bad snapshot magic {magic!r}")
        version, N, d = struct.unpack("<III", fh.read(12))
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        raw = np.frombuffer(fh.read(), dtype="<f8").reshape(N, d, 2)
    return GridWaveFunction(grid, raw[..., 0] + 1j * raw[..., 1])


def write_state_csv(path, psi: GridWaveFunction) -> None:
    """CSV columns: x, then re/im per electronic channel, 17 digits."""
    xs = psi.grid.xs
    cols = ["x"]
    for k in range(psi.N_el):
        cols += [f"re_{k}", f"im_{k}"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i, x in enumerate(xs):
            row = [f"{x:.17g}"]
            for k in range(psi.N_el):
                row += [f"{psi.values[i, k].real:.17g}",
                        f"{psi.values[i, k].imag:.17g}"]
            fh.write(",".join(row) + "\n")
