"""Four-level dot model, operator algebra and time-bin photonic states.

Basis ordering is fixed for the whole package::

    0  |h>      hole spin, shelf state (Purcell-enhanced decay lands here)
    1  |hbar>   hole spin, driven by the resonant laser
    2  |T>      trion, uncoupled by default
    3  |Tbar>   trion, upper level of the driven transition

Units: time in ns, angular rates in rad/ns, energies in ueV.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

HBAR_UEV_NS = 0.658212
"""Reduced Planck constant in ueV*ns."""

H, HBAR, T, TBAR = 0, 1, 2, 3
LEVEL_NAMES = ("h", "hbar", "T", "Tbar")
GROUND = (H, HBAR)
EXCITED = (T, TBAR)


class LevelBasis(enum.IntEnum):
    """Index of each level in every 4x4 operator used by the package."""

    h = H
    hbar = HBAR
    T = T
    Tbar = TBAR


class Channel(enum.IntEnum):
    ENHANCED = 0
    DIAGONAL = 1
    DEPHASE = 2
    SPINFLIP = 3


CLICK_CHANNELS = (Channel.ENHANCED, Channel.DIAGONAL)


class ParameterError(ValueError):
    """Raised when physical parameters violate their documented ranges."""


def ueV_to_rad_per_ns(energy_ueV: float) -> float:
    return energy_ueV / HBAR_UEV_NS


def rad_per_ns_to_ueV(rate: float) -> float:
    return rate * HBAR_UEV_NS


@dataclass(frozen=True)
class SystemParams:
    """Rates and splittings of the dot-cavity system.

    Attributes:
        gamma_enh: Purcell-enhanced decay |Tbar> -> enhanced_target (1/ns).
        gamma_diag: residual decay |Tbar> -> the other ground state (1/ns).
        gamma_deph: ground pure-dephasing rate, 1/T2* (1/ns). Markov mode only.
        sigma_quasistatic: std-dev of a static ground-splitting offset (rad/ns).
            Quasi-static mode only.
        gamma_sf: ground spin-flip rate, both directions (1/ns).
        delta_drive: drive detuning from the |hbar>-|Tbar> resonance (rad/ns).
        delta_h: hole Zeeman splitting (ueV); bookkeeping only, the rotating
            frame removes it from the dynamics.
        dephasing_mode: "markov" or "quasistatic".
        enhanced_target: ground level reached by the enhanced decay (H by default).
    """

    gamma_enh: float = 20.0
    gamma_diag: float = 0.8
    gamma_deph: float = 0.0
    sigma_quasistatic: float = 0.0
    gamma_sf: float = 0.0
    delta_drive: float = 0.0
    delta_h: float = 0.0
    dephasing_mode: str = "markov"
    enhanced_target: int = H

    def __post_init__(self) -> None:
        errors = self.validation_errors()
        if errors:
            raise ParameterError("; ".join(errors))

    def validation_errors(self) -> list[str]:
        errs = []
        for name in ("gamma_enh", "gamma_diag", "gamma_deph", "sigma_quasistatic", "gamma_sf"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                errs.append(f"{name} must be >= 0 (got {value})")
        if self.gamma_enh + self.gamma_diag <= 0:
            errs.append("gamma_enh + gamma_diag must be > 0")
        if not np.isfinite(self.delta_drive):
            errs.append("delta_drive must be finite")
        if self.dephasing_mode not in ("markov", "quasistatic"):
            errs.append(f"dephasing_mode must be 'markov' or 'quasistatic' (got {self.dephasing_mode!r})")
        elif self.dephasing_mode == "markov" and self.sigma_quasistatic != 0:
            errs.append("sigma_quasistatic must be 0 in markov dephasing mode")
        elif self.dephasing_mode == "quasistatic" and self.gamma_deph != 0:
            errs.append("gamma_deph must be 0 in quasistatic dephasing mode")
        if self.enhanced_target not in GROUND:
            errs.append("enhanced_target must be 0 (h) or 1 (hbar)")
        return errs

    @property
    def gamma_total(self) -> float:
        return self.gamma_enh + self.gamma_diag

    @property
    def t2star(self) -> float:
        """Ground coherence time implied by the active dephasing mode (ns)."""
        if self.dephasing_mode == "markov":
            return np.inf if self.gamma_deph == 0 else 1.0 / self.gamma_deph
        # 1/e point of the Gaussian coherence exp(-sigma^2 t^2 / 2)
        return np.inf if self.sigma_quasistatic == 0 else np.sqrt(2.0) / self.sigma_quasistatic

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "gamma_enh": self.gamma_enh,
            "gamma_diag": self.gamma_diag,
            "gamma_deph": self.gamma_deph,
            "sigma_quasistatic": self.sigma_quasistatic,
            "gamma_sf": self.gamma_sf,
            "delta_drive": self.delta_drive,
            "delta_h": self.delta_h,
            "dephasing_mode": self.dephasing_mode,
            "enhanced_target": int(self.enhanced_target),
        }


def projector(i: int, j: int | None = None) -> np.ndarray:
    """|i><j| in the fixed basis."""
    j = i if j is None else j
    op = np.zeros((4, 4), dtype=complex)
    op[i, j] = 1.0
    return op


def build_hamiltonian(params: SystemParams, omega: complex = 0.0) -> np.ndarray:
    """Rotating-frame Hamiltonian (rad/ns) for drive amplitude ``omega``.

    H = delta_drive |Tbar><Tbar| + omega/2 |Tbar><hbar| + conj(omega)/2 |hbar><Tbar|
    """
    ham = np.zeros((4, 4), dtype=complex)
    ham[TBAR, TBAR] = params.delta_drive
    ham[TBAR, HBAR] = omega / 2
    ham[HBAR, TBAR] = np.conj(omega) / 2
    return ham


@dataclass(frozen=True)
class CollapseOp:
    op: np.ndarray = field(repr=False)
    channel: Channel

    def __iter__(self):
        # allows ``for op, tag in build_collapse_ops(p)``
        yield self.op
        yield self.channel


def build_collapse_ops(params: SystemParams) -> list[CollapseOp]:
    """Jump operators with their channel tags; zero-rate channels are omitted."""
    other = HBAR if params.enhanced_target == H else H
    out = []
    if params.gamma_enh > 0:
        out.append(CollapseOp(np.sqrt(params.gamma_enh) * projector(params.enhanced_target, TBAR), Channel.ENHANCED))
    if params.gamma_diag > 0:
        out.append(CollapseOp(np.sqrt(params.gamma_diag) * projector(other, TBAR), Channel.DIAGONAL))
    if params.dephasing_mode == "markov" and params.gamma_deph > 0:
        sz = projector(H) - projector(HBAR)
        out.append(CollapseOp(np.sqrt(params.gamma_deph / 2) * sz, Channel.DEPHASE))
    if params.gamma_sf > 0:
        out.append(CollapseOp(np.sqrt(params.gamma_sf) * projector(HBAR, H), Channel.SPINFLIP))
        out.append(CollapseOp(np.sqrt(params.gamma_sf) * projector(H, HBAR), Channel.SPINFLIP))
    return out


def lindblad_rhs(rho: np.ndarray, ham: np.ndarray, collapse) -> np.ndarray:
    """Master-equation generator  -i[H, rho] + sum_k D[L_k] rho."""
    drho = -1j * (ham @ rho - rho @ ham)
    for item in collapse:
        if isinstance(item, CollapseOp):
            op = item.op
        elif isinstance(item, tuple):
            op = item[0]
        else:
            op = np.asarray(item)
        opd = op.conj().T
        ldl = opd @ op
        drho += op @ rho @ opd - 0.5 * (ldl @ rho + rho @ ldl)
    return drho


# -- density matrices -------------------------------------------------------

def density_matrix(state) -> np.ndarray:
    """Density matrix from a level index, a 4-vector or a 4x4 matrix."""
    if np.isscalar(state):
        return projector(int(state))
    arr = np.asarray(state, dtype=complex)
    if arr.shape == (4,):
        arr = arr / np.linalg.norm(arr)
        return np.outer(arr, arr.conj())
    if arr.shape == (4, 4):
        return arr.copy()
    raise ValueError(f"cannot build a 4x4 density matrix from shape {arr.shape}")


def mixed_ground() -> np.ndarray:
    return 0.5 * (projector(H) + projector(HBAR))


def check_density_matrix(rho: np.ndarray, tol: float = 1e-9) -> list[str]:
    """List of violated density-matrix invariants (empty when valid)."""
    problems = []
    if rho.shape != (4, 4):
        return [f"shape {rho.shape} != (4, 4)"]
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm >= tol:
        problems.append(f"not Hermitian (max |rho - rho^dag| = {herm:.3e})")
    tr = abs(np.trace(rho) - 1)
    if tr >= tol:
        problems.append(f"trace off by {tr:.3e}")
    lmin = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if lmin < -tol:
        problems.append(f"negative eigenvalue {lmin:.3e}")
    return problems


# -- photonic time-bin states ------------------------------------------------

@dataclass(frozen=True)
class TimeBinState:
    """Single photon over ``d`` time bins plus a vacuum amplitude."""

    amps: np.ndarray
    vac: complex = 0.0

    def __post_init__(self) -> None:
        amps = np.atleast_1d(np.asarray(self.amps, dtype=complex))
        object.__setattr__(self, "amps", amps)
        object.__setattr__(self, "vac", complex(self.vac))
        if amps.ndim != 1 or amps.size == 0:
            raise ValueError("a time-bin state needs at least one bin")
        norm = abs(self.vac) ** 2 + float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1) > 1e-9:
            raise ValueError(f"time-bin state is not normalised (norm^2 = {norm:.12f})")

    @property
    def d(self) -> int:
        return self.amps.size

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def vector(self) -> np.ndarray:
        """Amplitudes as ``[vac, c_1, ..., c_d]``."""
        return np.concatenate([[self.vac], self.amps])

    @classmethod
    def normalized(cls, amps, vac: complex = 0.0) -> "TimeBinState":
        vec = np.concatenate([[complex(vac)], np.asarray(amps, dtype=complex)])
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ValueError("zero vector cannot be normalised")
        vec = vec / norm
        return cls(vec[1:], vec[0])


def wstate(d: int) -> TimeBinState:
    """Equal superposition of one photon across ``d`` bins."""
    if int(d) != d or d < 1:
        raise ValueError(f"bin count must be a positive integer (got {d})")
    return TimeBinState(np.full(int(d), 1 / np.sqrt(d)), 0.0)


def vacuum(d: int) -> TimeBinState:
    return TimeBinState(np.zeros(d), 1.0)


def single_bin(d: int, k: int) -> TimeBinState:
    amps = np.zeros(d)
    amps[k] = 1.0
    return TimeBinState(amps, 0.0)


def fidelity(a: TimeBinState, b: TimeBinState) -> float:
    """|<a|b>|^2 including the vacuum component."""
    if a.d != b.d:
        raise ValueError(f"bin counts differ ({a.d} vs {b.d})")
    overlap = np.vdot(a.vector(), b.vector())
    return float(min(1.0, abs(overlap) ** 2))


def raman_emission_offset(drive_offset_ueV: float) -> float:
    """Energy offset of the Raman photon for a given drive offset (ueV).

    On two-photon resonance the scattered photon inherits the laser detuning
    one-to-one, so tuning the drive tunes the emission.
    """
    return float(drive_offset_ueV)
