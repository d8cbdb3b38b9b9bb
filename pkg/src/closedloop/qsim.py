"""Spin-system model, propagators and density-matrix evolution.

Basis ordering is |q1 q2 ... qn> with qubit 1 the most significant bit.
Qubit indices are 1-based throughout the public API, slice indices too.
Control amplitudes are carried in Hz; the 2*pi factor is applied only when a
Hamiltonian is assembled.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from . import kernels

HERMITIAN_TOL = 1e-10
IMAG_TOL = 1e-12

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


@dataclass(frozen=True)
class SpinSystem:
    """Static description of an n-qubit register driven by x/y controls.

    Parameters
    ----------
    n_qubits : int
    couplings : sequence of (i, j, J_ij)
        Pairwise zz couplings, 1-based qubit indices with i < j, J in Hz.
    total_time : float
        Control duration T in seconds.
    slice_count : int
        Number M of piecewise-constant slices.
    """

    n_qubits: int
    couplings: tuple = ()
    total_time: float = 5e-3
    slice_count: int = 10
    _h0: np.ndarray = field(init=False, repr=False, compare=False)
    _ops: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n_qubits) < 1:
            raise ValueError("n_qubits must be >= 1")
        if int(self.slice_count) < 1:
            raise ValueError("slice_count must be >= 1")
        if not self.total_time > 0:
            raise ValueError("total_time must be > 0")
        couplings = tuple((int(i), int(j), float(c)) for i, j, c in self.couplings)
        seen = set()
        for i, j, _ in couplings:
            if not (1 <= i < j <= self.n_qubits):
                raise ValueError(f"invalid coupling pair ({i}, {j})")
            if (i, j) in seen:
                raise ValueError(f"duplicate coupling pair ({i}, {j})")
            seen.add((i, j))
        object.__setattr__(self, "couplings", couplings)
        object.__setattr__(self, "_h0", internal_hamiltonian(self))
        object.__setattr__(self, "_ops", control_operators(self))

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits

    @property
    def dt(self) -> float:
        return self.total_time / self.slice_count

    @property
    def n_channels(self) -> int:
        return 2 * self.n_qubits

    @property
    def n_params(self) -> int:
        """Length p = 2 n M of a control vector."""
        return 2 * self.n_qubits * self.slice_count


def pauli_operator(axis: str, qubit: int, n_qubits: int) -> np.ndarray:
    """Pauli ``axis`` acting on ``qubit`` (1-based) of an n-qubit register."""
    if axis not in _PAULI:
        raise ValueError(f"unknown Pauli axis {axis!r}")
    if not 1 <= qubit <= n_qubits:
        raise ValueError(f"qubit {qubit} out of range 1..{n_qubits}")
    factors = [np.eye(2, dtype=np.complex128)] * n_qubits
    factors[qubit - 1] = _PAULI[axis]
    return reduce(np.kron, factors)


def pauli_string(label: str) -> np.ndarray:
    """Tensor product for a label such as ``"XX"`` or ``"IZ"``."""
    mats = [np.eye(2, dtype=np.complex128) if c in "Ii" else _PAULI[c.lower()] for c in label]
    return reduce(np.kron, mats)


def internal_hamiltonian(system: SpinSystem) -> np.ndarray:
    """Sum over couplings of pi J_ij sigma_z^i sigma_z^j / 2, in rad/s."""
    n = system.n_qubits
    h = np.zeros((2 ** n, 2 ** n), dtype=np.complex128)
    for i, j, coupling in system.couplings:
        h += np.pi * coupling / 2 * (pauli_operator("z", i, n) @ pauli_operator("z", j, n))
    return h


def control_operators(system: SpinSystem) -> np.ndarray:
    """Stack (2n, d, d) ordered x1, y1, x2, y2, ... to match the channel order."""
    n = system.n_qubits
    return np.array([pauli_operator(a, j, n) for j in range(1, n + 1) for a in "xy"])


# --------------------------------------------------------------------------
# control-vector layout

def pulse_to_channels(system: SpinSystem, pulse) -> np.ndarray:
    """Convert the flat control vector into an (M, 2n) amplitude table.

    The flat layout is (u_x^1[1..M], u_y^1[1..M], u_x^2[1..M], ...), so the
    flat vector reshaped to (2n, M) is already channel-major.
    """
    pulse = np.asarray(pulse, dtype=np.float64)
    if pulse.shape != (system.n_params,):
        raise ValueError(f"pulse must have length {system.n_params}, got {pulse.shape}")
    return np.ascontiguousarray(pulse.reshape(system.n_channels, system.slice_count).T)


def channels_to_pulse(system: SpinSystem, table) -> np.ndarray:
    table = np.asarray(table, dtype=np.float64)
    return np.ascontiguousarray(table.T).reshape(-1)


def pulse_labels(system: SpinSystem) -> list:
    """Column names for a pulse dump, e.g. ``ux1[3]``."""
    return [f"u{a}{j}[{m}]"
            for j in range(1, system.n_qubits + 1)
            for a in "xy"
            for m in range(1, system.slice_count + 1)]


def slice_hamiltonian(system: SpinSystem, pulse, m: int) -> np.ndarray:
    """Hamiltonian of slice ``m`` (1-based) under ``pulse``."""
    if not 1 <= m <= system.slice_count:
        raise ValueError(f"slice index {m} out of range 1..{system.slice_count}")
    amps = pulse_to_channels(system, pulse)[m - 1]
    return system._h0 + 2 * np.pi * np.tensordot(amps, system._ops, axes=(0, 0))


# --------------------------------------------------------------------------
# propagation

def is_hermitian(h, tol: float = HERMITIAN_TOL) -> bool:
    h = np.asarray(h)
    return h.ndim == 2 and h.shape[0] == h.shape[1] and np.max(np.abs(h - h.conj().T), initial=0.0) <= tol


def matrix_exp_hermitian(h, dt: float) -> np.ndarray:
    """exp(-i dt H) through the eigendecomposition of the Hermitian ``h``."""
    h = np.asarray(h, dtype=np.complex128)
    if not is_hermitian(h):
        raise ValueError("matrix_exp_hermitian requires a Hermitian matrix")
    return kernels.expm_hermitian(np.ascontiguousarray(h[None]), np.array([float(dt)]))[0]


def _propagators(waveform: Sequence, dim: int) -> np.ndarray:
    if len(waveform) == 0:
        raise ValueError("waveform must be nonempty")
    hs = np.array([np.asarray(h, dtype=np.complex128) for h, _ in waveform])
    if hs.shape[1:] != (dim, dim):
        raise ValueError(f"waveform matrices have shape {hs.shape[1:]}, expected {(dim, dim)}")
    dts = np.array([float(t) for _, t in waveform])
    return kernels.expm_hermitian(np.ascontiguousarray(hs), dts)


def evolve(system: SpinSystem, waveform: Sequence, rho0) -> np.ndarray:
    """Evolve ``rho0`` through a sequence of (H, dt) pairs, first pair first."""
    rho0 = np.ascontiguousarray(rho0, dtype=np.complex128)
    us = _propagators(waveform, rho0.shape[0])
    return kernels.evolve_chain(us, rho0)


def evolve_with_insertion(system: SpinSystem, waveform: Sequence, rho0, after_slice: int,
                          rotation) -> np.ndarray:
    """Evolve with ``rotation`` applied after ``after_slice`` waveform steps.

    ``after_slice = 0`` rotates the initial state, ``after_slice = len(waveform)``
    rotates the final one.
    """
    if not 0 <= after_slice <= len(waveform):
        raise ValueError(f"after_slice {after_slice} out of range 0..{len(waveform)}")
    rho0 = np.ascontiguousarray(rho0, dtype=np.complex128)
    us = _propagators(waveform, rho0.shape[0])
    rot = np.ascontiguousarray(np.asarray(rotation, dtype=np.complex128)[None])
    return kernels.insertion_states(us, rho0, rot, np.array([after_slice], dtype=np.int64))[0, 0]


def pulse_waveform(system: SpinSystem, pulse) -> list:
    """The plain piecewise-constant waveform: M pairs (H_m, dt)."""
    return [(slice_hamiltonian(system, pulse, m), system.dt) for m in range(1, system.slice_count + 1)]


def propagators_from_amplitudes(system: SpinSystem, amps, dt: float) -> np.ndarray:
    """Stack of slice propagators for an amplitude table of shape (K, 2n)."""
    amps = np.ascontiguousarray(amps, dtype=np.float64)
    if amps.ndim != 2 or amps.shape[1] != system.n_channels:
        raise ValueError(f"amplitude table must have shape (K, {system.n_channels})")
    dts = np.full(amps.shape[0], float(dt))
    return kernels.slice_propagators(system._h0, system._ops, amps, dts)


def local_rotation(axis: str, sign: str, qubit: int, n_qubits: int) -> np.ndarray:
    """Rotation by +pi/2 (``sign='+'``) or -pi/2 about ``axis`` on one qubit."""
    if axis not in ("x", "y"):
        raise ValueError(f"rotation axis must be 'x' or 'y', got {axis!r}")
    if sign not in ("+", "-"):
        raise ValueError(f"sign must be '+' or '-', got {sign!r}")
    s = 1.0 if sign == "+" else -1.0
    sigma = pauli_operator(axis, qubit, n_qubits)
    # sigma^2 = I, so exp(-i s pi/4 sigma) = (I - i s sigma)/sqrt(2)
    return (np.eye(sigma.shape[0]) - 1j * s * sigma) / np.sqrt(2)


# --------------------------------------------------------------------------
# states

def basis_state(bits: Iterable[int]) -> np.ndarray:
    """Projector onto a computational basis state, e.g. ``basis_state([0, 0])``."""
    bits = list(bits)
    idx = int("".join(str(int(b)) for b in bits), 2)
    rho = np.zeros((2 ** len(bits),) * 2, dtype=np.complex128)
    rho[idx, idx] = 1.0
    return rho


def bell_target() -> np.ndarray:
    """Projector onto (|10> + |01>)/sqrt(2)."""
    psi = np.array([0, 1, 1, 0], dtype=np.complex128) / np.sqrt(2)
    return np.outer(psi, psi.conj())


def validate_density_matrix(rho, tol: float = HERMITIAN_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if not is_hermitian(rho, tol):
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise ValueError("density matrix has negative eigenvalues")
    return rho


def state_fidelity(rho_f, rho_t) -> float:
    """Tr(rho_f rho_t), with numerical dust removed and clipped to [0, 1]."""
    rho_f = np.asarray(rho_f)
    rho_t = np.asarray(rho_t)
    if rho_f.shape != rho_t.shape:
        raise ValueError(f"dimension mismatch {rho_f.shape} vs {rho_t.shape}")
    val = np.sum(rho_f * rho_t.T)
    if abs(val.imag) > IMAG_TOL:
        raise ValueError(f"fidelity has imaginary part {val.imag:.3e}")
    return float(min(1.0, max(0.0, val.real)))
