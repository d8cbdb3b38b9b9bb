"""Virtual spectrometer: partial tomography, additive noise, evaluation count.

One *function evaluation* is one Pauli-basis expectation measurement. A Bell
fidelity therefore costs three evaluations (XX, YY and ZZ).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .qsim import IMAG_TOL, pauli_string, state_fidelity


@dataclass(frozen=True)
class TomographyScheme:
    """Fidelity as ``scale * (offset + sum_k coeff_k <P_k>)``."""

    coefficients: tuple
    labels: tuple
    operators: np.ndarray = field(repr=False)
    offset: float = 1.0
    scale: float = 0.25

    @property
    def n_terms(self) -> int:
        return len(self.labels)

    @classmethod
    def from_target(cls, target, tol: float = 1e-12) -> "TomographyScheme":
        """Pauli decomposition of a pure target; only nonzero terms are kept.

        rho_t = sum_P Tr(rho_t P) P / d, so Tr(rho rho_t) is the identity
        offset plus the measured non-identity terms, divided by d.
        """
        target = np.asarray(target, dtype=np.complex128)
        d = target.shape[0]
        n = int(round(np.log2(d)))
        coeffs, labels, ops = [], [], []
        offset = 0.0
        for letters in itertools.product("IXYZ", repeat=n):
            label = "".join(letters)
            op = pauli_string(label)
            c = np.sum(target * op.T)
            if abs(c) <= tol:
                continue
            if set(label) == {"I"}:
                offset = float(c.real)
                continue
            coeffs.append(float(c.real))
            labels.append(label)
            ops.append(op)
        return cls(tuple(coeffs), tuple(labels), np.array(ops), offset, 1.0 / d)

    def assemble(self, expectations) -> np.ndarray:
        return self.scale * (self.offset + np.asarray(expectations) @ np.asarray(self.coefficients))


def bell_scheme() -> TomographyScheme:
    """XX, YY, ZZ with coefficients +1, +1, -1 for (|10> + |01>)/sqrt(2)."""
    labels = ("XX", "YY", "ZZ")
    return TomographyScheme((1.0, 1.0, -1.0), labels, np.array([pauli_string(s) for s in labels]))


def pauli_expectation(rho, op) -> float:
    rho = np.asarray(rho)
    op = np.asarray(op)
    if rho.shape != op.shape:
        raise ValueError(f"dimension mismatch {rho.shape} vs {op.shape}")
    val = np.sum(rho * op.T)
    if abs(val.imag) > IMAG_TOL:
        raise ValueError(f"expectation has imaginary part {val.imag:.3e}")
    return float(val.real)


def exact_fidelity(rho, target) -> float:
    """Noise-free Tr(rho target). Never charged to any channel."""
    return state_fidelity(rho, target)


@dataclass(frozen=True)
class MeasuredFidelity:
    value: float
    evals_charged: int


class MeasurementChannel:
    """Stateful fidelity oracle: one RNG stream and one evaluation counter.

    ``noise_mode="fidelity"`` adds a single N(0, sigma^2) draw to each assembled
    fidelity. ``"observable"`` instead perturbs every Pauli expectation
    independently before assembly. Not safe to share between concurrent runs.
    """

    def __init__(self, scheme: TomographyScheme | None = None, noise_sigma: float = 0.0,
                 seed=None, noise_mode: str = "fidelity"):
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if noise_mode not in ("fidelity", "observable"):
            raise ValueError(f"unknown noise_mode {noise_mode!r}")
        self.scheme = scheme if scheme is not None else bell_scheme()
        self.noise_sigma = float(noise_sigma)
        self.noise_mode = noise_mode
        self.rng = np.random.default_rng(seed)
        self.eval_counter = 0

    def charge_evaluations(self, k: int) -> int:
        if k < 1:
            raise ValueError("k must be >= 1")
        self.eval_counter += int(k)
        return self.eval_counter

    def expectations(self, rhos) -> np.ndarray:
        """Noise-free <P_k> for a stack of states; shape (..., n_terms)."""
        rhos = np.asarray(rhos)
        vals = np.einsum("...ij,kji->...k", rhos, self.scheme.operators)
        if np.max(np.abs(vals.imag), initial=0.0) > IMAG_TOL:
            raise ValueError("Pauli expectations have a non-negligible imaginary part")
        return vals.real

    def measure_many(self, rhos) -> np.ndarray:
        """Measure a stack of states in order; returns the measured fidelities."""
        rhos = np.asarray(rhos)
        flat = rhos.reshape(-1, *rhos.shape[-2:])
        exp = self.expectations(flat)
        n_states = flat.shape[0]
        if n_states:
            self.charge_evaluations(self.scheme.n_terms * n_states)
        if self.noise_sigma > 0 and self.noise_mode == "observable":
            exp = exp + self.noise_sigma * self.rng.standard_normal(exp.shape)
        values = self.scheme.assemble(exp)
        if self.noise_sigma > 0 and self.noise_mode == "fidelity":
            values = values + self.noise_sigma * self.rng.standard_normal(n_states)
        return values.reshape(rhos.shape[:-2])

    def measure(self, rho) -> MeasuredFidelity:
        value = float(self.measure_many(np.asarray(rho)[None])[0])
        return MeasuredFidelity(value, self.scheme.n_terms)


def measure_fidelity(channel: MeasurementChannel, rho) -> MeasuredFidelity:
    return channel.measure(rho)


def charge_evaluations(channel: MeasurementChannel, k: int) -> int:
    return channel.charge_evaluations(k)
