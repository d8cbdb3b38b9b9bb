"""First-order low-pass distortion of piecewise-constant control waveforms.

Each channel obeys t_r v'(t) = u(t) - v(t) with v(0) = 0, i.e. the causal
convolution of u with h(t) = exp(-t/t_r)/t_r. Inside a slice the input is
constant, so v(t) is known in closed form and the sub-slice averages handed
to the propagator are exact integrals rather than point samples.

Within one slice every channel relaxes with the same factor exp(-tau/t_r),
so H(t) = A + phi(t) B exactly. That makes the second Magnus term a single
commutator with a closed-form weight, which :func:`magnus_corrections`
supplies; adding it lifts the sub-sliced propagation from second to fourth
order in the sub-slice length.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qsim import SpinSystem, internal_hamiltonian, control_operators, pulse_to_channels


@dataclass(frozen=True)
class DistortionConfig:
    """``propagator`` is ``"magnus"`` (averages plus the commutator term) or
    ``"average"`` (plain piecewise-constant averages)."""

    t_r: float = 0.0
    sub_steps: int = 32
    propagator: str = "magnus"

    def __post_init__(self):
        if not self.t_r >= 0:
            raise ValueError("t_r must be >= 0")
        if int(self.sub_steps) < 1:
            raise ValueError("sub_steps must be >= 1")
        if self.propagator not in ("magnus", "average"):
            raise ValueError(f"unknown propagator {self.propagator!r}")

    @property
    def active(self) -> bool:
        return self.t_r > 0


@dataclass(frozen=True)
class Waveform:
    """Sub-sliced amplitude table (K, 2n) in Hz with a uniform step ``dt``."""

    amplitudes: np.ndarray
    dt: float
    steps_per_slice: int = 1

    def __len__(self):
        return self.amplitudes.shape[0]


def filter_table(table, dt: float, t_r: float, sub_steps: int) -> np.ndarray:
    """Exact sub-slice averages of the filtered response of an (M, C) table."""
    table = np.asarray(table, dtype=np.float64)
    if t_r == 0:
        return np.repeat(table, sub_steps, axis=0)
    h = dt / sub_steps
    decay = np.exp(-h / t_r)
    # average of exp(-(t - t0)/t_r) over one sub-slice starting at t0
    avg_factor = -np.expm1(-h / t_r) * t_r / h
    powers = decay ** np.arange(sub_steps)
    out = np.empty((table.shape[0] * sub_steps, table.shape[1]))
    v = np.zeros(table.shape[1])
    for m, u in enumerate(table):
        gap = v - u
        out[m * sub_steps:(m + 1) * sub_steps] = u + np.outer(powers * avg_factor, gap)
        v = u + gap * decay ** sub_steps
    return out


def _magnus_weight(h: float, t_r: float) -> float:
    """c = int_0^h int_0^t1 (exp(-t2/t_r) - exp(-t1/t_r)) dt2 dt1.

    Closed form t_r^2 [x(1 + e^-x) - 2(1 - e^-x)] with x = h/t_r; the series
    sum_{m>=3} (-1)^m (2 - m) x^m / m! avoids cancellation for small x.
    """
    x = h / t_r
    if x < 0.1:
        m = np.arange(3, 16)
        fact = np.cumprod(np.arange(1.0, 16.0))[m - 1]
        g = float(np.sum((-1.0) ** m * (2 - m) * x ** m / fact))
    else:
        g = x * (1 + np.exp(-x)) - 2 * (1 - np.exp(-x))
    return t_r * t_r * g


def magnus_corrections(table, dt: float, t_r: float, sub_steps: int, h0, ops) -> np.ndarray:
    """Hermitian corrections (M*S, d, d) to add to the averaged sub-slice Hamiltonians.

    In slice m with input u and starting filter state v_s, H(t) = A + phi(t) B
    where A = H_0 + 2 pi sum u_c O_c and B = 2 pi sum (v_s - u)_c O_c. The
    second Magnus term over sub-slice k is -(c r^k / 2) [A, B], i.e. an extra
    -i c r^k [A, B] / (2h) on the effective Hamiltonian.
    """
    table = np.asarray(table, dtype=np.float64)
    d = h0.shape[0]
    out = np.zeros((table.shape[0] * sub_steps, d, d), dtype=np.complex128)
    if t_r == 0:
        return out
    h = dt / sub_steps
    r = np.exp(-h / t_r)
    weights = (-0.5j * _magnus_weight(h, t_r) / h) * r ** np.arange(sub_steps)
    v = np.zeros(table.shape[1])
    for m, u in enumerate(table):
        a = h0 + 2 * np.pi * np.tensordot(u, ops, axes=(0, 0))
        b = 2 * np.pi * np.tensordot(v - u, ops, axes=(0, 0))
        out[m * sub_steps:(m + 1) * sub_steps] = weights[:, None, None] * (a @ b - b @ a)
        v = u + (v - u) * r ** sub_steps
    return out


def filter_response(table, dt: float, t_r: float, times) -> np.ndarray:
    """Filtered amplitude v(t) at arbitrary times, shape (len(times), C)."""
    table = np.asarray(table, dtype=np.float64)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if t_r == 0:
        idx = np.clip((times / dt).astype(int), 0, table.shape[0] - 1)
        return table[idx]
    out = np.empty((times.size, table.shape[1]))
    for k, t in enumerate(times):
        v = np.zeros(table.shape[1])
        m = 0
        while m < table.shape[0] and (m + 1) * dt <= t:
            v = table[m] + (v - table[m]) * np.exp(-dt / t_r)
            m += 1
        if m < table.shape[0]:
            tau = t - m * dt
            v = table[m] + (v - table[m]) * np.exp(-tau / t_r)
        else:
            tau = t - m * dt
            v = v * np.exp(-tau / t_r)
        out[k] = v
    return out


def distort_pulse(system: SpinSystem, pulse, cfg: DistortionConfig) -> Waveform:
    table = pulse_to_channels(system, pulse)
    amps = filter_table(table, system.dt, cfg.t_r, cfg.sub_steps)
    return Waveform(amps, system.dt / cfg.sub_steps, cfg.sub_steps)


def waveform_hamiltonians(system: SpinSystem, waveform: Waveform) -> list:
    """One (H, dt) pair per sub-slice, ready for :func:`closedloop.qsim.evolve`."""
    amps = np.asarray(waveform.amplitudes, dtype=np.float64)
    if amps.ndim != 2 or amps.shape[1] != system.n_channels:
        raise ValueError(f"waveform must have {system.n_channels} channels")
    if not np.all(np.isfinite(amps)):
        raise ValueError("waveform amplitudes must be finite")
    h0 = internal_hamiltonian(system)
    ops = control_operators(system)
    hs = h0[None] + 2 * np.pi * np.tensordot(amps, ops, axes=(1, 0))
    return [(h, waveform.dt) for h in hs]
