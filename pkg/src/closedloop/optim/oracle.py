"""Closed-loop objective: pulse -> (distortion) -> evolution -> tomography."""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..distort import DistortionConfig, filter_table, magnus_corrections
from ..measure import MeasuredFidelity, MeasurementChannel
from ..qsim import SpinSystem, local_rotation, pulse_to_channels, state_fidelity


class ObjectiveOracle:
    """Measured-fidelity oracle bound to one system, initial state and channel.

    Every measured state costs ``channel.scheme.n_terms`` evaluations. The
    exact (noise-free) fidelity is available through :meth:`exact` and is never
    charged.
    """

    def __init__(self, system: SpinSystem, rho0, target, channel: MeasurementChannel,
                 distortion: DistortionConfig | None = None):
        self.system = system
        self.rho0 = np.ascontiguousarray(rho0, dtype=np.complex128)
        self.target = np.ascontiguousarray(target, dtype=np.complex128)
        self.channel = channel
        self.distortion = distortion if distortion is not None else DistortionConfig()
        n = system.n_qubits
        # channel order x1, y1, x2, y2, ...; each with the +pi/2 then -pi/2 rotation
        self._rotations = np.ascontiguousarray(np.array([
            local_rotation(a, s, j, n)
            for j in range(1, n + 1) for a in "xy" for s in "+-"
        ]))

    @property
    def evals(self) -> int:
        return self.channel.eval_counter

    def _propagators(self, pulse):
        system = self.system
        table = pulse_to_channels(system, pulse)
        cfg = self.distortion
        if not cfg.active:
            dts = np.full(table.shape[0], system.dt)
            return kernels.slice_propagators(system._h0, system._ops, np.ascontiguousarray(table), dts), 1
        steps = cfg.sub_steps
        avg = filter_table(table, system.dt, cfg.t_r, steps)
        dts = np.full(avg.shape[0], system.dt / steps)
        if cfg.propagator == "average":
            return kernels.slice_propagators(system._h0, system._ops, avg, dts), steps
        hs = kernels.slice_hamiltonians(system._h0, system._ops, avg)
        hs += magnus_corrections(table, system.dt, cfg.t_r, steps, system._h0, system._ops)
        return kernels.expm_hermitian(np.ascontiguousarray(hs), dts), steps

    def final_state(self, pulse) -> np.ndarray:
        us, _ = self._propagators(pulse)
        return kernels.evolve_chain(us, self.rho0)

    def exact(self, pulse) -> float:
        return state_fidelity(self.final_state(pulse), self.target)

    def evaluate(self, pulse) -> MeasuredFidelity:
        return self.channel.measure(self.final_state(pulse))

    def evaluate_many(self, pulses) -> np.ndarray:
        """Measure several pulses in order; returns measured fidelities."""
        states = np.array([self.final_state(p) for p in pulses])
        return self.channel.measure_many(states)

    def insertion_states(self, pulse) -> np.ndarray:
        """Final states with every local rotation inserted after every slice.

        Shape (2n, M, 2, d, d): channel, slice (after slice m = 1..M), sign.
        """
        system = self.system
        us, steps = self._propagators(pulse)
        boundaries = np.arange(1, system.slice_count + 1, dtype=np.int64) * steps
        states = kernels.insertion_states(us, self.rho0, self._rotations, boundaries)
        d = system.dim
        states = states.reshape(system.slice_count, system.n_channels, 2, d, d)
        return states.transpose(1, 0, 2, 3, 4)

    def evaluate_with_insertion(self, pulse, m: int, axis: str, sign: str, qubit: int) -> MeasuredFidelity:
        if not 1 <= m <= self.system.slice_count:
            raise ValueError(f"slice index {m} out of range")
        c = 2 * (qubit - 1) + "xy".index(axis)
        state = self.insertion_states(pulse)[c, m - 1, "+-".index(sign)]
        return self.channel.measure(state)

    def measure_insertions(self, pulse):
        """Measured fidelities for all +/- insertions, each in pulse layout.

        States are measured channel by channel, slice by slice, + before -.
        """
        vals = self.channel.measure_many(self.insertion_states(pulse))
        return vals[..., 0].reshape(-1), vals[..., 1].reshape(-1)
