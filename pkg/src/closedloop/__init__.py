"""Closed-loop learning control of small spin systems.

Simulates an n-qubit register under piecewise-constant x/y controls, measures
the prepared state only through a partial-tomography fidelity channel, and
drives GRAPE, NMplus and differential evolution against that channel.
"""
from ._accel import backend
from .bench import Experiment, bell_benchmark, run_batch, run_single, sweep
from .distort import DistortionConfig, distort_pulse
from .measure import MeasurementChannel, bell_scheme
from .qsim import SpinSystem, bell_target, state_fidelity

__version__ = "0.1.0"
