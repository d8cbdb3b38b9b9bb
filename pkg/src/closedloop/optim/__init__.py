from .de import DeConfig, de_crossover, de_mutate, de_run
from .grape import GrapeConfig, grape_measure_gradient, grape_run
from .nmplus import NmplusConfig, nm_hyperplane_direction, nm_regular_simplex, nmplus_run
from .oracle import ObjectiveOracle
from .trace import RunTrace, StoppingRule, stopping_rule

__all__ = [
    "DeConfig", "de_crossover", "de_mutate", "de_run",
    "GrapeConfig", "grape_measure_gradient", "grape_run",
    "NmplusConfig", "nm_hyperplane_direction", "nm_regular_simplex", "nmplus_run",
    "ObjectiveOracle", "RunTrace", "StoppingRule", "stopping_rule",
]
