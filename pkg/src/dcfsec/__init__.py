"""Security analysis and simulation of distributed consensus filtering under
false data injection on communication channels."""

__version__ = "0.1.0"

from .attacker import AttackPlan, AttackSequence, synthesize
from .coding import CodingSchedule, algorithm1_allocate, coding_matrix_at, decode, encode
from .detection import build_detector_config
from .estimator import SteadyState, run_nominal, solve_steady_state
from .matana import DEFAULT_TOL, ToleranceProfile, chi_square_quantile
from .netmodel import Scenario, ScenarioError, build_paper_scenario, build_random_scenario
from .simharness import ExperimentSpec, MetricsBundle, first_alarm_time, reproduce_figure, run_experiment
from .vulnerability import build_report

__all__ = [
    "__version__",
    "AttackPlan",
    "AttackSequence",
    "synthesize",
    "CodingSchedule",
    "algorithm1_allocate",
    "coding_matrix_at",
    "encode",
    "decode",
    "build_detector_config",
    "SteadyState",
    "run_nominal",
    "solve_steady_state",
    "DEFAULT_TOL",
    "ToleranceProfile",
    "chi_square_quantile",
    "Scenario",
    "ScenarioError",
    "build_paper_scenario",
    "build_random_scenario",
    "ExperimentSpec",
    "MetricsBundle",
    "first_alarm_time",
    "reproduce_figure",
    "run_experiment",
    "build_report",
]
