"""Scenario loading, workload generation, run driver, invariant checks and metrics."""

from .checks import Violation, check_all, check_liveness, check_safety
from .metrics import count_messages, global_bound, summarize
from .runner import RunResult, run
from .scenario import Scenario, ScenarioError, load_scenario
from .workload import gen_workload

__all__ = [
    "RunResult", "Scenario", "ScenarioError", "Violation", "check_all", "check_liveness", "check_safety",
    "count_messages", "gen_workload", "global_bound", "load_scenario", "run", "summarize",
]
