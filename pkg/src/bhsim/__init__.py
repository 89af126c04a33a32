"""bhsim: deterministic multi-UAV balloon interception simulator."""

from .scenario import Scenario, default_scenario, load_scenario, parse_scenario_text
from .sim import RunMetrics, RunResult, run_simulation, sweep

__version__ = "0.1.0"

__all__ = [
    "Scenario",
    "default_scenario",
    "load_scenario",
    "parse_scenario_text",
    "RunMetrics",
    "RunResult",
    "run_simulation",
    "sweep",
    "__version__",
]
