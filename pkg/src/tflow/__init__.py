"""T-flow renormalization group for the single-impurity Anderson dot.

The flow integrates the time-nonlocal memory kernel of the dot from infinite
temperature down to zero temperature and yields the propagator, occupations,
currents and charge fluctuations at every temperature it passes.
"""
from .algebra import ModelParams, Reservoir
from .config import RunConfig, load_config, parse_config
from .flow import FlowOptions, FlowResult, StepperConfig, flow_run
from .timegrid import TimeGrid

__version__ = "0.1.0"

__all__ = ["ModelParams", "Reservoir", "RunConfig", "load_config", "parse_config", "FlowOptions",
           "FlowResult", "StepperConfig", "flow_run", "TimeGrid", "__version__"]
