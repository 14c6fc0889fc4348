"""Small modified-nodal-analysis simulator for current-mirror pulse circuits."""
from .netlist import Circuit, NetlistError, load, load_file, parse
from .engine import (ConvergenceError, NewtonConfig, OperatingPoint, SimulationError,
                     SingularMatrixError, TraceSet, dc_sweep, solve_op, transient)

__version__ = "0.1.0"

__all__ = [
    "Circuit", "NetlistError", "load", "load_file", "parse",
    "ConvergenceError", "NewtonConfig", "OperatingPoint", "SimulationError",
    "SingularMatrixError", "TraceSet", "dc_sweep", "solve_op", "transient",
]
