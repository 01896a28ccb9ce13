"""Boundary-integral Stokes solver for a rigid robot in a vessel."""
from .mesh import Discretization
from .dynamics import AdvanceResult, ScanRow, advance, advance_detailed, speed_profile_scan
from .solver import FlowSolution, inlet_profile, solve_channel, solve_flow, surface_traction, trig_interp

__all__ = [
    "AdvanceResult", "ScanRow", "advance", "advance_detailed", "speed_profile_scan",
    "Discretization", "FlowSolution", "inlet_profile", "solve_channel", "solve_flow", "surface_traction", "trig_interp"]
