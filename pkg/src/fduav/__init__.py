"""Joint hover-trajectory, energy-beam, and device-power optimization for a
full-duplex MIMO UAV that wirelessly powers IoT devices while collecting
their data, minimizing the UAV's propulsion-plus-WPT energy."""

from .model import (BeamPlan, DeviceLayout, PowerSchedule, Solution,
                    SystemConfig, Trajectory, default_config, load_config,
                    load_layout, reference_layout, validate_config)
from .channel import ChannelSet, sample_channels
from .energy import EnergyBreakdown, total_energy, verify_feasibility
from .planner import (Scheme, benchmark1, benchmark2, optimize,
                      sweep_moving_time)

__version__ = "0.1.0"

__all__ = [
    "BeamPlan", "ChannelSet", "DeviceLayout", "EnergyBreakdown",
    "PowerSchedule", "Scheme", "Solution", "SystemConfig", "Trajectory",
    "benchmark1", "benchmark2", "default_config", "load_config", "load_layout",
    "optimize", "reference_layout", "sample_channels", "sweep_moving_time",
    "total_energy", "validate_config", "__version__",
]
