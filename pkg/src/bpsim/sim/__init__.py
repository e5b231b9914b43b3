from .bus import bus_transfer, region_index
from .mswagg import MswaggUnit, analog_windows, ideal_windows, window_schedule
from .simulator import CycleStats, SimResult, simulate

__all__ = ["CycleStats", "MswaggUnit", "SimResult", "analog_windows", "bus_transfer", "ideal_windows",
           "region_index", "simulate", "window_schedule"]
