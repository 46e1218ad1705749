"""Trapping and binding of Rydberg atoms by spatially selective dephasing."""
from .params import (BackgroundGas, BoxGeometry, EitParams, Grid1D, InteractionParams,
                     PhysicalSetup, UnitSystem, WavepacketSpec, critical_distance,
                     sample_background)

__version__ = "0.1.0"

__all__ = [
    "BackgroundGas", "BoxGeometry", "EitParams", "Grid1D", "InteractionParams",
    "PhysicalSetup", "UnitSystem", "WavepacketSpec", "critical_distance",
    "sample_background", "__version__",
]
