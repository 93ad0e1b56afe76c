"""glyctube: safety-tube closed-loop insulin delivery simulation library."""

from .accel import backend_name
from .engine import SimConfig, SimTrace, run_closed_loop
from .gstc import FunnelSpec, GstcConfig, GstcController
from .patient import (MealEvent, MealProtocol, ParamBounds, PatientParams,
                      PlantState, nominal_params, patient2_params)

__version__ = "0.1.0"

__all__ = ["backend_name", "SimConfig", "SimTrace", "run_closed_loop",
           "FunnelSpec", "GstcConfig", "GstcController", "MealEvent",
           "MealProtocol", "ParamBounds", "PatientParams", "PlantState",
           "nominal_params", "patient2_params", "__version__"]
