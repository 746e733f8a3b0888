"""Recurrent model predictive control."""
from rmpc._backend import BACKEND
from rmpc.dynamics import LinearSystem, Vehicle, VehicleParams
from rmpc.objective import QuadraticUtility, vehicle_utility
from rmpc.policy import Policy, PolicyArchitecture

__version__ = "0.1.0"

__all__ = ["BACKEND", "LinearSystem", "Vehicle", "VehicleParams", "QuadraticUtility", "vehicle_utility",
           "Policy", "PolicyArchitecture", "__version__"]
