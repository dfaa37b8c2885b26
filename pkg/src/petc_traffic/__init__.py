"""Traffic models of periodic event-triggered control loops under bounded disturbances."""
from .model import PetcSystem, example_system

__version__ = "0.1.0"

__all__ = ["PetcSystem", "example_system", "__version__"]
