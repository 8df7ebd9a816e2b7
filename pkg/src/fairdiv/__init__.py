"""Fair division of indivisible goods when agents' values are only known approximately."""

from .allocators import PickOrder, adversarial_instance, round_robin, rr_envy_bound, welfare_max
from .core import Allocation, EnvyReport, NoisyInstance, ValuationMatrix, envy_report, is_balanced, max_envy
from .rng import stream

__all__ = [
    "Allocation",
    "EnvyReport",
    "NoisyInstance",
    "PickOrder",
    "ValuationMatrix",
    "adversarial_instance",
    "envy_report",
    "is_balanced",
    "max_envy",
    "round_robin",
    "rr_envy_bound",
    "stream",
    "welfare_max",
]

__version__ = "0.1.0"
