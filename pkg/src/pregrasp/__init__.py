"""Multi-object pre-grasp synthesis for articulated hands.

Energy-based pose synthesis with annealed Langevin sampling, contact
refinement, reach planning and grasp-quality metrics.
"""

__version__ = "0.1.0"

from .geometry import ObjectShape, Scene, place_objects
from .kinematics import HandConfiguration, HandModel, reference_hand
from .transforms import RigidTransform

__all__ = [
    "HandConfiguration",
    "HandModel",
    "ObjectShape",
    "RigidTransform",
    "Scene",
    "place_objects",
    "reference_hand",
    "__version__",
]
