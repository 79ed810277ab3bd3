"""Hierarchical-task MPC with interactive human motion prediction.

Planar mobile-manipulator simulation and control: lexicographic task
hierarchies solved as a cascade of single-task MPC stages, reciprocal
collision-avoidance human prediction embedded through its optimality
conditions, and discrete-time barrier constraints for collision safety.
"""

__version__ = "0.1.0"
