"""Simulation toolkit for a perching aerial robot with a tendon-driven gripper.

Modules: ``statics`` (grip capacity), ``scene`` (synthetic depth and label
rendering), ``vision`` (perch-point selection), ``planner`` (minimum-snap
trajectories), ``simctrl`` (closed-loop mission simulation) and ``cli``.
"""

__version__ = "0.1.0"
