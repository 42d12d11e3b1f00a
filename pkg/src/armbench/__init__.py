"""Action-space benchmark for torque-controlled 7-DoF arms."""

__version__ = "0.1.0"
