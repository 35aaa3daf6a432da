"""Neural-ODE flight dynamics model with a point-mass benchmark."""

__version__ = "0.1.0"
