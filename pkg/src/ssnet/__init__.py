"""SSN: a hybrid convolution/attention trajectory model for collision
avoidance, a numpy autodiff substrate, and a synthetic closed-loop simulator."""

__version__ = "0.1.0"
