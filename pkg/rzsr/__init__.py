# RZSR: zero-shot super-resolution with depth-guided self-exemplars
__version__ = "0.1.0"
