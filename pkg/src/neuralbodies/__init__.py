"""Implicit neural representations of irregular small bodies.

Neural density fields trained on gravity samples, neural eclipse functions
for shadow event detection in rotating-frame dynamics, and signed distance
networks reconstructed from surface point clouds.
"""

__version__ = "0.1.0"
