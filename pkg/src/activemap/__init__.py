"""Active neural mapping in 2D worlds.

A continually trained neural signed-distance field drives exploration: the
agent visits zero-level regions whose prediction varies most under small
random weight perturbations.
"""

__version__ = "0.1.0"
