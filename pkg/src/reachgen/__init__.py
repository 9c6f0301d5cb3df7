"""Muscle-activation trajectories for planar two-link reaches.

Ground-truth labels come from inverse dynamics along minimum-jerk paths or
from iterative LQR, resolved to six muscles by a bounded least-norm QP; a
sigmoid autoencoder's decoder learns to predict them from reach endpoints.
"""
__version__ = "0.1.0"
