"""Radial aggregation equations with power-law kernels: kernels, particle solvers,
comparison tools and the Newtonian mass-coordinate reduction."""

from .radial_measure import (
    RadialDensityGrid,
    RadialMeasure,
    cumulative_mass,
    dominates_partial,
    from_density,
    is_more_concentrated,
    is_radially_decreasing,
    push_forward,
    reconstruct_density,
    sphere_area,
    uniform_ball,
    wasserstein2,
)
from .kernel import KernelParams, phi, phi_prime, phi_table, velocity, velocity_divergence

__version__ = "0.1.0"
