"""Radially symmetric measures represented as an origin atom plus weighted shells.

A measure ``m * delta_0 + g`` on R^d is stored through its radial marginal: an
atom of mass ``m`` at the origin and a list of particles ``(r_i, w_i)``, each
particle standing for a uniform shell of mass ``w_i`` at radius ``r_i``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DensityHistogram",
    "RadialDensityGrid",
    "RadialMeasure",
    "ball_volume",
    "cumulative_mass",
    "dominates_partial",
    "from_density",
    "from_quantile_function",
    "is_more_concentrated",
    "is_radially_decreasing",
    "push_forward",
    "read_measure_csv",
    "reconstruct_density",
    "smooth_bump",
    "sphere_area",
    "uniform_ball",
    "wasserstein2",
    "write_cumulative_csv",
    "write_measure_csv",
]

MASS_MISMATCH_TOL = 1e-9
DEFAULT_ABSORPTION = 1e-12


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere S^{dim-1} in R^dim (``2`` for dim=1)."""
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


def ball_volume(dim: int) -> float:
    """Volume of the unit ball in R^dim."""
    return sphere_area(dim) / dim


@dataclass(frozen=True, eq=False)
class RadialMeasure:
    """Atom at the origin plus particles with strictly increasing radii.

    Parameters
    ----------
    atom_mass : float
        Mass of the Dirac at the origin.
    radii, weights : array_like
        Particle radii (positive, strictly increasing) and positive weights.
    """

    atom_mass: float = 0.0
    radii: np.ndarray = field(default_factory=lambda: np.empty(0))
    weights: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        radii = np.array(self.radii, dtype=float).reshape(-1)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        atom = float(self.atom_mass)
        if radii.shape != weights.shape:
            raise ValueError("radii and weights must have the same length")
        if not atom >= 0.0 or not math.isfinite(atom):
            raise ValueError(f"atom mass must be finite and nonnegative, got {atom}")
        if radii.size:
            if not np.all(np.isfinite(radii)) or np.any(radii <= 0.0):
                raise ValueError("particle radii must be finite and positive")
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0.0):
                raise ValueError("particle weights must be finite and positive")
            if np.any(np.diff(radii) <= 0.0):
                raise ValueError("particle radii must be strictly increasing")
        radii.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "atom_mass", atom)
        object.__setattr__(self, "_total", atom + math.fsum(weights))

    @property
    def total_mass(self) -> float:
        return self._total

    @property
    def n_particles(self) -> int:
        return int(self.radii.size)

    @property
    def support_radius(self) -> float:
        """Largest particle radius (0 for a pure atom)."""
        return float(self.radii[-1]) if self.radii.size else 0.0

    @classmethod
    def atom(cls, mass: float = 1.0) -> "RadialMeasure":
        return cls(atom_mass=mass)

    @classmethod
    def from_particles(cls, radii, weights, atom_mass: float = 0.0) -> "RadialMeasure":
        """Build a measure from unsorted particles, merging coincident radii."""
        radii = np.asarray(radii, dtype=float).reshape(-1)
        weights = np.broadcast_to(np.asarray(weights, dtype=float), radii.shape)
        order = np.argsort(radii, kind="stable")
        radii, weights = radii[order], weights[order]
        if radii.size:
            starts = np.flatnonzero(np.r_[True, np.diff(radii) > 0.0])
            weights = np.add.reduceat(weights, starts)
            radii = radii[starts]
        return cls(atom_mass=atom_mass, radii=radii, weights=weights)

    def scaled(self, factor: float) -> "RadialMeasure":
        """Dilate all radii by ``factor`` (> 0)."""
        if not factor > 0.0:
            raise ValueError("scale factor must be positive")
        return RadialMeasure(self.atom_mass, self.radii * factor, self.weights)

    def __repr__(self) -> str:
        return (
            f"RadialMeasure(atom_mass={self.atom_mass!r}, n_particles={self.n_particles}, "
            f"total_mass={self.total_mass!r})"
        )


@dataclass(frozen=True, eq=False)
class RadialDensityGrid:
    """Samples of the radial mass density ``u_hat(r) = u(r) |S^{d-1}| r^{d-1}``.

    The density is the piecewise-linear interpolant of ``hat_values`` on ``radii``.
    """

    radii: np.ndarray
    hat_values: np.ndarray

    def __post_init__(self):
        r = np.array(self.radii, dtype=float).reshape(-1)
        h = np.array(self.hat_values, dtype=float).reshape(-1)
        if r.shape != h.shape or r.size < 2:
            raise ValueError("need at least two grid points with matching values")
        if np.any(r < 0.0) or np.any(np.diff(r) <= 0.0):
            raise ValueError("grid radii must be nonnegative and strictly increasing")
        if not np.all(np.isfinite(h)) or np.any(h < 0.0):
            raise ValueError("hat values must be finite and nonnegative")
        r.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "hat_values", h)

    def cumulative(self) -> np.ndarray:
        """Mass inside each grid radius (trapezoid rule, exact for the interpolant)."""
        seg = 0.5 * (self.hat_values[1:] + self.hat_values[:-1]) * np.diff(self.radii)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def total_mass(self) -> float:
        return float(self.cumulative()[-1])

    def density(self, dim: int) -> np.ndarray:
        """Pointwise d-dimensional density ``u(r)``; undefined (nan) at r = 0."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.hat_values / (sphere_area(dim) * self.radii ** (dim - 1))


def from_quantile_function(quantile: Callable[[np.ndarray], np.ndarray], n_particles: int,
                           total_mass: float = 1.0) -> RadialMeasure:
    """Equal-weight particles at the quantile midpoints ``(i - 1/2)/n`` of a distribution.

    ``quantile`` maps levels in (0, 1) to radii.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be positive")
    levels = (np.arange(n_particles) + 0.5) / n_particles
    radii = np.asarray(quantile(levels), dtype=float)
    return RadialMeasure.from_particles(radii, np.full(n_particles, total_mass / n_particles))


def from_density(grid: RadialDensityGrid, n_particles: int) -> RadialMeasure:
    """Quantile discretization of a piecewise-linear radial mass density.

    Particles sit at the quantile midpoints of the exact cumulative mass of the
    interpolant and carry equal weights.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be positive")
    cum = grid.cumulative()
    total = cum[-1]
    if not total > 0.0:
        raise ValueError("empty density")
    targets = (np.arange(n_particles) + 0.5) / n_particles * total
    k = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, grid.radii.size - 2)
    r0 = grid.radii[k]
    h0 = grid.hat_values[k]
    slope = (grid.hat_values[k + 1] - h0) / (grid.radii[k + 1] - r0)
    delta = targets - cum[k]
    # solve h0*tau + slope*tau^2/2 = delta in the cancellation-free form
    tau = 2.0 * delta / (h0 + np.sqrt(np.maximum(h0 * h0 + 2.0 * slope * delta, 0.0)))
    radii = np.minimum(r0 + tau, grid.radii[k + 1])
    return RadialMeasure.from_particles(radii, np.full(n_particles, total / n_particles))


def uniform_ball(dim: int, n_particles: int, radius: float = 1.0, mass: float = 1.0) -> RadialMeasure:
    """Quantile particles of the uniform distribution on the ball of given radius."""
    return from_quantile_function(lambda q: radius * q ** (1.0 / dim), n_particles, mass)


def smooth_bump(dim: int, n_particles: int, radius: float = 1.0, mass: float = 1.0,
                n_grid: int = 8001) -> RadialMeasure:
    """Particles for the bounded, radially decreasing density ``(1 - |x|^2/radius^2)^2``."""
    r = np.linspace(0.0, radius, n_grid)
    hat = r ** (dim - 1) * (1.0 - (r / radius) ** 2) ** 2
    grid = RadialDensityGrid(r, hat * mass / np.trapezoid(hat, r))
    return from_density(grid, n_particles)


def cumulative_mass(mu: RadialMeasure, r):
    """Mass of the closed ball of radius ``r`` (vectorized, right-continuous)."""
    r_arr = np.asarray(r, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(mu.weights)])
    out = mu.atom_mass + csum[np.searchsorted(mu.radii, r_arr, side="right")]
    out = np.where(r_arr < 0.0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def _check_same_mass(mu: RadialMeasure, nu: RadialMeasure):
    if abs(mu.total_mass - nu.total_mass) > MASS_MISMATCH_TOL:
        raise ValueError(
            f"mass mismatch: {mu.total_mass!r} vs {nu.total_mass!r}"
        )


def is_more_concentrated(mu: RadialMeasure, nu: RadialMeasure, tol: float = 1e-12,
                         radius_rtol: float = 0.0) -> bool:
    """True if every closed ball around the origin holds at least as much mass under ``mu``.

    ``radius_rtol`` lets ``mu`` count mass out to ``r (1 + radius_rtol)``, which
    absorbs rounding-level position ties between otherwise identical measures.
    """
    _check_same_mass(mu, nu)
    breaks = np.concatenate([[0.0], mu.radii, nu.radii])
    have = cumulative_mass(mu, breaks * (1.0 + radius_rtol))
    return bool(np.all(have >= cumulative_mass(nu, breaks) - tol))


def dominates_partial(rho: RadialMeasure, mu: RadialMeasure, tol: float = 1e-12) -> bool:
    """Cumulative test for ``rho`` dominating the sub-probability ``mu``.

    When it holds, ``nu = mu + (1 - |mu|) delta_R`` with ``R`` beyond both supports
    is a probability measure with ``nu >= mu`` and ``rho`` more concentrated than
    ``nu``.
    """
    if mu.total_mass > 1.0 + 1e-12:
        raise ValueError(f"dominated measure has mass {mu.total_mass!r} > 1")
    if abs(rho.total_mass - 1.0) > MASS_MISMATCH_TOL:
        raise ValueError(f"dominating measure must be a probability measure, mass {rho.total_mass!r}")
    top = mu.support_radius
    breaks = np.concatenate([[0.0], mu.radii, rho.radii[rho.radii <= top]])
    return bool(np.all(cumulative_mass(rho, breaks) >= cumulative_mass(mu, breaks) - tol))


def push_forward(mu: RadialMeasure, radial_map: Callable[[np.ndarray], np.ndarray], *,
                 contractive: bool = True,
                 absorption_radius: float = DEFAULT_ABSORPTION) -> RadialMeasure:
    """Image of ``mu`` under a radial map applied particle by particle.

    Particles mapped to radii ``<= absorption_radius`` join the atom; coincident
    images merge. With ``contractive=True`` a map that moves any particle outward
    is rejected.
    """
    if mu.radii.size == 0:
        return mu
    images = np.asarray(radial_map(mu.radii.copy()), dtype=float).reshape(mu.radii.shape)
    if not np.all(np.isfinite(images)) or np.any(images < 0.0):
        bad = int(np.flatnonzero(~(np.isfinite(images) & (images >= 0.0)))[0])
        raise ValueError(f"map produced invalid radius {images[bad]!r} for particle {bad}")
    if contractive:
        outward = images > mu.radii * (1.0 + 4.0 * np.finfo(float).eps)
        if np.any(outward):
            raise ValueError("map is not contractive toward origin")
    absorbed = images <= absorption_radius
    atom = mu.atom_mass + math.fsum(mu.weights[absorbed])
    return RadialMeasure.from_particles(images[~absorbed], mu.weights[~absorbed], atom_mass=atom)


def _quantile_steps(mu: RadialMeasure):
    """Positions and cumulative levels of the radial quantile step function."""
    pos = mu.radii
    mass = mu.weights
    if mu.atom_mass > 0.0:
        pos = np.concatenate([[0.0], pos])
        mass = np.concatenate([[mu.atom_mass], mass])
    return pos, np.cumsum(mass)


def wasserstein2(mu: RadialMeasure, nu: RadialMeasure) -> float:
    """Quadratic Wasserstein distance between two radial measures of equal mass.

    Between radially symmetric measures the radial monotone rearrangement is
    optimal, so the distance equals the L2 distance of the radial quantile
    functions weighted by mass.
    """
    _check_same_mass(mu, nu)
    pa, ca = _quantile_steps(mu)
    pb, cb = _quantile_steps(nu)
    if pa.size == 0 or pb.size == 0:
        return 0.0
    top = min(ca[-1], cb[-1])
    levels = np.unique(np.concatenate([ca, cb]))
    levels = levels[levels < top]
    levels = np.concatenate([[0.0], levels, [top]])
    mids = 0.5 * (levels[1:] + levels[:-1])
    ia = np.minimum(np.searchsorted(ca, mids, side="right"), pa.size - 1)
    ib = np.minimum(np.searchsorted(cb, mids, side="right"), pb.size - 1)
    return float(math.sqrt(math.fsum(np.diff(levels) * (pa[ia] - pb[ib]) ** 2)))


@dataclass(frozen=True, eq=False)
class DensityHistogram:
    """Binned reconstruction of a radial measure.

    ``hat`` is mass per unit radius, ``density`` is mass per unit d-volume.
    """

    edges: np.ndarray
    mass: np.ndarray
    hat: np.ndarray
    density: np.ndarray
    atom_mass: float

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def grid(self) -> RadialDensityGrid:
        return RadialDensityGrid(self.centers, self.hat)


def reconstruct_density(mu: RadialMeasure, bin_edges, dim: int) -> DensityHistogram:
    """Histogram of particle mass on radial bins; the atom is reported separately.

    Bin ``k`` collects particles with ``edges[k] <= r < edges[k+1]``; the last
    bin also includes its right edge.
    """
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or edges[0] < 0.0 or np.any(np.diff(edges) <= 0.0):
        raise ValueError("bin edges must be nonnegative and strictly increasing")
    idx = np.searchsorted(edges, mu.radii, side="right") - 1
    idx[mu.radii == edges[-1]] = edges.size - 2
    inside = (idx >= 0) & (idx < edges.size - 1)
    mass = np.bincount(idx[inside], weights=mu.weights[inside], minlength=edges.size - 1)
    widths = np.diff(edges)
    shells = ball_volume(dim) * (edges[1:] ** dim - edges[:-1] ** dim)
    return DensityHistogram(edges, mass, mass / widths, mass / shells, mu.atom_mass)


def is_radially_decreasing(mu: RadialMeasure, bin_edges, dim: int, tol: float = 0.1) -> bool:
    """True if binned d-densities are nonincreasing outward up to relative slack ``tol``."""
    if np.asarray(bin_edges).size < 3:
        raise ValueError("need at least 2 bins")
    dens = reconstruct_density(mu, bin_edges, dim).density
    return bool(np.all(dens[1:] <= dens[:-1] * (1.0 + tol)))


def write_measure_csv(mu: RadialMeasure, path) -> None:
    """Write ``radius,weight`` rows preceded by an ``# atom_mass=`` header line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# atom_mass={mu.atom_mass!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["radius", "weight"])
        writer.writerows((repr(float(r)), repr(float(w))) for r, w in zip(mu.radii, mu.weights))


def read_measure_csv(path) -> RadialMeasure:
    """Inverse of :func:`write_measure_csv`."""
    atom = 0.0
    radii, weights = [], []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                if key.strip() == "atom_mass":
                    atom = float(value)
                continue
            if line.startswith("radius"):
                continue
            r, w = line.split(",")
            radii.append(float(r))
            weights.append(float(w))
    return RadialMeasure(atom, np.array(radii), np.array(weights))


def write_cumulative_csv(mu: RadialMeasure, path, radii=None) -> None:
    """Write ``radius,cumulative_mass`` at the given radii (default: origin plus particle radii)."""
    if radii is None:
        radii = np.concatenate([[0.0], mu.radii])
    radii = np.asarray(radii, dtype=float)
    values = np.atleast_1d(cumulative_mass(mu, radii))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["radius", "cumulative_mass"])
        writer.writerows((repr(float(r)), repr(float(c))) for r, c in zip(radii, values))
