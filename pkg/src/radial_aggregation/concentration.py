"""Singular radial profiles, their comparison flows and the concentration check.

Three families of radial densities supported on ``[0, r0]``, written through
their radial mass densities ``hat(r) = |S^{d-1}| r^{d-1} f(r)``:

* power law      ``c w r^-(alpha-1+eps)``
* critical       ``c w r^-(alpha-1)``
* log corrected  ``c w r^-(alpha-1) (-ln r)^-beta``

with ``w = |S^{d-1}|``. Each drives a velocity field whose magnitude near the
origin is bounded below by an explicit expression; the matching one-dimensional
flows have closed forms and are used to certify that mass reaches the origin.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .kernel import KernelParams, phi_table
from .radial_measure import RadialMeasure, cumulative_mass, dominates_partial

__all__ = [
    "BootstrapCheck",
    "BootstrapReport",
    "BoundConstants",
    "SingularProfile",
    "atom_mass_under_map1",
    "bootstrap_verdict",
    "bound_constants",
    "closed_form_flow",
    "discretize_profile",
    "evaluate_hat",
    "fit_domination",
    "profile_cumulative",
    "profile_quantile",
    "pushforward_critical_closed_form",
    "velocity_lower_bound",
]

FAMILIES = ("power", "critical", "log")


@dataclass(frozen=True)
class SingularProfile:
    """A member of one of the three singular families.

    ``shape`` holds ``eps`` for the power law and ``beta`` for the log-corrected
    family; it is ignored for the critical profile.
    """

    family: str
    params: KernelParams
    r0: float = 1.0
    c: float = 1.0
    shape: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not (self.r0 > 0.0 and math.isfinite(self.r0)):
            raise ValueError(f"r0 must be positive, got {self.r0!r}")
        if not self.c > 0.0:
            raise ValueError(f"amplitude c must be positive, got {self.c!r}")
        if self.params.alpha >= 2.0:
            raise ValueError("singular profiles need alpha < 2")
        if self.family == "power":
            if not 0.0 < self.shape < 1.0:
                raise ValueError(f"eps must lie in (0, 1), got {self.shape!r}")
            if self.shape >= 2.0 - self.params.alpha:
                raise ValueError(f"eps = {self.shape!r} makes the profile non-integrable "
                                 f"at the origin (need eps < 2 - alpha)")
        elif self.family == "log":
            lo = (self.params.dim + self.params.alpha - 2.0) / self.params.dim
            if not lo < self.shape < 1.0:
                raise ValueError(f"beta must lie in ({lo!r}, 1), got {self.shape!r}")
            if self.r0 >= 1.0:
                raise ValueError("log-corrected profile needs r0 < 1")

    @classmethod
    def power_law(cls, params, eps, r0=1.0, c=1.0):
        return cls("power", params, r0, c, eps)

    @classmethod
    def critical(cls, params, r0=1.0, c=1.0):
        return cls("critical", params, r0, c, 0.0)

    @classmethod
    def log_corrected(cls, params, beta, r0=0.5, c=1.0):
        return cls("log", params, r0, c, beta)

    @classmethod
    def parse(cls, text: str, params: KernelParams, r0: float | None = None, c: float = 1.0):
        """Build from ``power:eps``, ``critical`` or ``log:beta``."""
        name, _, arg = text.strip().partition(":")
        try:
            if name == "critical" and not arg:
                return cls.critical(params, 1.0 if r0 is None else r0, c)
            if name == "power":
                return cls.power_law(params, float(arg), 1.0 if r0 is None else r0, c)
            if name == "log":
                return cls.log_corrected(params, float(arg), 0.5 if r0 is None else r0, c)
        except ValueError as exc:
            raise ValueError(f"bad family {text!r}: {exc}") from None
        raise ValueError(f"bad family {text!r}; expected power:eps, critical or log:beta")

    @property
    def weight(self) -> float:
        """``c |S^{d-1}|``."""
        return self.c * self.params.sphere_area

    @property
    def hat_exponent(self) -> float:
        """Power of ``1/r`` in the radial mass density."""
        eps = self.shape if self.family == "power" else 0.0
        return self.params.alpha - 1.0 + eps

    @property
    def total_mass(self) -> float:
        return float(profile_cumulative(self, self.r0))

    def with_amplitude(self, c: float) -> "SingularProfile":
        return SingularProfile(self.family, self.params, self.r0, c, self.shape)

    def normalized(self) -> "SingularProfile":
        """Same shape rescaled to unit mass."""
        return self.with_amplitude(self.c / self.total_mass)


def evaluate_hat(profile: SingularProfile, r):
    """Radial mass density of ``profile`` at ``r > 0``; zero beyond ``r0``."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(~(r_arr > 0.0)):
        raise ValueError("radius must be positive")
    if profile.family == "log" and np.any(r_arr >= 1.0):
        raise ValueError("log-corrected profile is undefined for r >= 1 (log changes sign)")
    inside = r_arr <= profile.r0
    safe = np.where(inside, r_arr, 0.5 * profile.r0)
    out = profile.weight * safe ** (-profile.hat_exponent)
    if profile.family == "log":
        out = out * (-np.log(safe)) ** (-profile.shape)
    out = np.where(inside, out, 0.0)
    return float(out) if out.ndim == 0 else out


def _log_tail(profile: SingularProfile, y):
    """``c w int_y^inf e^{-p s} s^{-beta} ds`` with ``p = 2 - alpha``."""
    beta = profile.shape
    p = 2.0 - profile.params.alpha
    a = 1.0 - beta
    return profile.weight * p ** (beta - 1.0) * special.gamma(a) * special.gammaincc(a, p * y)


def profile_cumulative(profile: SingularProfile, r):
    """Mass within radius ``r`` (closed form)."""
    r_arr = np.minimum(np.maximum(np.asarray(r, dtype=float), 0.0), profile.r0)
    if profile.family == "log":
        with np.errstate(divide="ignore"):
            out = np.where(r_arr > 0.0, _log_tail(profile, -np.log(np.where(r_arr > 0, r_arr, 1.0))), 0.0)
    else:
        q = 1.0 - profile.hat_exponent
        out = profile.weight * r_arr ** q / q
    return float(out) if np.ndim(out) == 0 else out


def profile_quantile(profile: SingularProfile, fraction):
    """Radius enclosing ``fraction`` of the profile's mass (analytic inverse)."""
    f = np.asarray(fraction, dtype=float)
    if np.any((f < 0.0) | (f > 1.0)):
        raise ValueError("fraction must lie in [0, 1]")
    if profile.family == "log":
        beta = profile.shape
        p = 2.0 - profile.params.alpha
        y0 = -math.log(profile.r0)
        q_top = special.gammaincc(1.0 - beta, p * y0)
        with np.errstate(divide="ignore"):
            y = special.gammainccinv(1.0 - beta, f * q_top) / p
            out = np.where(f > 0.0, np.exp(-y), 0.0)
    else:
        q = 1.0 - profile.hat_exponent
        out = profile.r0 * f ** (1.0 / q)
    return float(out) if np.ndim(out) == 0 else out


def discretize_profile(profile: SingularProfile, n_particles: int) -> RadialMeasure:
    """Equal-weight particles at the mass quantile midpoints of the exact cumulative."""
    if n_particles < 1:
        raise ValueError("n_particles must be positive")
    levels = (np.arange(n_particles) + 0.5) / n_particles
    radii = profile_quantile(profile, levels)
    total = profile.total_mass
    return RadialMeasure.from_particles(radii, np.full(n_particles, total / n_particles))


# -- bound constants and velocity bounds ------------------------------------------

@dataclass(frozen=True)
class BoundConstants:
    """``C1 = phi(1)`` and ``C2 = inf_{s>1} phi(s) s^(2-alpha)``."""

    C1: float
    C2: float
    C2_argmin: float


def bound_constants(params: KernelParams, s_max: float = 1e4, n_grid: int = 4000) -> BoundConstants:
    """Both constants from the kernel; ``C2`` minimizes over a log grid plus the tail limit."""
    table = phi_table(params)
    c1 = table.phi_at_one
    s = np.geomspace(1.0 + 1e-9, s_max, n_grid)
    vals = table(s) * s ** (2.0 - params.alpha)
    k = int(np.argmin(vals))
    c2, arg = float(vals[k]), float(s[k])
    if params.tail_constant < c2:
        c2, arg = params.tail_constant, math.inf
    c2 = min(c2, c1)  # the infimum over s > 1 includes the limit s -> 1+
    if not (c1 > 0.0 and c2 > 0.0):
        raise ArithmeticError(f"bound constants not positive: C1={c1!r}, C2={c2!r}")
    return BoundConstants(float(c1), float(c2), arg)


def velocity_lower_bound(profile: SingularProfile, x_radius, constants: BoundConstants | None = None):
    """Explicit lower bound on ``|v(x)|`` for the field generated by ``profile``.

    Power law: ``c w C1 x^(1-eps)/(1-eps)``; critical: ``c w C2 x ln(r0/x)``;
    log corrected: ``c w C2 x [(-ln x)^(1-beta) - (-ln r0)^(1-beta)]/(1-beta)``.
    The power-law form relies on ``(x/r)^(alpha-1) >= 1`` for ``r < x``, so it
    is guaranteed for ``alpha >= 1``.
    """
    x = np.asarray(x_radius, dtype=float)
    if np.any(~(x > 0.0)):
        raise ValueError("x_radius must be positive")
    if np.any(x >= profile.r0):
        raise ValueError(f"x_radius must be below r0 = {profile.r0!r}")
    k = constants or bound_constants(profile.params)
    w = profile.weight
    if profile.family == "power":
        eps = profile.shape
        out = w * k.C1 * x ** (1.0 - eps) / (1.0 - eps)
    elif profile.family == "critical":
        out = w * k.C2 * x * np.log(profile.r0 / x)
    else:
        a = 1.0 - profile.shape
        out = w * k.C2 * x * ((-np.log(x)) ** a - (-math.log(profile.r0)) ** a) / a
    return float(out) if out.ndim == 0 else out


# -- comparison flows ------------------------------------------------------------

def closed_form_flow(family_index: int, C: float, eps_or_beta: float, r, t):
    """Flow maps of ``r' = -C r^(1-eps)``, ``r' = -C r (-ln r)`` and ``r' = -C r (-ln r)^(1-beta)``.

    Map 1 sends a point to 0 once ``r^eps <= eps C t``; maps 2 and 3 only
    approach the origin as ``t`` grows.
    """
    r_arr = np.asarray(r, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any((r_arr <= 0.0) | (r_arr >= 1.0)):
        raise ValueError("closed-form flows are defined for r in (0, 1)")
    if np.any(t_arr < 0.0) or not C > 0.0:
        raise ValueError("need t >= 0 and C > 0")
    if family_index == 1:
        eps = eps_or_beta
        if not eps > 0.0:
            raise ValueError("eps must be positive")
        base = r_arr ** eps - eps * C * t_arr
        out = np.where(base > 0.0, np.maximum(base, 0.0) ** (1.0 / eps), 0.0)
    elif family_index == 2:
        out = r_arr ** np.exp(C * t_arr)
    elif family_index == 3:
        beta = eps_or_beta
        if not 0.0 < beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        out = np.exp(-(C * beta * t_arr + (-np.log(r_arr)) ** beta) ** (1.0 / beta))
    else:
        raise ValueError(f"invalid family index {family_index!r}; expected 1, 2 or 3")
    return float(out) if np.ndim(out) == 0 else out


def pushforward_critical_closed_form(params: KernelParams, C: float, t: float, r, *,
                                     c: float = 1.0, r0: float | None = None):
    """Radial mass density of the critical profile transported by map 2.

    ``c w e^(-Ct) r^-(alpha-1+(2-alpha)(1-e^(-Ct)))`` on the image of ``(0, r0]``.
    """
    r_arr = np.asarray(r, dtype=float)
    decay = math.exp(-C * t)
    expo = params.alpha - 1.0 + (2.0 - params.alpha) * (1.0 - decay)
    out = c * params.sphere_area * decay * r_arr ** (-expo)
    if r0 is not None:
        out = np.where(r_arr <= r0 ** (1.0 / decay), out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def atom_mass_under_map1(profile: SingularProfile, C: float, t: float) -> float:
    """Mass of a power-law profile sent to the origin by map 1 by time ``t``."""
    if profile.family != "power":
        raise ValueError("map 1 concerns the power-law family")
    if not t > 0.0:
        raise ValueError("t must be positive")
    eps = profile.shape
    q = 2.0 - profile.params.alpha - eps
    if q <= 0.0:
        raise ValueError("profile not integrable at the origin (need eps < 2 - alpha)")
    reach = min((eps * C * t) ** (1.0 / eps), profile.r0)
    return profile.weight * reach ** q / q


# -- end-to-end verdict -------------------------------------------------------------

def fit_domination(rho: RadialMeasure, shape: SingularProfile, radii_grid=None,
                   n_particles: int = 400, safety: float = 1e-9):
    """Largest amplitude and support with ``rho`` dominating a discretized profile.

    For each trial support ``r1`` the admissible amplitude is the smallest ratio
    of cumulative masses at the profile's particle radii, capped so the profile
    mass stays at most 1. Among trial supports the one carrying the most
    dominated mass wins. Returns ``(c1, r1, measure)`` or ``(0, nan, None)``.
    """
    if radii_grid is None:
        top = rho.support_radius if rho.n_particles else 1.0
        upper = min(top, 0.999) if shape.family == "log" else top
        radii_grid = np.geomspace(upper * 1e-6, upper, 61)
    best = (0.0, math.nan, None, 0.0)
    for r1 in radii_grid:
        unit = SingularProfile(shape.family, shape.params, float(r1), 1.0, shape.shape)
        mu = discretize_profile(unit, n_particles)
        need = np.cumsum(mu.weights)
        have = cumulative_mass(rho, mu.radii)
        c = min(float(np.min(have / need)), 1.0 / mu.total_mass) * (1.0 - safety)
        if c > 0.0 and c * mu.total_mass > best[3]:
            best = (c, float(r1), RadialMeasure(0.0, mu.radii, mu.weights * c), c * mu.total_mass)
    return best[:3]


@dataclass
class BootstrapCheck:
    name: str
    time: float
    passed: bool
    amplitude: float = math.nan
    support: float = math.nan
    value: float = math.nan
    detail: str = ""


@dataclass
class BootstrapReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "time", "passed", "amplitude", "support", "value"])
            for c in self.checks:
                w.writerow([c.name, repr(c.time), int(c.passed), repr(c.amplitude),
                            repr(c.support), repr(c.value)])

    def text(self) -> str:
        lines = []
        for c in self.checks:
            verdict = "PASS" if c.passed else "FAIL"
            lines.append(f"{verdict} {c.name} at t={c.time!r}: amplitude={c.amplitude:.6g} "
                         f"support={c.support:.6g} value={c.value:.6g} {c.detail}".rstrip())
        return "\n".join(lines)


def _snapshots(sim):
    if hasattr(sim, "states"):
        return [(s.time, s.measure) for s in sim.states]
    return [(float(t), mu) for t, mu in sim]


def _at(snaps, t):
    times = np.array([s[0] for s in snaps])
    k = int(np.argmin(np.abs(times - t)))
    return snaps[k]


def bootstrap_verdict(sim, params: KernelParams, times: Sequence[float], eps: float = 0.3,
                      n_particles: int = 400) -> BootstrapReport:
    """Check the three stages of the concentration argument on a simulated solution.

    ``sim`` is a :class:`~radial_aggregation.lagrangian.Trajectory` or a sequence of
    ``(time, RadialMeasure)``. At ``t1`` the solution must dominate a positive
    multiple of a discretized critical profile, at ``t2`` one of a power-law
    profile with exponent ``eps``, and at ``t3`` carry an atom. The snapshot
    nearest to each requested time is used and its time recorded.
    """
    t1, t2, t3 = times
    if not t1 < t2 < t3:
        raise ValueError("times must be increasing")
    snaps = _snapshots(sim)
    report = BootstrapReport()
    stages = [("critical_domination", t1, SingularProfile.critical(params)),
              ("power_domination", t2, SingularProfile.power_law(params, eps))]
    for name, t, shape in stages:
        time, rho = _at(snaps, t)
        c, r1, mu = fit_domination(rho, shape, n_particles=n_particles)
        ok = mu is not None and dominates_partial(rho, mu)
        report.checks.append(BootstrapCheck(name, time, bool(ok), c, r1,
                                            0.0 if mu is None else mu.total_mass))
    time, rho = _at(snaps, t3)
    report.checks.append(BootstrapCheck("atom", time, rho.atom_mass > 0.0, value=rho.atom_mass))
    return report
