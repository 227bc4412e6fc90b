"""Newtonian aggregation (``alpha = 2 - d``) in mass coordinates.

With ``z = r^d / d`` and ``m(z)`` the mass inside radius ``r`` divided by
``|S^{d-1}|`` (so that ``m(z) = z`` for unit density), the radial dynamics
reduce to the inviscid Burgers equation

    m_t - m m_z = 0,   z > 0,

with characteristics ``z(t) = z0 - m(z0) t`` and outflow into an atom at
``z = 0`` whose mass is ``m(0+, t)``. Delta rings are upward jumps of ``m``;
they move with the Rankine-Hugoniot speed ``-[G]/[F]`` of the chosen
entropy-flux pair (``F' = f``, ``G' = m f``), which is ``-(m_l + m_r)/2`` for
the classical pair.

Piecewise-linear data with jumps are evolved exactly by front tracking: a
linear piece ``m = c + k z`` becomes ``m = (c + k z)/(1 - k t)``, its
endpoints move along characteristics, and jumps follow their shock ODE.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .radial_measure import RadialDensityGrid, RadialMeasure, sphere_area

__all__ = [
    "FluxPair",
    "FrontTrackResult",
    "MassProfile",
    "RadialSnapshot",
    "characteristics_solve",
    "front_track",
    "from_mass_coordinates",
    "monotone_no_shock_check",
    "shock_time",
    "to_mass_coordinates",
    "uniform_ball_profile",
]

_REL = 1e-13


@dataclass(frozen=True, eq=False)
class MassProfile:
    """Nondecreasing piecewise-linear ``m(z)`` with jumps.

    ``breakpoints`` start at ``z = 0`` and are nondecreasing; a jump at ``z*``
    is encoded by two consecutive equal breakpoints carrying ``m_left`` and
    ``m_right``. Beyond the last breakpoint ``m`` is constant. ``values[0]`` is
    ``m(0)``, the atom at the origin.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    dim: int = 2

    def __post_init__(self):
        z = np.array(self.breakpoints, dtype=float).reshape(-1)
        m = np.array(self.values, dtype=float).reshape(-1)
        if z.size == 0 or z.shape != m.shape:
            raise ValueError("breakpoints and values must be nonempty and of equal length")
        if z[0] != 0.0:
            raise ValueError("the first breakpoint must be z = 0")
        dz = np.diff(z)
        if np.any(dz < 0.0):
            raise ValueError("breakpoints must be nondecreasing")
        if np.any((dz[1:] == 0.0) & (dz[:-1] == 0.0)):
            raise ValueError("at most two breakpoints may share a position")
        dm = np.diff(m)
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.any((dz == 0.0) & (dm < -_REL * scale)):
            raise ValueError("signed-measure rarefaction not supported")
        if np.any(dm < -_REL * scale):
            raise ValueError("m must be nondecreasing (negative densities are not supported)")
        if z.size >= 2 and z[1] == 0.0:
            # a jump at the origin is just a larger atom
            z, m = z[1:], m[1:]
        z.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "breakpoints", z)
        object.__setattr__(self, "values", m)

    @property
    def atom_mass(self) -> float:
        return float(self.values[0])

    @property
    def total_mass(self) -> float:
        return float(self.values[-1])

    @property
    def jumps(self) -> list:
        """``(z, m_left, m_right)`` for every jump with ``m_right > m_left``."""
        z, m = self.breakpoints, self.values
        k = np.flatnonzero(np.diff(z) == 0.0)
        return [(float(z[i]), float(m[i]), float(m[i + 1])) for i in k if m[i + 1] > m[i]]

    @property
    def has_jumps(self) -> bool:
        return bool(self.jumps)

    def segments(self):
        """``(z_a, z_b, m_a, m_b)`` for every linear piece of positive length."""
        z, m = self.breakpoints, self.values
        return [(z[i], z[i + 1], m[i], m[i + 1]) for i in range(z.size - 1) if z[i + 1] > z[i]]

    def __call__(self, z):
        """Right-continuous evaluation of ``m``."""
        z_arr = np.asarray(z, dtype=float)
        zb, mb = self.breakpoints, self.values
        i = np.searchsorted(zb, z_arr, side="right") - 1
        i = np.clip(i, 0, zb.size - 1)
        nxt = np.minimum(i + 1, zb.size - 1)
        width = zb[nxt] - zb[i]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(width > 0, (z_arr - zb[i]) / np.where(width > 0, width, 1.0), 0.0)
        out = np.where(nxt == i, mb[i], mb[i] + frac * (mb[nxt] - mb[i]))
        out = np.where(z_arr < 0, mb[0], out)
        return float(out) if out.ndim == 0 else out

    def write_csv(self, path, time: float | None = None) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "z", "m"])
            t = repr(float(time or 0.0))
            writer.writerows((t, repr(float(a)), repr(float(b)))
                             for a, b in zip(self.breakpoints, self.values))


def uniform_ball_profile(dim: int, density: float = 1.0, radius: float | None = None) -> MassProfile:
    """Uniform density on a ball; the default radius ``d^(1/d)`` puts the edge at z = 1."""
    z_edge = 1.0 if radius is None else radius ** dim / dim
    return MassProfile([0.0, z_edge], [0.0, density * z_edge], dim)


@dataclass(frozen=True)
class FluxPair:
    """Entropy-flux pair with ``F' = f`` and ``G' = m f``; the conserved quantity is ``F(m)``.

    Use :meth:`classical` (``f = 1``) or :meth:`power` (``f = m^k``).
    """

    name: str
    F: Callable[[float], float]
    G: Callable[[float], float]
    f: Callable[[float], float]

    @classmethod
    def classical(cls) -> "FluxPair":
        return cls("classical", lambda m: m, lambda m: 0.5 * m * m, lambda m: 1.0)

    @classmethod
    def power(cls, k: float) -> "FluxPair":
        if k < 0:
            raise ValueError("power flux requires k >= 0")
        return cls(f"power:{k!r}", lambda m: m ** (k + 1) / (k + 1),
                   lambda m: m ** (k + 2) / (k + 2), lambda m: m ** k)

    @classmethod
    def parse(cls, text: str) -> "FluxPair":
        """``classical`` or ``power:k``."""
        text = text.strip()
        if text == "classical":
            return cls.classical()
        if text.startswith("power:"):
            return cls.power(float(text.split(":", 1)[1]))
        raise ValueError(f"unknown flux {text!r}; use 'classical' or 'power:k'")

    @property
    def is_classical(self) -> bool:
        return self.name == "classical"

    def shock_speed(self, m_left: float, m_right: float) -> float:
        """``dz/dt = -[G]/[F]``; reduces to ``-m`` for a vanishing jump."""
        if self.is_classical:
            return -0.5 * (m_left + m_right)
        dF = self.F(m_right) - self.F(m_left)
        if abs(m_right - m_left) <= _REL * max(1.0, abs(m_right)) or dF == 0.0:
            return -0.5 * (m_left + m_right)
        return -(self.G(m_right) - self.G(m_left)) / dF


# -- conversions --------------------------------------------------------------------

def to_mass_coordinates(mu, dim: int, normalize: bool = True) -> MassProfile:
    """Mass profile of a radial measure or radial density grid.

    Particles become jumps at ``z = r^d/d``. For a density grid the cumulative
    mass of its piecewise-linear radial density is exact at the grid radii and
    interpolated linearly in ``z`` between them. With ``normalize`` the masses
    are divided by ``|S^{d-1}|``.
    """
    scale = 1.0 / sphere_area(dim) if normalize else 1.0
    if isinstance(mu, RadialMeasure):
        z = mu.radii ** dim / dim
        cum = mu.atom_mass + np.cumsum(mu.weights)
        before = np.concatenate([[mu.atom_mass], cum[:-1]])
        zb = np.concatenate([[0.0], np.repeat(z, 2)])
        mb = np.concatenate([[mu.atom_mass], np.column_stack([before, cum]).reshape(-1)])
        return MassProfile(zb, mb * scale, dim)
    if isinstance(mu, RadialDensityGrid):
        cum = mu.cumulative()
        z = mu.radii ** dim / dim
        if z[0] > 0.0:
            z = np.concatenate([[0.0], z])
            cum = np.concatenate([[0.0], cum])
        return MassProfile(z, cum * scale, dim)
    raise TypeError("expected a RadialMeasure or RadialDensityGrid")


@dataclass(frozen=True, eq=False)
class RadialSnapshot:
    """Physical-space view of a mass profile: density grid, atom and delta rings."""

    grid: RadialDensityGrid
    density: np.ndarray
    atom_mass: float
    rings: list  # (radius, mass)


def from_mass_coordinates(profile: MassProfile, dim: int, r_grid, normalize: bool = True
                          ) -> RadialSnapshot:
    """Density ``rho(r) = m'(z)`` at ``z = r^d/d`` (right slope at breakpoints), plus rings.

    With ``normalize`` the profile holds mass divided by ``|S^{d-1}|`` (the
    convention of :func:`to_mass_coordinates`); otherwise it holds plain mass
    and ``rho = m'(z) / |S^{d-1}|``. Atom and ring masses are returned as plain mass.
    """
    area = sphere_area(dim)
    scale = area if normalize else 1.0
    r = np.asarray(r_grid, dtype=float)
    z = r ** dim / dim
    slopes = np.zeros(z.shape)
    for za, zb, ma, mb in profile.segments():
        inside = (z >= za) & (z < zb)
        slopes[inside] = (mb - ma) / (zb - za)
    density = slopes * scale / area
    hat = area * r ** (dim - 1) * density
    rings = [((dim * zj) ** (1.0 / dim), (mr - ml) * scale) for zj, ml, mr in profile.jumps]
    return RadialSnapshot(RadialDensityGrid(r, hat), density, profile.atom_mass * scale, rings)


# -- smooth-data analysis ---------------------------------------------------------------

def shock_time(profile: MassProfile) -> float:
    """``1 / max m'``, the first time two characteristics of smooth data cross."""
    if profile.has_jumps:
        raise ValueError("profile has jumps; use front tracking")
    slopes = [(mb - ma) / (zb - za) for za, zb, ma, mb in profile.segments()]
    top = max(slopes, default=0.0)
    return math.inf if top <= 0.0 else float(1.0 / top)


def monotone_no_shock_check(profile: MassProfile | None = None, rho_grid=None,
                            dim: int | None = None) -> bool:
    """True iff ``m(z) >= z m'(z)`` on every piece, so no shock forms away from the origin.

    On a linear piece ``m = c + k z`` the condition reads ``c >= 0``; it is
    checked at both ends of every piece. Pass either a profile or a density
    grid with its dimension.
    """
    if profile is None:
        if rho_grid is None or dim is None:
            raise ValueError("need a profile, or a density grid and its dimension")
        profile = to_mass_coordinates(rho_grid, dim)
    if profile.has_jumps:
        return False
    for za, zb, ma, mb in profile.segments():
        k = (mb - ma) / (zb - za)
        tol = _REL * max(1.0, abs(mb))
        if ma < za * k - tol or mb < zb * k - tol:
            return False
    return True


def characteristics_solve(profile: MassProfile, t: float):
    """Advect smooth data along characteristics; returns ``(profile_at_t, atom_mass)``.

    Valid while characteristics reach the origin before crossing: either the
    no-shock condition holds or ``t`` is below the shock time.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if t == 0.0:
        return profile, profile.atom_mass
    ok = monotone_no_shock_check(profile) or t < shock_time(profile)
    if not ok:
        raise ValueError("shock before origin; use front tracking")
    z0, m = profile.breakpoints, profile.values
    z = z0 - m * t
    alive = z > 0.0
    if not np.any(alive):
        return MassProfile([0.0], [profile.total_mass], profile.dim), profile.total_mass
    first = int(np.argmax(alive))
    if first == 0:
        atom = m[0]
        zb, mb = z, m
    else:
        za, ma = z[first - 1], m[first - 1]
        zb_, mb_ = z[first], m[first]
        # value where the piece crossing the origin meets z = 0
        atom = ma + (mb_ - ma) * (0.0 - za) / (zb_ - za) if zb_ > za else mb_
        atom = max(atom, float(np.max(m[:first])))
        zb = np.concatenate([[0.0], z[first:]])
        mb = np.concatenate([[atom], m[first:]])
    if np.any(np.diff(zb) < 0.0):
        raise ValueError("shock before origin; use front tracking")
    return MassProfile(zb, mb, profile.dim), float(atom)


# -- front tracking -----------------------------------------------------------------------

@dataclass
class _Piece:
    """``m(z, t) = (c + k z) / (1 - k t)``."""

    c: float
    k: float

    def value(self, z, t):
        if self.k == 0.0:
            return self.c + 0.0 * z
        return (self.c + self.k * z) / (1.0 - self.k * t)


@dataclass
class _Bound:
    kind: str                  # origin | char | jump
    z0: float = 0.0            # char: initial position; jump: current position
    m: float = 0.0             # char: carried value
    anchor: tuple | None = None  # jump at constant speed: (t, z, speed) it started from


@dataclass(frozen=True)
class FrontEvent:
    time: float
    kind: str                  # collapse | origin | merge | absorb
    z: float


@dataclass(eq=False)
class FrontTrackResult:
    """Report-time snapshots of a front-tracking run."""

    times: np.ndarray
    profiles: list
    atom_masses: np.ndarray
    jump_records: list          # (t, index, z, m_left, m_right, speed)
    events: list
    lax_ok: bool
    flux: FluxPair

    def write_jumps_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "jump", "z_shock", "m_left", "m_right"])
            for t, i, z, ml, mr, _ in self.jump_records:
                writer.writerow([repr(float(t)), i, repr(float(z)), repr(float(ml)), repr(float(mr))])

    def write_atom_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "atom_mass"])
            writer.writerows((repr(float(t)), repr(float(a)))
                             for t, a in zip(self.times, self.atom_masses))

    def write_profiles_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "z", "m"])
            for t, prof in zip(self.times, self.profiles):
                writer.writerows((repr(float(t)), repr(float(z)), repr(float(m)))
                                 for z, m in zip(prof.breakpoints, prof.values))


class _FrontTracker:
    def __init__(self, profile: MassProfile, flux: FluxPair):
        self.flux = flux
        self.dim = profile.dim
        self.t = 0.0
        self.total = profile.total_mass
        self.pieces: list[_Piece] = []
        self.bounds: list[_Bound] = [_Bound("origin")]
        z, m = profile.breakpoints, profile.values
        pending_jump = False
        for i in range(z.size - 1):
            if z[i + 1] == z[i]:
                pending_jump = True
                continue
            k = (m[i + 1] - m[i]) / (z[i + 1] - z[i])
            if self.pieces:
                self.bounds.append(_Bound("jump", z[i]) if pending_jump
                                   else _Bound("char", z[i], m[i]))
            self.pieces.append(_Piece(m[i] - k * z[i], k))
            pending_jump = False
        last = z[-1]
        if self.pieces:
            self.bounds.append(_Bound("jump", last) if pending_jump
                               else _Bound("char", last, m[-1]))
        elif last > 0.0:
            # only constant data with a jump at z = last
            self.pieces.append(_Piece(m[0], 0.0))
            self.bounds.append(_Bound("jump", last))
        self.pieces.append(_Piece(m[-1], 0.0))
        self.events: list[FrontEvent] = []
        self.lax_ok = True

    # positions and speeds -----------------------------------------------------
    def _jump_index(self):
        return [i for i, b in enumerate(self.bounds) if b.kind == "jump"]

    def positions(self, t, y=None):
        pos = np.empty(len(self.bounds))
        jumps = iter(y) if y is not None else None
        for i, b in enumerate(self.bounds):
            if b.kind == "origin":
                pos[i] = 0.0
            elif b.kind == "char":
                pos[i] = b.z0 - b.m * t
            else:
                pos[i] = next(jumps) if jumps is not None else b.z0
        return pos

    def jump_states(self, t, y=None):
        out = []
        idx = self._jump_index()
        vals = y if y is not None else [self.bounds[i].z0 for i in idx]
        for i, s in zip(idx, vals):
            ml = float(self.pieces[i - 1].value(s, t))
            mr = float(self.pieces[i].value(s, t))
            out.append((s, ml, mr))
        return out

    def _rhs(self, t, y):
        return np.array([self.flux.shock_speed(ml, mr) for _, ml, mr in self.jump_states(t, y)])

    def _constant_speeds(self):
        return all(self.pieces[i - 1].k == 0.0 and self.pieces[i].k == 0.0
                   for i in self._jump_index())

    def widths(self, t, y=None):
        return np.diff(self.positions(t, y))

    # events -------------------------------------------------------------------
    def _collapse(self, j: int):
        """Remove piece ``j`` whose two bounds met."""
        t = self.t
        pos = self.positions(t)
        p = max(float(0.5 * (pos[j] + pos[j + 1])), 0.0)
        if j == 0:
            kind = "origin" if self.bounds[1].kind == "jump" else "absorb"
            del self.pieces[0]
            del self.bounds[1]
            self.events.append(FrontEvent(t, kind, 0.0))
            return
        left, right = self.pieces[j - 1], self.pieces[j + 1]
        ml, mr = float(left.value(p, t)), float(right.value(p, t))
        n_jumps = (self.bounds[j].kind == "jump") + (self.bounds[j + 1].kind == "jump")
        del self.pieces[j]
        del self.bounds[j + 1]
        scale = max(1.0, abs(mr))
        if mr < ml - 1e-12 * scale:
            raise ValueError("signed-measure rarefaction not supported")
        if abs(mr - ml) <= 1e-12 * scale:
            self.bounds[j] = _Bound("char", p + ml * t, ml)
        else:
            self.bounds[j] = _Bound("jump", p)
        self.events.append(FrontEvent(t, ("collapse", "absorb", "merge")[n_jumps], p))

    def _settle(self):
        """Process every piece of (numerically) zero width at the current time."""
        while True:
            w = self.widths(self.t)
            scale = max(1.0, float(np.max(np.abs(self.positions(self.t)))))
            small = np.flatnonzero(w <= 1e-12 * scale)
            if small.size == 0:
                return
            self._collapse(int(small[0]))

    def check_lax(self):
        for s, ml, mr in self.jump_states(self.t):
            speed = self.flux.shock_speed(ml, mr)
            tol = 1e-9 * max(1.0, abs(mr))
            if not (-ml + tol >= speed >= -mr - tol):
                self.lax_ok = False

    def advance(self, t_target: float):
        self._settle()
        while self.t < t_target:
            jumps = self._jump_index()
            if not jumps or self._constant_speeds():
                self._advance_linear(t_target)
                continue
            self._integrate(t_target)

    def _advance_linear(self, t_target: float):
        """Every bound moves at constant speed: find the next collision exactly.

        Positions are kept in the form ``a + s t`` from fixed anchors so that
        repeated report stops do not accumulate rounding.
        """
        jump_speeds = dict(zip(self._jump_index(),
                               (self.flux.shock_speed(ml, mr) for _, ml, mr in self.jump_states(self.t))))
        a = np.empty(len(self.bounds))
        v = np.empty(len(self.bounds))
        for i, b in enumerate(self.bounds):
            if b.kind == "origin":
                a[i], v[i] = 0.0, 0.0
            elif b.kind == "char":
                a[i], v[i] = b.z0, -b.m
            else:
                speed = jump_speeds[i]
                if b.anchor is None or b.anchor[2] != speed:
                    b.anchor = (self.t, b.z0, speed)
                ta, za, _ = b.anchor
                a[i], v[i] = za - speed * ta, speed
        closing = np.diff(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            hit = np.where(closing < 0.0, -np.diff(a) / closing, np.inf)
        hit = np.maximum(hit, self.t)
        t_hit = float(np.min(hit)) if hit.size else math.inf
        t_next = min(t_hit, t_target)
        for i in jump_speeds:
            b = self.bounds[i]
            ta, za, speed = b.anchor
            b.z0 = za + speed * (t_next - ta)
        self.t = t_next
        if t_hit <= t_target:
            self._collapse(int(np.argmin(hit)))
            self._settle()
        self.check_lax()

    def _integrate(self, t_target: float):
        jumps = self._jump_index()
        y0 = np.array([self.bounds[i].z0 for i in jumps])
        n_w = len(self.bounds) - 1

        def make_event(j):
            def ev(t, y):
                return self.widths(t, y)[j]
            ev.terminal = True
            ev.direction = -1
            return ev

        events = [make_event(j) for j in range(n_w)]
        sol = integrate.solve_ivp(self._rhs, (self.t, t_target), y0, method="DOP853",
                                  rtol=1e-12, atol=1e-14, events=events)
        if sol.status == -1:
            raise RuntimeError(f"shock ODE failed: {sol.message}")
        t_new = float(sol.t[-1])
        y_new = sol.y[:, -1]
        for i, s in zip(jumps, y_new):
            self.bounds[i].z0 = float(s)
            self.bounds[i].anchor = None
        self.t = t_new
        if sol.status == 1:
            hit = [j for j, te in enumerate(sol.t_events) if te.size]
            self._collapse(hit[0])
            self._settle()
        self.check_lax()

    def snapshot(self) -> MassProfile:
        t = self.t
        pos = self.positions(t)
        zs, ms = [], []
        for j, piece in enumerate(self.pieces):
            a = max(pos[j], 0.0)
            ma = float(piece.value(a, t))
            zs.append(a)
            ms.append(ma)
            if j + 1 < len(pos):
                b = max(pos[j + 1], a)
                zs.append(b)
                ms.append(float(piece.value(b, t)))
        zs, ms = np.array(zs), np.array(ms)
        # collapse the duplicate entries at continuous (characteristic) joints
        keep = np.ones(zs.size, dtype=bool)
        for i in range(1, zs.size):
            if zs[i] == zs[i - 1] and abs(ms[i] - ms[i - 1]) <= 1e-13 * max(1.0, abs(ms[i])):
                keep[i] = False
        ms = np.maximum.accumulate(ms[keep])
        return MassProfile(zs[keep], ms, self.dim)


def front_track(profile: MassProfile, flux: FluxPair | None = None, t_end: float = 1.0,
                dt_report: float = 0.1, report_times=None) -> FrontTrackResult:
    """Evolve piecewise-linear data with jumps exactly up to ``t_end``.

    Report times default to multiples of ``dt_report`` plus ``t_end``; event
    times (collisions, origin arrivals) are recorded in ``events``.
    """
    flux = flux or FluxPair.classical()
    if report_times is None:
        n = int(math.floor(t_end / dt_report + 1e-9))
        report_times = [k * dt_report for k in range(n + 1)]
        if report_times[-1] < t_end:
            report_times.append(t_end)
    report_times = np.asarray(sorted(report_times), dtype=float)
    tracker = _FrontTracker(profile, flux)
    profiles, atoms, records = [], [], []
    tracker.check_lax()
    for t in report_times:
        tracker.advance(float(t))
        snap = tracker.snapshot()
        profiles.append(snap)
        atoms.append(snap.atom_mass)
        for i, (s, ml, mr) in enumerate(tracker.jump_states(tracker.t)):
            records.append((float(t), i, s, ml, mr, flux.shock_speed(ml, mr)))
    return FrontTrackResult(report_times, profiles, np.array(atoms), records,
                            tracker.events, tracker.lax_ok, flux)
