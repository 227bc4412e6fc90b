"""Independent reference computations used only by the test suite."""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize


def godunov_mass_profile(profile, flux, t_end, n_cells=4000, z_max=None, cfl=0.9):
    """Godunov scheme for ``F(m)_t - G(m)_z = 0`` on ``[0, z_max]``.

    In the conserved variable ``w = F(m)`` the flux ``h(w) = -G(F^{-1}(w))`` has
    ``h'(w) = -m <= 0``, so every wave moves toward the origin and the Godunov
    interface flux is the upwind value from the right cell. The origin is an
    outflow boundary; the far field holds the total mass. Returns cell centres
    and cell-averaged ``m``.
    """
    total = profile.total_mass
    if z_max is None:
        z_max = 1.2 * max(float(profile.breakpoints[-1]), 1e-3)
    dz = z_max / n_cells
    edges = np.linspace(0.0, z_max, n_cells + 1)
    # exact cell averages of m
    fine = np.linspace(0.0, z_max, 16 * n_cells + 1)
    mid = 0.5 * (fine[1:] + fine[:-1])
    m = profile(mid).reshape(n_cells, 16).mean(axis=1)
    F, G = flux.F, flux.G
    grid = np.linspace(0.0, total, 20001)
    Fgrid = np.array([F(x) for x in grid])

    def inv_F(w):
        return np.interp(w, Fgrid, grid)

    w = np.array([F(x) for x in m])
    w_far = F(total)
    t = 0.0
    G_vec = np.vectorize(G)
    while t < t_end - 1e-15:
        m_cells = inv_F(w) if not flux.is_classical else w
        speed = max(float(np.max(m_cells)), 1e-12)
        dt = min(cfl * dz / speed, t_end - t)
        h = -G_vec(m_cells)                       # flux at each cell value
        h_far = -G(total)
        right = np.concatenate([h[1:], [h_far]])  # H_{i+1/2} = h(w_{i+1})
        left = h                                  # H_{i-1/2} = h(w_i)
        w = w - dt / dz * (right - left)
        t += dt
    m_cells = inv_F(w) if not flux.is_classical else w
    return 0.5 * (edges[1:] + edges[:-1]), m_cells, dz


def locate_jump(z, m, level, near, window):
    """Position where ``m`` crosses ``level`` within ``window`` of ``near``."""
    sel = np.flatnonzero(np.abs(z - near) <= window)
    zs, ms = z[sel], m[sel]
    above = np.flatnonzero(ms >= level)
    if above.size == 0:
        return math.nan
    i = above[0]
    if i == 0:
        return zs[0]
    return zs[i - 1] + (level - ms[i - 1]) * (zs[i] - zs[i - 1]) / (ms[i] - ms[i - 1])


def discrete_w2(xa, wa, xb, wb):
    """Exact quadratic OT cost between two weighted 1-D point sets by linear programming."""
    xa, wa, xb, wb = map(np.asarray, (xa, wa, xb, wb))
    na, nb = xa.size, xb.size
    cost = (xa[:, None] - xb[None, :]) ** 2
    a_eq = np.zeros((na + nb, na * nb))
    for i in range(na):
        a_eq[i, i * nb:(i + 1) * nb] = 1.0
    for j in range(nb):
        a_eq[na + j, j::nb] = 1.0
    res = optimize.linprog(cost.ravel(), A_eq=a_eq, b_eq=np.concatenate([wa, wb]),
                           bounds=(0, None), method="highs")
    return math.sqrt(max(res.fun, 0.0))


def assignment_w2(xa, xb):
    """Quadratic OT between equal-weight point sets of the same size (optimal assignment)."""
    xa, xb = np.asarray(xa, dtype=float), np.asarray(xb, dtype=float)
    cost = (xa[:, None] - xb[None, :]) ** 2
    rows, cols = optimize.linear_sum_assignment(cost)
    return math.sqrt(cost[rows, cols].sum() / xa.size)


def composite_simpson(f, a, b, n):
    x = np.linspace(a, b, 2 * n + 1)
    y = f(x)
    h = (b - a) / (2 * n)
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def phi_mpmath(alpha, dim, s, digits=30):
    """Shell kernel from its defining integral, evaluated with tanh-sinh quadrature."""
    import mpmath

    with mpmath.workdps(digits):
        a, s = mpmath.mpf(alpha), mpmath.mpf(s)
        cd = mpmath.gamma(mpmath.mpf(dim) / 2) / (mpmath.sqrt(mpmath.pi) * mpmath.gamma(mpmath.mpf(dim - 1) / 2))

        def f(t):
            return ((1 - s * mpmath.cos(t)) * (1 + s * s - 2 * s * mpmath.cos(t)) ** ((a - 2) / 2)
                    * mpmath.sin(t) ** (dim - 2))

        return float(cd * mpmath.quad(f, [0, mpmath.mpf("1e-6"), mpmath.mpf("1e-3"), 1, mpmath.pi]))


def phi_midpoint_richardson(alpha, dim, s, panels=10**6):
    """Composite midpoint rule on ``panels`` and ``panels/2`` uniform cells, Richardson-combined."""
    cd = math.gamma(dim / 2) / (math.sqrt(math.pi) * math.gamma((dim - 1) / 2))

    def midpoint(n):
        t = (np.arange(n) + 0.5) * (math.pi / n)
        f = (1 - s * np.cos(t)) * (1 + s * s - 2 * s * np.cos(t)) ** ((alpha - 2) / 2) * np.sin(t) ** (dim - 2)
        return cd * math.fsum(f) * math.pi / n

    fine, coarse = midpoint(panels), midpoint(panels // 2)
    return (4.0 * fine - coarse) / 3.0
