# %% [markdown]
# # Particle evolution of a radial aggregation flow
#
# Kernel profile, then a uniform ball in the plane with attraction exponent
# one. The ball shrinks while staying radially decreasing, and an atom forms
# at the origin in finite time.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from radial_aggregation import KernelParams, phi, uniform_ball
from radial_aggregation.lagrangian import SolverConfig, run

out = Path("demo_output")
out.mkdir(exist_ok=True)

# %%
s = np.linspace(0.0, 4.0, 400)
fig, ax = plt.subplots()
for alpha, dim in [(0.5, 3), (1.0, 2), (1.5, 2), (1.0, 3)]:
    ax.plot(s, phi(KernelParams(alpha, dim), s), label=f"alpha={alpha}, d={dim}")
ax.set_xlabel("s")
ax.set_ylabel("phi(s)")
ax.legend()
fig.savefig(out / "kernel.png", dpi=120)

# %%
params = KernelParams(1.0, 2)
traj = run(params, uniform_ball(2, 2000), SolverConfig(dt=2e-3, t_end=1.1, output_every=10))
print("final atom mass:", traj.final.atom_mass)

# %%
fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.5))
left.plot(traj.times, traj.atom_masses)
left.set_xlabel("t")
left.set_ylabel("atom mass")
radii = traj.radii_matrix()
for column in np.linspace(0, radii.shape[1] - 1, 12).astype(int):
    right.plot(traj.times, radii[:, column], lw=0.8)
right.set_xlabel("t")
right.set_ylabel("particle radius")
fig.tight_layout()
fig.savefig(out / "ball_collapse.png", dpi=120)
