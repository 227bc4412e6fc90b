# %% [markdown]
# # Instant concentration from a log-corrected singular profile
#
# The log-corrected profile is barely more singular than the critical one,
# yet it puts mass at the origin almost immediately. A smooth bump with the
# same support does not.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from radial_aggregation import KernelParams
from radial_aggregation.radial_measure import smooth_bump
from radial_aggregation.concentration import SingularProfile, bootstrap_verdict, discretize_profile
from radial_aggregation.lagrangian import SolverConfig, run

out = Path("demo_output")
out.mkdir(exist_ok=True)
params = KernelParams(1.0, 2)
r0 = 0.08

# %%
cfg = SolverConfig(dt=1e-3, t_end=0.05)
singular = run(params, discretize_profile(SingularProfile.log_corrected(params, 0.8, r0=r0)
                                          .normalized(), 10_000), cfg)
bump = run(params, smooth_bump(2, 10_000, radius=r0), cfg)
print(bootstrap_verdict(singular, params, (0.01, 0.03, 0.05)).text())

# %%
fig, ax = plt.subplots()
ax.plot(singular.times, singular.atom_masses, label="log-corrected")
ax.plot(bump.times, bump.atom_masses, label="smooth bump")
ax.set_xlabel("t")
ax.set_ylabel("atom mass")
ax.legend()
fig.savefig(out / "concentration.png", dpi=120)
