# # How big a kick does the laminar flow survive?
#
# Perturb the laminar state with random kicks of increasing energy and count
# how many decay back. Small kicks always decay; large ones trigger turbulence.

from mfesn.experiments import Truth, default_energy_grid, laminarization_probability_curve
from mfesn.mfe import build_system

# In[1]:

curve = laminarization_probability_curve(Truth(build_system(500)), default_energy_grid(12), n_pert=20, seed=0)
for e, p in zip(curve.energies, curve.p_lam):
    print(f"E = {e:8.1e}   P_lam = {p:.2f}  " + "*" * int(20 * p))

# In[2]:

# The same call accepts an ``Esn(model, system)`` source; with a trained
# network the two curves can be compared directly (see the CLI ``plam``).
