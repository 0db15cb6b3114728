# # A nine-mode shear flow
#
# Integrate the model at Re = 300 from a random perturbation and watch the
# kinetic energy. Chaotic transients hover around E ~ 2; the laminar state
# sits at E ~ 20.7 and every transient eventually falls into it.

import numpy as np

from mfesn.experiments import detect_laminarization
from mfesn.mfe import DEFAULT_GEOMETRY, build_system, integrate, kinetic_energy, laminar_state, random_state_with_energy

# In[1]:

system = build_system(300)
print("laminar energy:", kinetic_energy(laminar_state()))

# In[2]:

e_ic = 0.3 * DEFAULT_GEOMETRY.energy_scale
a0 = random_state_with_energy(np.random.default_rng(3), e_ic)
traj = integrate(system, a0, dt=1e-3, duration=5000.0)
energy = traj.energies()
print(f"{len(traj)} samples, energy range {energy.min():.2f} .. {energy.max():.2f}")

# In[3]:

# Coarse text plot, one row per 250 time units.
for t in range(0, len(energy), 250):
    print(f"t={t:5d}  E={energy[t]:6.2f}  " + "#" * int(energy[t] * 2))

# In[4]:

lifetime = detect_laminarization(energy)
print("laminarized at", lifetime if lifetime is not None else "(still turbulent)")
