# # Training an echo state network on the flow
#
# A reservoir of 1500 tanh units sees one state per time unit. Only the
# linear readout is fitted. After that the network runs on its own output.
# Expect a few minutes on one core.

import numpy as np

from mfesn.esn import EsnHyperparameters, init_reservoir, predict, synchronize, train_readout
from mfesn.mfe import DEFAULT_GEOMETRY, build_system, integrate, kinetic_energy, random_state_with_energy

# In[1]:

# Same truth trajectory as the acceptance tests: it stays chaotic until ~13650.
rng = np.random.default_rng(0)
for _ in range(38):
    a0 = random_state_with_energy(rng, 0.3 * DEFAULT_GEOMETRY.energy_scale)
truth = integrate(build_system(300), a0, 1e-3, 16000)

# In[2]:

hp = EsnHyperparameters(seed=0)
model = init_reservoir(hp)
result = train_readout(model, truth.window(500, 13600), rng=np.random.default_rng(1))
print("training residual:", result.rss)
model = result.model

# In[3]:

# Synchronize on ten true states, then forecast 300 steps.
noise = np.random.default_rng(2)
t = 13000
r0 = synchronize(model, truth.window(t - 9, t), rng=noise)
forecast = predict(model, r0, truth.states[t], 300, rng=noise)
err = np.linalg.norm(forecast.states - truth.states[t:t + 301], axis=1)
for k in (1, 5, 20, 50, 100, 300):
    print(f"step {k:3d}: |error| = {err[k]:.3f}")

# In[4]:

# A long autonomous run usually finds the laminar state by itself,
# although it never saw it during training.
long = predict(model, r0, truth.states[t], 10_000, rng=noise)
e = kinetic_energy(long.states)
print(f"mean energy over the last 2000 steps: {e[-2000:].mean():.2f}")
