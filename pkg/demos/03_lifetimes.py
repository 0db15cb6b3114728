# # Turbulent lifetimes are exponential
#
# Launch many random perturbations, record when each laminarizes and fit a
# shifted exponential survival law.

import numpy as np

from mfesn.experiments import Truth, fit_exponential_mle, ks_statistic, lifetime_experiment, survival_curve
from mfesn.mfe import build_system

# In[1]:

samples = lifetime_experiment(Truth(build_system(250)), n_ic=100, t_max=20000.0, seed=0)
fit = fit_exponential_mle(samples)
print(f"t0 = {fit.t0:.0f}, tau = {fit.tau:.0f}, from {fit.n_samples} runs")
print(f"KS distance to the fit: {ks_statistic(samples, fit):.3f}")

# In[2]:

curve = survival_curve(samples)
for t in np.linspace(0, curve.lifetimes.max(), 8):
    print(f"t={t:7.0f}  S_empirical={float(curve(t)):.2f}  S_fit={float(fit.survival(t)):.2f}")
