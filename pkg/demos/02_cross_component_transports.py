"""
Cross-component transports
==========================

A fitted model maps the time scale of any component onto any other.  The
maps compose exactly, so chaining transports around a cycle returns the
identity.
"""

import numpy as np

from latent_transport.simgen import SimConfig, fit_simulated, simulate_dataset
from latent_transport.xct import TransportMatrix, chain, cycle_deviation, marginal_xct, subject_xct

raw, truth = simulate_dataset(SimConfig(n=20, p=4, sigma_w=0.5, seed=2))
fit = fit_simulated(raw, seed=2)

# T_jk carries component j's tempo onto component k's: a feature that the
# first component shows at time t shows up in the third at T_13(t).
T = marginal_xct(fit, 0, 2)
t = np.array([0.1, 0.25, 0.5, 0.75, 0.9])
print("t       ", t)
print("T_13(t) ", np.round(T(t), 3))

# Subject-level transports include the subject's own time distortion.
Ti = subject_xct(fit, 4, 0, 2)
print("subject 5, T_13(t) ", np.round(Ti(t), 3))

# Transports telescope: T_12 o T_23 = T_13 up to rounding.
lhs = chain([marginal_xct(fit, 0, 1), marginal_xct(fit, 1, 2)])
print("telescoping error", float(np.max(np.abs(lhs(t) - T(t)))))

# Any cycle of transports is the identity.
print("cycle 1-2-3-4 deviation", cycle_deviation(fit, [0, 1, 2, 3]))

# The whole p x p table is computed lazily and cached.
tm = TransportMatrix(fit)
print("T_44 is the identity:", bool(np.allclose(tm[3, 3](t), t)))
