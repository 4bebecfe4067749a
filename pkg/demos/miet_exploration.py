"""
Minimum inter-event time and the timer function
===============================================

``phi`` starts at ``1/lam`` after every transmission and decays along a
Riccati equation; the MIET is the time it takes to reach ``lam``.
"""

import numpy as np

from etestim import compute_miet, phi_ode_oracle, phi_trajectory

# The closed form agrees with integrating the timer equation.
for L, gamma, lam in [(0.0, 6.1623, 0.7), (2.0, 1.0, 0.5), (1.0, 1.0, 0.5), (1.0, 3.0, 0.2)]:
    tau = compute_miet(L, gamma, lam)
    print(f"L={L:<4} gamma={gamma:<7} lam={lam:<4} tau_MIET={tau:.10f}  oracle diff={abs(tau - phi_ode_oracle(L, gamma, lam)):.1e}")

# Larger gamma or L shortens the guaranteed dwell time, larger lam too.
gammas = np.linspace(0.5, 10, 6)
print("gamma:", np.round(gammas, 2))
print("MIET :", np.round([compute_miet(1.0, g, 0.5) for g in gammas], 5))
lams = np.linspace(0.1, 0.9, 5)
print("lam  :", lams)
print("MIET :", np.round([compute_miet(1.0, 2.0, l) for l in lams], 5))

# The timer itself, for the case-study constants.
t = np.linspace(0.0, 0.1, 11)
print("phi(t):", np.round(phi_trajectory(0.0, 6.1623, 0.7, t).phi, 4))
