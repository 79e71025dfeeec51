"""Two-photon cancellation in a single squeezed coherent mode.

Prints g2 as the coherent amplitude sweeps past the matched value, then the
single-photon rate and g2 floor implied by a given pair rate.
"""

import numpy as np

from antibunch import RateParams, g2_of_state, match_alpha, rate_law, squeezed_coherent_state

eta = 0.01
alpha_m = match_alpha(eta)
print(f"eta = {eta}: matched alpha = {alpha_m.real:.8f}, |alpha|^2 = {abs(alpha_m) ** 2:.3e}")

for alpha in np.linspace(0.05, 0.2, 7):
    g2 = g2_of_state(squeezed_coherent_state(alpha, eta))
    print(f"  alpha = {alpha:.3f}  g2 = {g2:.4f}")
print(f"  alpha = {alpha_m.real:.3f}  g2 = {g2_of_state(squeezed_coherent_state(alpha_m, eta)):.4f}  (matched)")

law = rate_law(RateParams(pair_rate=21.0, coherence_time=5e-9))
print(f"\n21 pairs/s, T_c = 5 ns: R1 = {law.single_rate:.4g} /s, g2 floor = {law.g2_floor:.3e}")
