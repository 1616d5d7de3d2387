# The degenerate reaction R(u) = u^2 and its regularization
# R_gamma(u) = max(u^2, delta0 * gamma * u) on [0, 1].
import numpy as np

from lscheme_homog import GammaSchedule, ReactionSpec, gamma_value, regularization_gap, sampled_gap
from lscheme_homog.reaction import loglog_slope

spec = ReactionSpec()
sched = GammaSchedule.geometric(spec.p)

# gamma_k = 1/2^(k+2); the sampled gap is s^2/4 against the bound s^2/2.
for k in range(1, 6):
    g = gamma_value(sched, k)
    print(f"k={k}  gamma={g:.5f}  sup|R - R_g|={sampled_gap(spec, g):.3e}  bound={regularization_gap(spec, g):.3e}")

gammas = np.array([gamma_value(sched, k) for k in range(1, 11)])
gaps = [sampled_gap(spec, g) for g in gammas]
print(f"gap ~ gamma^{loglog_slope(gammas, gaps):.3f}  (sigma = {spec.sigma})")

# The harmonic schedule decays only like 1/k, which is slow enough for the
# max-norm stability bound.
print([round(gamma_value(GammaSchedule.harmonic(1.0), k), 4) for k in range(1, 8)])
