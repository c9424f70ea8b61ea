"""Subdiffusion of a tagged particle in the truncated infinite system.

A free Brownian particle has MSD(t) = t.  In the sine-2 gas the middle
particle is hemmed in by its neighbours and its MSD grows only like
log(t)/(pi rho)^2 at large times, until the finite frozen exterior saturates it.
"""
import math

from dysonlab import SamplerSeed
from dysonlab.acceptance import msd_experiment

est, lam = msd_experiment(64, 100.0, 40, SamplerSeed(5))
print(f"measured intensity {lam:.3f}; (pi*lambda)^-2 = {(math.pi * lam) ** -2:.4f}")
print(f"{'t':>6} {'MSD':>16} {'MSD/t':>8}")
for t, m, s in zip(est.abscissa, est.value, est.stderr):
    print(f"{t:6.0f} {m:8.4f}+-{s:.4f} {m / t:8.5f}")
print("free Brownian motion would give MSD/t = 1")
