"""Counting statistics of Poisson versus sine-2.

For Poisson the variance of the count in [-R, R] grows like 2R and the
exterior says nothing about the interior.  For sine-2 it grows like
log(R)/pi^2, and a linear regression on smoothed exterior counts explains
most of the interior fluctuation (number rigidity).
"""
import math

import numpy as np

from dysonlab import KernelSpec, SamplerSeed
from dysonlab.kernel import count_variance
from dysonlab.observables import counting_variance_curve, rigidity_statistic
from dysonlab.sampling import sample_ensemble

spec = KernelSpec()
seed = SamplerSeed(11)
win = (-15.0, 15.0)
sine = sample_ensemble("dpp", 800, win, seed.replica(0), spec)
pois = sample_ensemble("poisson", 800, win, seed.replica(1), intensity=1.0)

radii = np.array([1.0, 2.0, 4.0, 8.0])
vs, vp = counting_variance_curve(sine, radii), counting_variance_curve(pois, radii)
print(f"{'R':>4} {'sine':>14} {'exact':>7} {'Poisson':>14}")
for k, R in enumerate(radii):
    print(f"{R:4.0f} {vs.value[k]:7.3f}+-{vs.stderr[k]:.3f} {count_variance(2 * R, spec):7.3f} "
          f"{vp.value[k]:7.3f}+-{vp.stderr[k]:.3f}")
print(f"log-law increment per doubling: {math.log(2) / math.pi**2:.3f}")

widths = [1.0, 2.0, 4.0, 8.0, 12.0]
rs = rigidity_statistic(sine, (-3.0, 3.0), widths).extra["ratio"]
rp = rigidity_statistic(pois, (-3.0, 3.0), widths).extra["ratio"]
print("\nunexplained / raw variance of the count in [-3, 3]")
for w, a, b in zip(widths, rs, rp):
    print(f"  taper width {w:4.0f}: sine {a:.3f}   Poisson {b:.3f}")
