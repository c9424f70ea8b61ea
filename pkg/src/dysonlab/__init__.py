"""Dyson's model and the sine-2 point process: samplers, integrators and estimators."""

__version__ = "0.1.0"

from .kernel import KernelSpec, correlation_m, sine_kernel  # noqa: E402
from .rng import SamplerSeed  # noqa: E402

__all__ = ["KernelSpec", "SamplerSeed", "correlation_m", "sine_kernel", "__version__"]
