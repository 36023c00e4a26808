"""kpzlab: a numerical laboratory for weakly asymmetric growth models.

Polynomial smoothing mechanisms, compensated Poisson shot noise, Poisson
Malliavin/chaos calculus, renormalization constants, an exponential-Euler
growth solver, a Cole-Hopf KPZ reference sampler, and the model-object
scaling checks, all behind one seeded, reproducible harness.
"""

from .config import RunConfig
from .fields import (CouplingEstimate, Nonlinearity, RenormTable, coupling_limit,
                     coupling_mc, free_field, malliavin_profile, noise_profile,
                     renorm_constants, resolve_nonlinearity)
from .grids import GridSpec, SpaceTimeField
from .harness import RunRecord, run_experiment
from .noise import (Mollifier, PointCloud, bump_mollifier, gaussian_mollifier,
                    periodize_mollifier, sample_cloud, synthesize_noise)
from .smoothing import (BoundReport, KernelPair, MultiplierFamily, PolynomialSmoothing,
                        decompose_kernel, greens_function, make_family,
                        validate_smoothing, verify_kernel_bounds)

__version__ = "0.1.0"
