"""Numerical Volterra rough paths: kernels, sewing, lifts, convolution products,
controlled paths, a rough Volterra equation solver and Brownian lifts."""

from .brownian import BrownianBatch, MCStat, chen_exact_check, lp_bound_check, sample_lift
from .controlled import ControlledPath, VectorField, compose, remainder, rough_integral
from .convolution import chen_residual, conv1, conv2, extend, extend_values
from .grid import SimplexGrid, make_uniform, refine, simplex3_size
from .hoelder import HoelderPair, HoelderReport, estimate_norms, estimate_sewing_norms
from .kernel import HReport, VolterraKernel, verify_h
from .lift import (DrivingPath, LazyLevel, SmoothLevel, VolterraLevel, gamma_bound_check,
                   lift_level1, smooth_signature)
from .sewing import SewingResult, check_decay, delta, sew
from .solver import Solution, SolveConfig, convergence_study, picard_iterate, solve

__version__ = "0.1.0"
