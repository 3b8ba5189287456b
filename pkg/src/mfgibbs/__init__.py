"""Gibbsianness of transformed mean-field models.

Solves the constrained mean-field fixed-point equation of a two-layer
spin system, evaluates the associated rate functions and potentials,
certifies uniqueness through contraction constants, computes the limiting
single-site kernel of the transformed system and checks it against exact
finite-volume sums.
"""

from .cflm import (
    ConstrainedState,
    Model,
    cflpk_apply,
    consistency_residual,
    fixed_point,
    initial_fixed_point,
    initial_gamma1,
    initial_rate,
    j_constrained,
    multistart,
    psi,
    psi_homogeneous,
    transformed_interaction,
    transformed_rate,
)
from .errors import *  # noqa: F401,F403
from .gibbs import Certificate, bad_point_scan, certify, continuity_check, gamma1_prime
from .interaction import Interaction, InteractionConstants, compute_constants, quadratic_interaction
from .kernels import (
    Kernel,
    circle_heat_kernel,
    coarse_grain_kernel,
    heat_kernel,
    rho_alpha,
    rho_alpha_k,
    sphere_heat_kernel,
    spin_flip_kernel,
)
from .models import coarse_grain_preset, ising_pspin, rotator, rotator_L
from .oracle import (
    FiniteNSpec,
    convergence_study,
    grid_minimize_psi_tau,
    ising_brute_force,
    ising_exact_conditional,
)
from .spinspace import (
    Measure,
    SpinSpace,
    make_circle,
    make_ising_space,
    make_sphere,
    relative_entropy,
    tau_measure,
    variational_distance,
)

__version__ = "0.1.0"
